import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from buir.data import build_adjacency, from_pairs
from buir.encoder import AugmentConfig, AugmentedNeighborhood, EmbeddingTable, LgcnConfig
from buir.errors import DegenerateNormError
from buir.model import (BuirModel, PredictorParams, TrainConfig, buir_loss, buir_loss_gradients,
                        interaction_score, momentum_update, predict, recommend_topk, train_step)
from buir.optim import AdamState, OptimizerConfig, SparseRows
from helpers import central_diff, max_rel_err

I2 = PredictorParams.identity(2)


def dense_grads(grads, model):
    out = {}
    for k, g in grads.items():
        out[k] = g.to_dense(model.params()[k].shape) if isinstance(g, SparseRows) else g
    return out


class TestPredict:
    def test_identity(self):
        assert predict(I2, [1.0, 2.0]).tolist() == [1.0, 2.0]

    def test_zero_weight(self):
        q = PredictorParams(np.zeros((2, 2)), np.array([3.0, 3.0]))
        assert predict(q, [7.0, -1.0]).tolist() == [3.0, 3.0]

    def test_affine(self):
        q = PredictorParams(np.array([[1.0, 1.0], [0.0, 1.0]]), np.array([0.0, 1.0]))
        assert predict(q, [1.0, 1.0]).tolist() == [2.0, 2.0]

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            predict(I2, [1.0, 2.0, 3.0])


class TestLoss:
    def test_aligned(self):
        e1, e2 = [1.0, 0.0], [0.0, 1.0]
        assert buir_loss(e1, e2, e2, e1, I2) == pytest.approx(-2.0, abs=1e-15)

    def test_orthogonal(self):
        e1, e2 = [1.0, 0.0], [0.0, 1.0]
        assert buir_loss(e1, e2, e1, e2, I2) == pytest.approx(0.0, abs=1e-15)

    def test_half_aligned(self):
        loss = buir_loss([1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0], I2)
        assert loss == pytest.approx(-0.70711, abs=1e-5)

    def test_degenerate_norm(self):
        with pytest.raises(DegenerateNormError):
            buir_loss([0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 0.0], I2)
        with pytest.raises(DegenerateNormError):
            buir_loss([1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [1.0, 0.0], I2)

    def test_mse_identity(self, rng):
        a, b = rng.normal(size=(1000, 8)), rng.normal(size=(1000, 8))
        for x, y in zip(a, b):
            ah, bh = x / np.linalg.norm(x), y / np.linalg.norm(y)
            cos = -buir_loss(x, [1.0] * 8, [1.0] * 8, y, PredictorParams.identity(8)) - 1.0
            assert abs((2 - 2 * cos) - np.sum((ah - bh) ** 2)) < 1e-10

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (4, 3), elements=st.floats(-5, 5)), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
    def test_scale_invariance_in_target(self, vecs, c1, c2):
        if np.any(np.linalg.norm(vecs, axis=1) < 1e-3):
            return
        q = PredictorParams.identity(3)
        base = buir_loss(vecs[0], vecs[1], vecs[2], vecs[3], q)
        scaled = buir_loss(vecs[0], vecs[1], c1 * vecs[2], c2 * vecs[3], q)
        assert scaled == pytest.approx(base, abs=1e-9)


def random_model(rng, m, n, d, encoder="id", layers=2):
    model = BuirModel.init(m, n, d, rng, encoder, LgcnConfig(layers))
    model.predictor.bias[:] = rng.normal(scale=0.3, size=d)
    model.target.user[:] = rng.normal(size=(m, d))
    model.target.item[:] = rng.normal(size=(n, d))
    return model


class TestGradients:
    def check(self, model, pairs, adj=None, aug=None):
        _, grads = buir_loss_gradients(pairs, model, adj, aug)
        params = model.params()
        names = list(params)

        def f():
            return buir_loss_gradients(pairs, model, adj, aug)[0]

        target_before = model.target.copy()
        numeric = central_diff(f, [params[k] for k in names])
        analytic = dense_grads(grads, model)
        for k, num in zip(names, numeric):
            assert max_rel_err(analytic[k], num) < 1e-4, k
        assert np.array_equal(model.target.user, target_before.user)

    def test_id_single_pair(self, rng):
        for _ in range(20):
            self.check(random_model(rng, 3, 4, 4), np.array([[int(rng.integers(3)), int(rng.integers(4))]]))

    def test_id_batch(self, rng):
        self.check(random_model(rng, 3, 4, 4), np.array([[0, 1], [2, 1], [0, 3], [0, 1]]))

    def test_lgcn(self, rng, toy_graph):
        adj = build_adjacency(toy_graph)
        for _ in range(20):
            model = random_model(rng, 4, 4, 3, "lgcn")
            mask = rng.random(adj.num_edges) < 0.7
            pairs = np.stack([adj.edge_users, adj.edge_items], axis=1)[rng.choice(adj.num_edges, 3)]
            self.check(model, pairs, adj, AugmentedNeighborhood(mask, 0.3))

    def test_duplicate_pair_mean(self, rng):
        model = random_model(rng, 3, 4, 4)
        l1, g1 = buir_loss_gradients([[1, 2]], model)
        l2, g2 = buir_loss_gradients([[1, 2], [1, 2]], model)
        assert l1 == pytest.approx(l2, abs=1e-15)
        d1, d2 = dense_grads(g1, model), dense_grads(g2, model)
        for k in d1:
            np.testing.assert_allclose(d1[k], d2[k], rtol=1e-14, atol=1e-16)

    def test_id_gradient_is_row_sparse(self, rng):
        model = random_model(rng, 5, 6, 3)
        _, g = buir_loss_gradients([[1, 2], [3, 2]], model)
        assert g["user"].indices.tolist() == [1, 3] and g["item"].indices.tolist() == [2]


class TestMomentum:
    def test_frozen(self, rng):
        online = EmbeddingTable.random(3, 4, 2, rng)
        target = EmbeddingTable.random(3, 4, 2, rng)
        before = target.copy()
        momentum_update(target, online, 1.0)
        assert np.array_equal(target.user, before.user) and np.array_equal(target.item, before.item)

    def test_copy(self, rng):
        online = EmbeddingTable.random(3, 4, 2, rng)
        target = EmbeddingTable.random(3, 4, 2, rng)
        momentum_update(target, online, 0.0)
        assert np.array_equal(target.user, online.user) and np.array_equal(target.item, online.item)

    def test_value(self):
        target = EmbeddingTable(np.ones((1, 1)), np.ones((1, 1)))
        online = EmbeddingTable(np.zeros((1, 1)), np.zeros((1, 1)))
        momentum_update(target, online, 0.995)
        assert target.user[0, 0] == 0.995


class TestScore:
    def test_examples(self):
        assert interaction_score([1.0, 0.0], [1.0, 0.0], I2) == 2.0
        assert interaction_score([1.0, 0.0], [0.0, 1.0], I2) == 0.0
        q = PredictorParams(np.array([[2.0, 0.0], [0.0, 1.0]]), np.zeros(2))
        assert interaction_score([1.0, 0.0], [1.0, 1.0], q) == 4.0

    def test_bilinear_without_bias(self, rng):
        q = PredictorParams(rng.normal(size=(3, 3)), np.zeros(3))
        u1, u2, v = rng.normal(size=(3, 3))
        lhs = interaction_score(2 * u1 - 3 * u2, v, q)
        rhs = 2 * interaction_score(u1, v, q) - 3 * interaction_score(u2, v, q)
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_scorer_matches_pointwise(self, rng):
        model = random_model(rng, 3, 5, 4)
        scores = model.scorer()([0, 2])
        for r, u in enumerate([0, 2]):
            for v in range(5):
                want = interaction_score(model.online.user[u], model.online.item[v], model.predictor)
                assert scores[r, v] == pytest.approx(want, rel=1e-12)


class TestTrainStep:
    def test_frozen_with_zero_gradient(self):
        # user and item rows equal, W = I, b = 0: both cosines are 1, gradient 0
        e = np.eye(2)
        model = BuirModel(EmbeddingTable(e.copy(), e.copy()), PredictorParams.identity(2),
                          EmbeddingTable(e.copy(), e.copy()))
        before = model.copy()
        state = AdamState.for_params(model.params())
        loss = train_step(model, [[0, 0], [1, 1]], state, TrainConfig(momentum_tau=1.0),
                          OptimizerConfig(weight_decay=0.0))
        assert loss == -2.0
        for k, p in before.params().items():
            assert np.array_equal(p, model.params()[k]), k
        assert np.array_equal(model.target.user, before.target.user)
        assert state.t == 1

    def test_ema_exact_after_step(self, rng):
        for encoder in ("id", "lgcn"):
            model = random_model(rng, 4, 4, 3, encoder)
            adj = build_adjacency(from_pairs([0, 1, 2, 3, 0], [0, 1, 2, 3, 3], 4, 4))
            prev_target = model.target.copy()
            tau = 0.9
            train_step(model, [[0, 0], [3, 3]], AdamState.for_params(model.params()),
                       TrainConfig(momentum_tau=tau), OptimizerConfig(learning_rate=0.05), adj, rng)
            assert np.array_equal(model.target.user, tau * prev_target.user + (1 - tau) * model.online.user)
            assert np.array_equal(model.target.item, tau * prev_target.item + (1 - tau) * model.online.item)

    def test_small_step_decreases_loss(self, rng):
        model = random_model(rng, 4, 5, 3)
        batch = np.array([[0, 1], [2, 3], [3, 4]])
        before, _ = buir_loss_gradients(batch, model)
        train_step(model, batch, AdamState.for_params(model.params()), TrainConfig(momentum_tau=1.0),
                   OptimizerConfig(learning_rate=1e-3, weight_decay=0.0))
        after, _ = buir_loss_gradients(batch, model)
        assert after < before

    def test_lgcn_needs_generator(self, rng, toy_graph):
        model = random_model(rng, 4, 4, 3, "lgcn")
        with pytest.raises(ValueError):
            train_step(model, [[0, 0]], AdamState.for_params(model.params()), TrainConfig(),
                       OptimizerConfig(), build_adjacency(toy_graph), None)

    def test_lgcn_without_augmentation_is_deterministic(self, rng, toy_graph):
        adj = build_adjacency(toy_graph)
        model = random_model(rng, 4, 4, 3, "lgcn")
        twin = model.copy()
        cfg = TrainConfig(augment=AugmentConfig(enabled=False))
        for m in (model, twin):
            train_step(m, [[0, 0], [1, 2]], AdamState.for_params(m.params()), cfg, OptimizerConfig(), adj,
                       np.random.default_rng(int(rng.integers(1 << 30))))
        assert np.array_equal(model.online.user, twin.online.user)


class TestRecommend:
    def scripted(self, item_scores):
        # W = 0, b = 1 and user row 0 = 1 gives score(v) = sum(item_v) + sum(u)
        n = len(item_scores)
        item = np.zeros((n, 2))
        item[:, 0] = item_scores
        return BuirModel(EmbeddingTable(np.zeros((1, 2)), item),
                         PredictorParams(np.zeros((2, 2)), np.ones(2)),
                         EmbeddingTable(np.zeros((1, 2)), item.copy()))

    def test_sort_with_exclusion(self):
        model = self.scripted([5.0, 0.5, 0.9])
        assert recommend_topk(model, 0, 2, exclude={0}) == [2, 1]

    def test_ties_favour_smaller_index(self):
        s = np.zeros(10)
        s[4] = s[7] = 1.0
        assert recommend_topk(self.scripted(s), 0, 2) == [4, 7]

    def test_too_large_k(self):
        with pytest.raises(ValueError):
            recommend_topk(self.scripted([1.0, 2.0]), 0, 2, exclude=[0])

    def test_brute_force(self, rng):
        model = random_model(rng, 10, 20, 4)
        for u in range(10):
            excl = set(rng.choice(20, 5, replace=False).tolist())
            got = recommend_topk(model, u, 8, exclude=excl)
            scores = [interaction_score(model.online.user[u], model.online.item[v], model.predictor)
                      for v in range(20)]
            want = sorted((v for v in range(20) if v not in excl), key=lambda v: (-scores[v], v))[:8]
            assert got == want
