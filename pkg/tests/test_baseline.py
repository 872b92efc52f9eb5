import itertools

import numpy as np
import pytest

from buir.baseline import (AliasTable, BprModel, NegativeSampler, SamplerConfig, bpr_loss, bpr_loss_gradients,
                           bpr_train_step, sample_negative)
from buir.data import from_pairs
from buir.model import PredictorParams
from buir.optim import AdamState, OptimizerConfig, SparseRows
from helpers import central_diff, max_rel_err


def within_3_sigma(counts, probs):
    total = counts.sum()
    sigma = np.sqrt(total * probs * (1 - probs))
    return np.all(np.abs(counts - total * probs) <= 3 * np.maximum(sigma, 1e-12))


class TestLoss:
    def test_equal_scores(self):
        assert bpr_loss(0.3, 0.3) == pytest.approx(np.log(2), abs=1e-12)

    def test_unit_margin(self):
        assert bpr_loss(1.0, 0.0) == pytest.approx(0.313262, abs=1e-6)

    def test_asymptote(self):
        assert bpr_loss(1e4, 0.0) == 0.0
        assert bpr_loss(-1e4, 0.0) == pytest.approx(1e4)


class TestSamplers:
    @pytest.mark.parametrize("strategy", ["uniform", "static_global", "adaptive_contextual"])
    def test_single_candidate(self, strategy, rng):
        pop = np.array([5.0, 1.0, 9.0])
        for _ in range(50):
            v = sample_negative(0, [0, 2], SamplerConfig(strategy, candidate_pool=4), pop,
                                scorer=lambda items: np.asarray(items, float), rng=rng)
            assert v == 1

    def test_every_item_positive(self, rng):
        with pytest.raises(ValueError, match="every item"):
            sample_negative(0, [0, 1], SamplerConfig(), [1.0, 1.0], rng=rng)

    def test_uniform_frequencies(self):
        rng = np.random.default_rng(11)
        s = NegativeSampler([[0, 5]], 6, SamplerConfig("uniform"))
        draws = s.sample(np.zeros(100_000, dtype=int), rng)
        counts = np.bincount(draws, minlength=6)
        assert counts[0] == counts[5] == 0
        assert within_3_sigma(counts[1:5], np.full(4, 0.25))

    def test_popularity_frequencies(self):
        rng = np.random.default_rng(12)
        pop = np.array([10.0, 30.0, 50.0])
        s = NegativeSampler([[2]], 3, SamplerConfig("static_global"), popularity=pop)
        counts = np.bincount(s.sample(np.zeros(100_000, dtype=int), rng), minlength=3)
        assert counts[2] == 0
        assert within_3_sigma(counts[:2], np.array([0.25, 0.75]))

    def test_alias_table_law(self):
        rng = np.random.default_rng(13)
        w = np.array([1.0, 0.0, 2.0, 7.0])
        counts = np.bincount(AliasTable(w).draw(200_000, rng), minlength=4)
        assert counts[1] == 0
        assert within_3_sigma(counts, w / w.sum())

    def test_adaptive_matches_enumeration(self):
        # allowed items {1, 2, 4} for a user owning {0, 3}; pool of 4 drawn
        # uniformly with replacement, then one pick by softmax over the pool.
        allowed, pool = [1, 2, 4], 4
        scores = np.array([0.0, 0.5, -1.0, 0.0, 2.0])
        exact = np.zeros(5)
        for combo in itertools.product(allowed, repeat=pool):
            w = np.exp(scores[list(combo)])
            for item, wi in zip(combo, w):
                exact[item] += wi / w.sum()
        exact /= len(allowed) ** pool

        rng = np.random.default_rng(14)
        s = NegativeSampler([[0, 3]], 5, SamplerConfig("adaptive_contextual", candidate_pool=pool))
        draws = s.sample(np.zeros(100_000, dtype=int), rng, scorer=lambda u, items: scores[items])
        counts = np.bincount(draws, minlength=5)
        assert counts[0] == counts[3] == 0
        assert within_3_sigma(counts[allowed], exact[allowed])

    @pytest.mark.parametrize("strategy", ["uniform", "static_global", "adaptive_contextual"])
    def test_never_returns_a_positive(self, strategy):
        rng = np.random.default_rng(15)
        num_users, num_items = 50, 40
        mask = rng.random((num_users, num_items)) < 0.6
        mask[:, 0] = False
        sets = [np.flatnonzero(r) for r in mask]
        s = NegativeSampler(sets, num_items, SamplerConfig(strategy, candidate_pool=3))
        users = rng.integers(0, num_users, 1_000_000)
        item_scores = rng.normal(size=num_items)
        neg = s.sample(users, rng, scorer=lambda u, items: item_scores[items])
        assert not mask[users, neg].any()

    def test_exact_fallback_when_rejection_starves(self):
        # one free item among 10000 forces the fallback path
        rng = np.random.default_rng(16)
        s = NegativeSampler([np.arange(1, 10_000)], 10_000, SamplerConfig())
        assert s.sample(np.zeros(20, dtype=int), rng).tolist() == [0] * 20

    def test_adaptive_needs_scorer(self, rng):
        s = NegativeSampler([[0]], 3, SamplerConfig("adaptive_contextual"))
        with pytest.raises(ValueError):
            s.sample([0], rng)


def random_bpr(rng, mode, m=3, n=5, d=4):
    model = BprModel.init(m, n, d, rng, mode)
    if model.predictor is not None:
        model.predictor.bias[:] = rng.normal(scale=0.3, size=d)
    return model


class TestGradients:
    @pytest.mark.parametrize("mode", ["inner_product", "cross_prediction"])
    def test_finite_differences(self, rng, mode):
        for _ in range(20):
            model = random_bpr(rng, mode)
            users = rng.integers(0, 3, 3)
            pos = rng.integers(0, 5, 3)
            neg = (pos + rng.integers(1, 5, 3)) % 5
            _, grads = bpr_loss_gradients(model, users, pos, neg)
            params = model.params()
            numeric = central_diff(lambda: bpr_loss_gradients(model, users, pos, neg)[0], list(params.values()))
            for (k, p), num in zip(params.items(), numeric):
                g = grads[k].to_dense(p.shape) if isinstance(grads[k], SparseRows) else grads[k]
                assert max_rel_err(g, num) < 1e-4, k

    def test_duplicate_negative_mean(self, rng):
        model = random_bpr(rng, "inner_product")
        l1, g1 = bpr_loss_gradients(model, [1], [2], [4])
        l2, g2 = bpr_loss_gradients(model, [1, 1], [2, 2], [4, 4])
        assert l1 == pytest.approx(l2, abs=1e-15)
        for k in g1:
            np.testing.assert_allclose(g1[k].to_dense((5, 4)), g2[k].to_dense((5, 4)), rtol=1e-14)

    def test_saturated_step_is_tiny(self):
        user = np.array([[10.0, 0.0]])
        item = np.array([[10.0, 0.0], [-10.0, 0.0]])
        model = BprModel(user, item)
        loss, grads = bpr_loss_gradients(model, [0], [0], [1])
        assert loss < 1e-80
        assert np.abs(grads["user"].values).max() < 1e-80

    def test_scorer_matches_pair_scores(self, rng):
        for mode in ("inner_product", "cross_prediction"):
            model = random_bpr(rng, mode)
            full = model.scorer()([0, 2])
            pair = model.pair_scores(np.array([[0], [2]]), np.arange(5)[None, :])
            np.testing.assert_allclose(full, pair, rtol=1e-12)

    def test_cross_prediction_matches_buir_score(self, rng):
        from buir.model import interaction_score

        model = random_bpr(rng, "cross_prediction")
        want = interaction_score(model.user[1], model.item[3], model.predictor)
        assert model.pair_scores(1, 3) == pytest.approx(want, rel=1e-12)


def test_train_step_runs_and_learns():
    rng = np.random.default_rng(17)
    data = from_pairs([0, 0, 1, 1], [0, 1, 2, 3], 2, 4)
    model = BprModel.init(2, 4, 4, rng)
    sampler = NegativeSampler.from_dataset(data, SamplerConfig(negatives_per_positive=2))
    state = AdamState.for_params(model.params())
    first = bpr_train_step(model, data.pairs, sampler, state, OptimizerConfig(learning_rate=0.05), rng)
    for _ in range(200):
        last = bpr_train_step(model, data.pairs, sampler, state, OptimizerConfig(learning_rate=0.05), rng)
    assert last < first and state.t == 201


def test_predictor_dropped_for_inner_product():
    m = BprModel(np.ones((1, 2)), np.ones((1, 2)), "inner_product", PredictorParams.identity(2))
    assert m.predictor is None and set(m.params()) == {"user", "item"}
