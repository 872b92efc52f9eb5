"""Bootstrapped dual-encoder model: online encoder + predictor trained to
predict a momentum-averaged target encoder, with no negative sampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import BipartiteAdjacency
from .encoder import (AugmentConfig, AugmentedNeighborhood, EmbeddingTable, LgcnConfig,
                      Propagation, propagate, sample_augmentation)
from .errors import DegenerateNormError
from .evaluation import top_k
from .optim import AdamState, OptimizerConfig, SparseRows, adam_step

_logger = logging.getLogger(__name__)

NORM_EPS = 1e-12


@dataclass
class PredictorParams:
    """Affine map ``x -> weight @ x + bias``."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        d = self.bias.shape[0]
        if self.weight.shape != (d, d) or self.bias.ndim != 1:
            raise ValueError(f"predictor needs a DxD weight and a D bias, got {self.weight.shape}, {self.bias.shape}")

    @property
    def dim(self) -> int:
        return self.bias.shape[0]

    @classmethod
    def identity(cls, dim: int) -> PredictorParams:
        return cls(np.eye(dim), np.zeros(dim))

    @classmethod
    def xavier(cls, dim: int, rng: np.random.Generator) -> PredictorParams:
        limit = np.sqrt(6.0 / (dim + dim))
        return cls(rng.uniform(-limit, limit, (dim, dim)), np.zeros(dim))

    def copy(self) -> PredictorParams:
        return PredictorParams(self.weight.copy(), self.bias.copy())


def predict(q: PredictorParams, x: np.ndarray) -> np.ndarray:
    """Apply the predictor to one vector or a batch of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != q.dim:
        raise ValueError(f"input has dimension {x.shape[-1]}, predictor expects {q.dim}")
    return x @ q.weight.T + q.bias


@dataclass
class BuirModel:
    online: EmbeddingTable
    predictor: PredictorParams
    target: EmbeddingTable
    encoder: str = "id"
    lgcn: LgcnConfig = field(default_factory=LgcnConfig)

    def __post_init__(self):
        if self.encoder not in ("id", "lgcn"):
            raise ValueError(f"encoder must be 'id' or 'lgcn', got {self.encoder!r}")
        if (self.online.user.shape != self.target.user.shape
                or self.online.item.shape != self.target.item.shape):
            raise ValueError("online and target tables must have identical shapes")
        if self.predictor.dim != self.online.dim:
            raise ValueError("predictor dimension does not match the embedding tables")

    @classmethod
    def init(cls, num_users: int, num_items: int, dim: int, rng: np.random.Generator,
             encoder: str = "id", lgcn: LgcnConfig | None = None) -> BuirModel:
        """Gaussian tables (std 1/sqrt(D)); target starts as an exact copy;
        Xavier-uniform predictor weight with zero bias."""
        online = EmbeddingTable.random(num_users, num_items, dim, rng)
        predictor = PredictorParams.xavier(dim, rng)
        return cls(online, predictor, online.copy(), encoder, lgcn or LgcnConfig())

    @property
    def dim(self) -> int:
        return self.online.dim

    @property
    def num_users(self) -> int:
        return self.online.num_users

    @property
    def num_items(self) -> int:
        return self.online.num_items

    def params(self) -> dict[str, np.ndarray]:
        """Trainable (online) parameters by name."""
        return {"user": self.online.user, "item": self.online.item,
                "weight": self.predictor.weight, "bias": self.predictor.bias}

    def copy(self) -> BuirModel:
        return BuirModel(self.online.copy(), self.predictor.copy(), self.target.copy(),
                         self.encoder, self.lgcn)

    def representations(self, adj: BipartiteAdjacency | None = None,
                        table: EmbeddingTable | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Encoder outputs over the full (unaugmented) graph."""
        table = self.online if table is None else table
        if self.encoder == "id":
            return table.user, table.item
        if adj is None:
            raise ValueError("the lgcn encoder needs an adjacency")
        return propagate(table.user, table.item, Propagation(adj), self.lgcn.num_layers)

    def scorer(self, adj: BipartiteAdjacency | None = None):
        """Return ``score(users) -> (len(users), N)`` from the online encoder."""
        user_repr, item_repr = self.representations(adj)
        item_pred = predict(self.predictor, item_repr)

        def score(users):
            u = user_repr[np.asarray(users)]
            return predict(self.predictor, u) @ item_repr.T + u @ item_pred.T

        return score


@dataclass(frozen=True)
class TrainConfig:
    momentum_tau: float = 0.995
    batch_size: int = 1024
    max_epochs: int = 500
    early_stop_patience: int = 50
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if not 0.0 <= self.momentum_tau <= 1.0:
            raise ValueError("momentum_tau must lie in [0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 0 or self.early_stop_patience < 0:
            raise ValueError("max_epochs and early_stop_patience must be >= 0")


def _norms(x: np.ndarray, what: str) -> np.ndarray:
    n = np.linalg.norm(x, axis=-1)
    bad = np.flatnonzero(np.atleast_1d(n) < NORM_EPS)
    if bad.size:
        raise DegenerateNormError(
            f"{what} has norm below {NORM_EPS:g} at batch position(s) {bad[:5].tolist()}; "
            "representations may have collapsed")
    return n


def _neg_cos_and_grad(a: np.ndarray, b: np.ndarray, a_name: str, b_name: str):
    """Per-row ``-cos(a, b)`` and its gradient with respect to ``a``."""
    na = _norms(a, a_name)[:, None]
    nb = _norms(b, b_name)[:, None]
    a_hat, b_hat = a / na, b / nb
    cos = np.sum(a_hat * b_hat, axis=1)
    grad = -(b_hat - cos[:, None] * a_hat) / na
    return -cos, grad


def _pair_terms(ou, ov, tu, tv, q: PredictorParams):
    _norms(ou, "online user")
    _norms(ov, "online item")
    pu, pv = predict(q, ou), predict(q, ov)
    l1, g1 = _neg_cos_and_grad(pu, tv, "predicted user", "target item")
    l2, g2 = _neg_cos_and_grad(pv, tu, "predicted item", "target user")
    return l1 + l2, g1, g2


def buir_loss(online_u, online_v, target_u, target_v, q: PredictorParams) -> float:
    """``-cos(q(online_u), target_v) - cos(q(online_v), target_u)``."""
    rows = [np.atleast_2d(np.asarray(x, dtype=np.float64)) for x in (online_u, online_v, target_u, target_v)]
    loss, _, _ = _pair_terms(*rows, q)
    return float(loss.mean())


def _batch_gradients(model: BuirModel, pairs: np.ndarray,
                     adj: BipartiteAdjacency | None, aug: AugmentedNeighborhood | None):
    users, items = pairs[:, 0], pairs[:, 1]
    q = model.predictor
    if model.encoder == "lgcn":
        if adj is None:
            raise ValueError("the lgcn encoder needs an adjacency")
        prop = Propagation(adj, None if aug is None else aug.edge_mask)
        k = model.lgcn.num_layers
        on_u, on_i = propagate(model.online.user, model.online.item, prop, k)
        tg_u, tg_i = propagate(model.target.user, model.target.item, prop, k)
    else:
        prop = None
        on_u, on_i = model.online.user, model.online.item
        tg_u, tg_i = model.target.user, model.target.item

    ou, ov = on_u[users], on_i[items]
    loss, g1, g2 = _pair_terms(ou, ov, tg_u[users], tg_i[items], q)
    batch = pairs.shape[0]
    g1 /= batch
    g2 /= batch
    grad_ou = g1 @ q.weight
    grad_ov = g2 @ q.weight
    grads = {
        "weight": g1.T @ ou + g2.T @ ov,
        "bias": g1.sum(axis=0) + g2.sum(axis=0),
    }
    if prop is None:
        grads["user"] = SparseRows.accumulate(users, grad_ou)
        grads["item"] = SparseRows.accumulate(items, grad_ov)
    else:
        full_u = np.zeros_like(on_u)
        full_i = np.zeros_like(on_i)
        np.add.at(full_u, users, grad_ou)
        np.add.at(full_i, items, grad_ov)
        grads["user"], grads["item"] = propagate(full_u, full_i, prop, model.lgcn.num_layers)
    return float(loss.mean()), grads


def buir_loss_gradients(pairs, model: BuirModel, adj: BipartiteAdjacency | None = None,
                        aug: AugmentedNeighborhood | None = None):
    """Batch-mean loss and its gradient with respect to the online parameters.

    Table gradients are :class:`SparseRows` for the ID encoder and dense
    arrays for the LGCN encoder. The target encoder is a constant here.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.shape[0] == 0:
        raise ValueError("empty batch")
    return _batch_gradients(model, pairs, adj, aug)


def momentum_update(target: EmbeddingTable, online: EmbeddingTable, tau: float) -> None:
    """``target <- tau * target + (1 - tau) * online``, in place."""
    if target.user.shape != online.user.shape or target.item.shape != online.item.shape:
        raise ValueError("target and online tables differ in shape")
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    target.user[...] = tau * target.user + (1.0 - tau) * online.user
    target.item[...] = tau * target.item + (1.0 - tau) * online.item


def interaction_score(online_u, online_v, q: PredictorParams) -> float:
    """Cross-prediction score ``q(u).v + u.q(v)``; deliberately unnormalised."""
    u = np.asarray(online_u, dtype=np.float64)
    v = np.asarray(online_v, dtype=np.float64)
    return float(predict(q, u) @ v + u @ predict(q, v))


def train_step(model: BuirModel, batch, state: AdamState, cfg: TrainConfig,
               opt: OptimizerConfig, adj: BipartiteAdjacency | None = None,
               rng: np.random.Generator | None = None) -> float:
    """One optimisation step; returns the batch loss before the update.

    Augmentation (LGCN only) draws a single edge mask shared by the online
    and target encoders for the whole batch.
    """
    aug = None
    if model.encoder == "lgcn" and cfg.augment.enabled:
        if rng is None or adj is None:
            raise ValueError("augmented lgcn training needs an adjacency and a generator")
        aug = sample_augmentation(adj, cfg.augment, rng)
    loss, grads = buir_loss_gradients(batch, model, adj, aug)
    adam_step(model.params(), grads, state, opt)
    momentum_update(model.target, model.online, cfg.momentum_tau)
    return loss


def recommend_topk(model: BuirModel, user: int, k: int, exclude=(),
                   adj: BipartiteAdjacency | None = None) -> list[int]:
    if not 0 <= user < model.num_users:
        raise IndexError(f"user {user} out of range")
    scores = model.scorer(adj)([user])[0]
    return top_k(scores, k, exclude).tolist()
