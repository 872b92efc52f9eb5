"""BPR matrix factorisation with uniform, popularity-based and score-adaptive
negative sampling.

The model can score pairs either by the plain inner product or by the
cross-prediction form ``q(u).v + u.q(v)`` used for the scoring ablation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .model import PredictorParams
from .optim import AdamState, OptimizerConfig, SparseRows, adam_step

STRATEGIES = ("uniform", "static_global", "adaptive_contextual")
SCORE_MODES = ("inner_product", "cross_prediction")


@dataclass(frozen=True)
class SamplerConfig:
    strategy: str = "uniform"
    negatives_per_positive: int = 1
    candidate_pool: int = 32

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown sampling strategy {self.strategy!r}")
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be >= 1")
        if self.candidate_pool < 1:
            raise ValueError("candidate_pool must be >= 1")


@dataclass
class BprModel:
    user: np.ndarray
    item: np.ndarray
    score_mode: str = "inner_product"
    predictor: PredictorParams | None = None

    def __post_init__(self):
        if self.score_mode not in SCORE_MODES:
            raise ValueError(f"unknown score mode {self.score_mode!r}")
        if self.score_mode == "cross_prediction" and self.predictor is None:
            raise ValueError("cross_prediction scoring needs a predictor")
        if self.score_mode == "inner_product":
            self.predictor = None

    @classmethod
    def init(cls, num_users, num_items, dim, rng, score_mode="inner_product") -> BprModel:
        std = 1.0 / np.sqrt(dim)
        user = rng.normal(0.0, std, (num_users, dim))
        item = rng.normal(0.0, std, (num_items, dim))
        pred = PredictorParams.xavier(dim, rng) if score_mode == "cross_prediction" else None
        return cls(user, item, score_mode, pred)

    @property
    def dim(self) -> int:
        return self.user.shape[1]

    @property
    def num_users(self) -> int:
        return self.user.shape[0]

    @property
    def num_items(self) -> int:
        return self.item.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        out = {"user": self.user, "item": self.item}
        if self.predictor is not None:
            out["weight"] = self.predictor.weight
            out["bias"] = self.predictor.bias
        return out

    def copy(self) -> BprModel:
        return BprModel(self.user.copy(), self.item.copy(), self.score_mode,
                        None if self.predictor is None else self.predictor.copy())

    def pair_scores(self, users, items) -> np.ndarray:
        """Scores for broadcastable index arrays ``users`` and ``items``."""
        users, items = np.broadcast_arrays(np.asarray(users), np.asarray(items))
        u, v = self.user[users], self.item[items]
        if self.predictor is None:
            return np.einsum("...d,...d->...", u, v)
        w, b = self.predictor.weight, self.predictor.bias
        return np.einsum("...d,...d->...", u @ w.T + b, v) + np.einsum("...d,...d->...", u, v @ w.T + b)

    def scorer(self, adj=None):
        if self.predictor is None:
            return lambda users: self.user[np.asarray(users)] @ self.item.T
        w, b = self.predictor.weight, self.predictor.bias
        item_pred = self.item @ w.T + b

        def score(users):
            u = self.user[np.asarray(users)]
            return (u @ w.T + b) @ self.item.T + u @ item_pred.T

        return score


def bpr_loss(score_pos, score_neg):
    """``-ln sigmoid(score_pos - score_neg)``, computed as a softplus."""
    return np.logaddexp(0.0, -(np.asarray(score_pos, dtype=np.float64) - score_neg))


class AliasTable:
    """Walker/Vose alias method for O(1) draws from a fixed discrete law."""

    def __init__(self, weights):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0 or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("alias weights must be non-negative with positive sum")
        n = w.size
        scaled = w * (n / w.sum())
        self.prob = np.ones(n)
        self.alias = np.arange(n)
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            s, l = small.pop(), large.pop()
            self.prob[s] = scaled[s]
            self.alias[s] = l
            scaled[l] -= 1.0 - scaled[s]
            (small if scaled[l] < 1.0 else large).append(l)
        # leftovers are 1 up to rounding

    def draw(self, size, rng: np.random.Generator) -> np.ndarray:
        col = rng.integers(0, self.prob.size, size)
        return np.where(rng.random(size) < self.prob[col], col, self.alias[col])


class NegativeSampler:
    """Draws items outside each user's training set.

    ``item_sets[u]`` are user ``u``'s training items; ``popularity`` defaults
    to the counts implied by ``item_sets``.
    """

    max_rounds = 64

    def __init__(self, item_sets, num_items: int, cfg: SamplerConfig, popularity=None):
        self.cfg = cfg
        self.num_items = num_items
        self.item_sets = [np.unique(np.asarray(s, dtype=np.int64)) for s in item_sets]
        self.counts = np.array([s.size for s in self.item_sets], dtype=np.int64)
        self.keys = np.sort(np.concatenate(
            [u * num_items + s for u, s in enumerate(self.item_sets)] or [np.empty(0, np.int64)]))
        if popularity is None:
            popularity = np.bincount(np.concatenate(self.item_sets or [np.empty(0, np.int64)]),
                                     minlength=num_items)
        self.popularity = np.asarray(popularity, dtype=np.float64)
        if self.popularity.shape != (num_items,):
            raise ValueError("popularity must have one entry per item")
        self.alias = AliasTable(self.popularity) if self.popularity.sum() > 0 else None

    @classmethod
    def from_dataset(cls, train, cfg: SamplerConfig) -> NegativeSampler:
        return cls(train.items_by_user(), train.num_items, cfg)

    def is_positive(self, users, items) -> np.ndarray:
        keys = np.asarray(users, dtype=np.int64) * self.num_items + np.asarray(items, dtype=np.int64)
        if self.keys.size == 0:
            return np.zeros(keys.shape, dtype=bool)
        pos = np.minimum(np.searchsorted(self.keys, keys), self.keys.size - 1)
        return self.keys[pos] == keys

    def _exact(self, user: int, rng, weighted: bool) -> int:
        allowed = np.setdiff1d(np.arange(self.num_items), self.item_sets[user], assume_unique=True)
        w = self.popularity[allowed] if weighted else None
        if w is not None and w.sum() <= 0:
            w = None
        return int(rng.choice(allowed, p=None if w is None else w / w.sum()))

    def _rejection(self, users: np.ndarray, rng, weighted: bool) -> np.ndarray:
        out = np.empty(users.size, dtype=np.int64)
        pending = np.arange(users.size)
        use_alias = weighted and self.alias is not None
        for _ in range(self.max_rounds):
            if pending.size == 0:
                return out
            if use_alias:
                cand = self.alias.draw(pending.size, rng)
            else:
                cand = rng.integers(0, self.num_items, pending.size)
            ok = ~self.is_positive(users[pending], cand)
            out[pending[ok]] = cand[ok]
            pending = pending[~ok]
        for i in pending:
            out[i] = self._exact(int(users[i]), rng, weighted)
        return out

    def sample(self, users, rng: np.random.Generator, scorer=None) -> np.ndarray:
        """One negative per entry of ``users``.

        ``scorer(users, items)`` (broadcasting, e.g. :meth:`BprModel.pair_scores`)
        is required by the adaptive strategy.
        """
        users = np.asarray(users, dtype=np.int64).reshape(-1)
        full = users[self.counts[users] >= self.num_items]
        if full.size:
            raise ValueError(f"user {int(full[0])} has interacted with every item; no negative exists")
        strategy = self.cfg.strategy
        if strategy == "uniform":
            return self._rejection(users, rng, weighted=False)
        if strategy == "static_global":
            return self._rejection(users, rng, weighted=True)
        if scorer is None:
            raise ValueError("adaptive_contextual sampling needs a scorer")
        pool = self.cfg.candidate_pool
        cand = self._rejection(np.repeat(users, pool), rng, weighted=False).reshape(users.size, pool)
        logits = np.asarray(scorer(users[:, None], cand), dtype=np.float64)
        logits = logits - logits.max(axis=1, keepdims=True)
        prob = np.exp(logits)
        cdf = np.cumsum(prob, axis=1)
        r = rng.random(users.size) * cdf[:, -1]
        pick = np.minimum((cdf < r[:, None]).sum(axis=1), pool - 1)
        return cand[np.arange(users.size), pick]


def sample_negative(user: int, train_items_of_user, cfg: SamplerConfig, popularity,
                    scorer=None, rng: np.random.Generator | None = None) -> int:
    """Single draw for one user. ``scorer(items) -> scores`` for the adaptive
    strategy; ``popularity`` has one count per item."""
    rng = np.random.default_rng() if rng is None else rng
    popularity = np.asarray(popularity, dtype=np.float64)
    sampler = NegativeSampler([train_items_of_user], popularity.size, cfg, popularity)
    wrapped = None if scorer is None else (lambda users, items: scorer(items))
    return int(sampler.sample(np.array([0]), rng, wrapped)[0])


def bpr_loss_gradients(model: BprModel, users, pos, neg):
    """Mean BPR loss over triples and its parameter gradients."""
    users = np.asarray(users, dtype=np.int64)
    pos = np.asarray(pos, dtype=np.int64)
    neg = np.asarray(neg, dtype=np.int64)
    diff = model.pair_scores(users, pos) - model.pair_scores(users, neg)
    loss = float(bpr_loss(diff, 0.0).mean())
    g = -expit(-diff) / users.size
    u, vp, vn = model.user[users], model.item[pos], model.item[neg]
    grads = {}
    if model.predictor is None:
        du = g[:, None] * (vp - vn)
        dv = g[:, None] * u
    else:
        w, b = model.predictor.weight, model.predictor.bias
        sym = w + w.T
        delta = g[:, None] * (vp - vn)
        du = delta @ sym
        dv = g[:, None] * (u @ sym + b)
        grads["weight"] = delta.T @ u + u.T @ delta
        grads["bias"] = delta.sum(axis=0)
    grads["user"] = SparseRows.accumulate(users, du)
    grads["item"] = SparseRows.accumulate(np.concatenate([pos, neg]), np.concatenate([dv, -dv]))
    return loss, grads


def bpr_train_step(model: BprModel, batch, sampler: NegativeSampler, state: AdamState,
                   opt: OptimizerConfig, rng: np.random.Generator) -> float:
    """Draw ``n`` negatives per positive pair, then one Adam step on the mean loss."""
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 2)
    n = sampler.cfg.negatives_per_positive
    users = np.repeat(batch[:, 0], n)
    pos = np.repeat(batch[:, 1], n)
    scorer = model.pair_scores if sampler.cfg.strategy == "adaptive_contextual" else None
    neg = sampler.sample(users, rng, scorer)
    loss, grads = bpr_loss_gradients(model, users, pos, neg)
    adam_step(model.params(), grads, state, opt)
    return loss
