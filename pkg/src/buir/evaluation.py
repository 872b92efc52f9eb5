"""All-item top-K evaluation (precision and NDCG), early stopping and
multi-seed aggregation."""

from __future__ import annotations

import json
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import build_adjacency

METRICS = ("P", "N")


def top_k(scores: np.ndarray, k: int, exclude=()) -> np.ndarray:
    """Indices of the ``k`` best-scoring items not in ``exclude``.

    Ties go to the smaller item index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    exclude = np.asarray(list(exclude) if not isinstance(exclude, np.ndarray) else exclude, dtype=np.int64)
    candidates = np.ones(scores.size, dtype=bool)
    candidates[exclude] = False
    n_cand = int(candidates.sum())
    if k > n_cand:
        raise ValueError(f"K={k} exceeds the {n_cand} candidate items")
    idx = np.flatnonzero(candidates)
    order = np.argsort(-scores[idx], kind="stable")
    return idx[order[:k]]


def precision_at_k(topk, relevant, k: int) -> float:
    hits = sum(1 for item in list(topk)[:k] if item in set(relevant))
    return hits / k


def _discounts(n: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, n + 2))


def ndcg_at_k(topk, relevant, k: int) -> float:
    relevant = set(int(x) for x in relevant)
    if not relevant:
        raise ValueError("NDCG is undefined for an empty relevant set")
    disc = _discounts(k)
    dcg = sum(disc[i] for i, item in enumerate(list(topk)[:k]) if int(item) in relevant)
    idcg = disc[:min(len(relevant), k)].sum()
    return float(dcg / idcg)


@dataclass(frozen=True)
class EvalConfig:
    k_values: tuple[int, ...] = (10, 20, 50)
    phase: str = "test"

    def __post_init__(self):
        if any(k < 1 for k in self.k_values):
            raise ValueError("every K must be >= 1")
        if self.phase not in ("validation", "test"):
            raise ValueError(f"phase must be 'validation' or 'test', got {self.phase!r}")


@dataclass
class MetricsReport:
    """Per-user macro averages; ``values[("P", 10)]`` is P@10."""

    values: dict[tuple[str, int], float]
    num_evaluated: int
    num_skipped: int = 0
    seed: int | None = None

    def __getitem__(self, key: tuple[str, int]) -> float:
        return self.values[key]

    def rows(self):
        for (metric, k), v in sorted(self.values.items()):
            yield f"{metric}@{k}", metric, k, v


def _user_metrics(ranked: np.ndarray, relevant: np.ndarray, k_values, disc) -> list[float]:
    hits = np.isin(ranked, relevant)
    out = []
    for k in k_values:
        h = hits[:k]
        out.append(h.sum() / k)
        idcg = disc[:min(relevant.size, k)].sum()
        out.append(float((disc[:h.size] * h).sum() / idcg))
    return out


def evaluate_model(model, split, cfg: EvalConfig = EvalConfig(), adj=None,
                   threads: int = 1, chunk_size: int = 256) -> MetricsReport:
    """Rank all items a user has not interacted with and score against the
    held-out items of ``cfg.phase``.

    ``model`` is anything with ``scorer(adj)`` or a plain callable
    ``users -> scores``; ``adj`` defaults to the training graph. Users without
    held-out items are skipped. When a user has fewer than K candidates, the
    shorter list is still divided by K.
    """
    if callable(model) and not hasattr(model, "scorer"):
        score_fn: Callable = model
    else:
        score_fn = model.scorer(build_adjacency(split.train) if adj is None else adj)
    known = split.known_items(cfg.phase)
    relevant = split.relevant_items(cfg.phase)
    users = np.array([u for u in range(split.num_users) if relevant[u].size], dtype=np.int64)
    k_max = max(cfg.k_values)
    disc = _discounts(k_max)

    def run(chunk: np.ndarray) -> np.ndarray:
        scores = np.array(score_fn(chunk), dtype=np.float64)
        rows = []
        for row, u in zip(scores, chunk):
            row[known[u]] = -np.inf
            n_cand = scores.shape[1] - known[u].size
            ranked = np.argsort(-row, kind="stable")[:min(k_max, n_cand)]
            rows.append(_user_metrics(ranked, relevant[u], cfg.k_values, disc))
        return np.array(rows).reshape(len(chunk), 2 * len(cfg.k_values))

    chunks = [users[i:i + chunk_size] for i in range(0, users.size, chunk_size)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]

    values = {}
    if users.size:
        table = np.concatenate(parts)
        means = table.sum(axis=0) / users.size
        for j, k in enumerate(cfg.k_values):
            values[("P", k)] = float(means[2 * j])
            values[("N", k)] = float(means[2 * j + 1])
    else:
        values = {(m, k): 0.0 for k in cfg.k_values for m in METRICS}
    return MetricsReport(values, int(users.size), split.num_users - int(users.size))


def popularity_scorer(train_items: np.ndarray, num_items: int):
    """Score every item by its training-set interaction count."""
    pop = np.bincount(np.asarray(train_items, dtype=np.int64), minlength=num_items).astype(np.float64)

    def score(users):
        return np.broadcast_to(pop, (len(users), num_items))

    return score


@dataclass
class EarlyStopState:
    patience: int = 50
    best_metric: float = -math.inf
    best_epoch: int = -1
    epochs_since_best: int = 0


def early_stop_update(state: EarlyStopState, epoch: int, metric: float) -> bool:
    """Record one epoch's validation metric; return True to keep training.

    Only a strictly greater value counts as an improvement. Training stops
    once ``patience`` successive epochs pass without one.
    """
    if metric > state.best_metric:
        state.best_metric = metric
        state.best_epoch = epoch
        state.epochs_since_best = 0
    else:
        state.epochs_since_best += 1
    return state.epochs_since_best < state.patience


@dataclass
class AggregateReport:
    per_seed: list[MetricsReport] = field(default_factory=list)

    def keys(self) -> list[tuple[str, int]]:
        return sorted(self.per_seed[0].values) if self.per_seed else []

    def mean(self, key) -> float:
        return float(np.mean([r.values[key] for r in self.per_seed]))

    def std(self, key) -> float:
        return float(np.std([r.values[key] for r in self.per_seed]))


def aggregate(reports: Sequence[MetricsReport]) -> AggregateReport:
    reports = list(reports)
    if reports and any(set(r.values) != set(reports[0].values) for r in reports):
        raise ValueError("reports cover different metrics")
    return AggregateReport(reports)


def write_report(agg: AggregateReport, path_prefix: str) -> None:
    """Write ``<prefix>.tsv`` (one line per metric) and ``<prefix>.json``."""
    seeds = [r.seed for r in agg.per_seed]
    with open(path_prefix + ".tsv", "w", encoding="utf-8") as fh:
        fh.write("metric\tK\tmean\tstd\t" + "\t".join(f"seed_{s}" for s in seeds) + "\n")
        for key in agg.keys():
            per = "\t".join(f"{r.values[key]:.6f}" for r in agg.per_seed)
            fh.write(f"{key[0]}\t{key[1]}\t{agg.mean(key):.6f}\t{agg.std(key):.6f}\t{per}\n")
    doc = {
        "seeds": seeds,
        "num_evaluated": [r.num_evaluated for r in agg.per_seed],
        "metrics": [
            {"metric": key[0], "K": key[1], "mean": agg.mean(key), "std": agg.std(key),
             "per_seed": [r.values[key] for r in agg.per_seed]}
            for key in agg.keys()
        ],
    }
    with open(path_prefix + ".json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
