"""Epoch loop with validation-driven early stopping for BUIR and BPR models."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .baseline import BprModel, NegativeSampler, SamplerConfig, bpr_train_step
from .data import DatasetSplit, build_adjacency
from .encoder import LgcnConfig
from .evaluation import EarlyStopState, EvalConfig, early_stop_update, evaluate_model
from .model import BuirModel, TrainConfig, train_step
from .optim import AdamState, OptimizerConfig

_logger = logging.getLogger(__name__)

SEED_STREAMS = ("split", "init", "augment", "sampler", "shuffle")


def derive_seeds(master_seed: int) -> dict[str, int]:
    """Independent 64-bit seeds for each random stream of a run.

    ``SeedSequence(master_seed).spawn(5)`` in the order of ``SEED_STREAMS``;
    each child contributes its first generated uint64.
    """
    children = np.random.SeedSequence(master_seed).spawn(len(SEED_STREAMS))
    return {name: int(c.generate_state(1, np.uint64)[0]) for name, c in zip(SEED_STREAMS, children)}


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_p10: float


@dataclass
class TrainResult:
    model: object
    best_model: object
    best_epoch: int
    history: list[EpochRecord] = field(default_factory=list)


class Trainer:
    """Owns the optimizer state and every random stream of one training run."""

    def __init__(self, model, split: DatasetSplit, train_cfg: TrainConfig, opt_cfg: OptimizerConfig,
                 sampler_cfg: SamplerConfig | None = None, seed: int = 0, threads: int = 1):
        self.model = model
        self.split = split
        self.train_cfg = train_cfg
        self.opt_cfg = opt_cfg
        self.threads = threads
        self.adj = build_adjacency(split.train)
        self.pairs = np.stack([self.adj.edge_users, self.adj.edge_items], axis=1)
        self.state = AdamState.for_params(model.params())
        seeds = derive_seeds(seed)
        self.rngs = {name: np.random.default_rng(seeds[name]) for name in ("augment", "sampler", "shuffle")}
        self.sampler = None
        if isinstance(model, BprModel):
            self.sampler = NegativeSampler.from_dataset(split.train, sampler_cfg or SamplerConfig())
        self.epoch = 0

    def step(self, batch: np.ndarray) -> float:
        if isinstance(self.model, BuirModel):
            adj = self.adj if self.model.encoder == "lgcn" else None
            return train_step(self.model, batch, self.state, self.train_cfg, self.opt_cfg,
                              adj, self.rngs["augment"])
        return bpr_train_step(self.model, batch, self.sampler, self.state, self.opt_cfg,
                              self.rngs["sampler"])

    def run_epoch(self) -> float:
        """One shuffled pass over the training pairs; returns the mean batch loss."""
        if self.pairs.shape[0] == 0:
            return float("nan")
        order = self.rngs["shuffle"].permutation(self.pairs.shape[0])
        bs = self.train_cfg.batch_size
        losses = [self.step(self.pairs[order[i:i + bs]]) for i in range(0, order.size, bs)]
        self.epoch += 1
        return float(np.mean(losses))

    def validate(self) -> float:
        report = evaluate_model(self.model, self.split, EvalConfig((10,), "validation"),
                                adj=self.adj, threads=self.threads)
        return report[("P", 10)]

    def fit(self, on_epoch=None) -> TrainResult:
        cfg = self.train_cfg
        stopper = EarlyStopState(patience=cfg.early_stop_patience)
        best = self.model.copy()
        history: list[EpochRecord] = []
        for epoch in range(cfg.max_epochs):
            loss = self.run_epoch()
            val = self.validate()
            rec = EpochRecord(epoch, loss, val)
            history.append(rec)
            if on_epoch is not None:
                on_epoch(rec)
            keep_going = early_stop_update(stopper, epoch, val)
            if stopper.best_epoch == epoch:
                best = self.model.copy()
            _logger.debug("epoch %d loss %.5f val P@10 %.4f", epoch, loss, val)
            if not keep_going:
                _logger.info("early stop at epoch %d (best %d)", epoch, stopper.best_epoch)
                break
        return TrainResult(self.model, best, stopper.best_epoch, history)

    def rng_states(self) -> dict:
        return {name: rng.bit_generator.state for name, rng in self.rngs.items()} | {"epoch": self.epoch}

    def restore_rng_states(self, states: dict) -> None:
        for name, rng in self.rngs.items():
            rng.bit_generator.state = states[name]
        self.epoch = states.get("epoch", self.epoch)


def build_model(kind: str, num_users: int, num_items: int, dim: int, seed: int,
                num_layers: int = 2, score_mode: str = "inner_product"):
    """Fresh model for ``kind`` in {buir_id, buir_nb, bpr}, initialised from
    the run's ``init`` stream."""
    rng = np.random.default_rng(derive_seeds(seed)["init"])
    if kind == "buir_id":
        return BuirModel.init(num_users, num_items, dim, rng, "id")
    if kind == "buir_nb":
        return BuirModel.init(num_users, num_items, dim, rng, "lgcn", LgcnConfig(num_layers))
    if kind == "bpr":
        return BprModel.init(num_users, num_items, dim, rng, score_mode)
    raise ValueError(f"unknown model kind {kind!r}")
