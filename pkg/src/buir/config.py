"""Run configuration: one JSON document with every knob of a run.

Every field has a default except the dataset location (``input_path`` for
raw logs or ``data_dir`` for a prepared split).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .baseline import SamplerConfig
from .data import SplitConfig
from .encoder import AugmentConfig, LgcnConfig
from .evaluation import EvalConfig
from .model import TrainConfig
from .optim import OptimizerConfig

MODELS = ("buir_id", "buir_nb", "bpr")


@dataclass(frozen=True)
class RunConfig:
    model: str = "buir_id"
    input_path: str | None = None
    data_dir: str | None = None
    min_user_interactions: int = 0
    min_item_interactions: int = 0
    dim: int = 100
    score_mode: str = "inner_product"
    seeds: tuple[int, ...] = (0,)
    threads: int = 1
    split: SplitConfig = field(default_factory=SplitConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    optim: OptimizerConfig = field(default_factory=OptimizerConfig)
    lgcn: LgcnConfig = field(default_factory=LgcnConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)


_NESTED = {"split": SplitConfig, "train": TrainConfig, "optim": OptimizerConfig,
           "lgcn": LgcnConfig, "sampler": SamplerConfig, "eval": EvalConfig}


def _build(cls, doc: dict):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(doc) - set(known)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} field(s): {sorted(unknown)}")
    kwargs = {}
    for name, value in doc.items():
        if cls is TrainConfig and name == "augment":
            value = _build(AugmentConfig, value)
        elif cls is RunConfig and name in _NESTED:
            value = _build(_NESTED[name], value)
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(doc: dict) -> RunConfig:
    return _build(RunConfig, doc)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
