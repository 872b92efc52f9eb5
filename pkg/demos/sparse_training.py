"""
Training with only a few interactions per user
==============================================

With 10% of each user's history kept for training, a pairwise ranking model
has to guess negatives among mostly unseen items, and many of those guesses
are items the user would actually like. This script trains BUIR (no
negatives) next to BPR with each of the three negative samplers, using a
shared protocol, and prints their test precision.
"""

import numpy as np

from buir.baseline import SamplerConfig
from buir.cli import train_run
from buir.config import RunConfig
from buir.data import SplitConfig, make_planted_blocks, split_per_user
from buir.evaluation import EvalConfig, evaluate_model
from buir.model import TrainConfig
from buir.optim import OptimizerConfig
from buir.training import derive_seeds

data = make_planted_blocks(200, 300, 2, 0.2, seed=0)
seeds = (0, 1, 2)
splits = {s: split_per_user(data, SplitConfig(0.1, seed=derive_seeds(s)["split"])) for s in seeds}
print(f"training pairs per seed: {[len(splits[s].train) for s in seeds]}")

base = RunConfig(dim=64, optim=OptimizerConfig(learning_rate=1e-2),
                 train=TrainConfig(batch_size=64, max_epochs=200, early_stop_patience=30))
variants = {
    "BUIR-id": base,
    "BPR uniform": base.replace(model="bpr"),
    "BPR popularity": base.replace(model="bpr", sampler=SamplerConfig("static_global")),
    "BPR adaptive": base.replace(model="bpr", sampler=SamplerConfig("adaptive_contextual", candidate_pool=16)),
    "BPR cross-pred": base.replace(model="bpr", score_mode="cross_prediction"),
}

# %%
# Each variant trains once per seed; the checkpoint with the best
# validation P@10 is scored on the test items.
print(f"\n{'model':<16}{'P@10':>8}{'N@10':>8}   per-seed P@10")
for name, cfg in variants.items():
    p10, n10 = [], []
    for s in seeds:
        result, _ = train_run(cfg, splits[s], s)
        rep = evaluate_model(result.best_model, splits[s], EvalConfig((10,)))
        p10.append(rep[("P", 10)])
        n10.append(rep[("N", 10)])
    print(f"{name:<16}{np.mean(p10):8.4f}{np.mean(n10):8.4f}   " + " ".join(f"{x:.4f}" for x in p10))
