"""
How much of the neighbourhood to drop
=====================================

The graph encoder builds each representation from a user's (or item's)
neighbours. During training every step drops each edge with a probability
p drawn from U(0, P), and both encoders see the same thinned graph. Here
P is swept from 0 (no augmentation) to 1.
"""

import numpy as np

from buir.data import SplitConfig, build_adjacency, make_planted_blocks, split_per_user
from buir.encoder import AugmentConfig, sample_augmentation
from buir.evaluation import EvalConfig, evaluate_model
from buir.model import TrainConfig
from buir.optim import OptimizerConfig
from buir.training import Trainer, build_model

data = make_planted_blocks(200, 300, 2, 0.2, seed=1)
split = split_per_user(data, SplitConfig(0.2, seed=1))
adj = build_adjacency(split.train)

# %%
# What one augmented view looks like: the fraction of kept edges varies
# from step to step because p itself is random.
rng = np.random.default_rng(0)
views = [sample_augmentation(adj, AugmentConfig(0.8), rng) for _ in range(5)]
print("P=0.8, five draws:")
for v in views:
    print(f"  p={v.drop_probability:.2f}  kept {v.edge_mask.mean():.2f} of {adj.num_edges} edges")

# %%
# Sweep the maximum drop probability.
print(f"\n{'P':>4}  {'test P@10':>9}  {'best epoch':>10}")
for cap in (0.0, 0.25, 0.5, 0.75, 1.0):
    model = build_model("buir_nb", split.num_users, split.num_items, dim=32, seed=0, num_layers=2)
    cfg = TrainConfig(batch_size=128, max_epochs=150, early_stop_patience=30,
                      augment=AugmentConfig(max_drop_probability=cap))
    result = Trainer(model, split, cfg, OptimizerConfig(learning_rate=1e-2), seed=0).fit()
    p10 = evaluate_model(result.best_model, split, EvalConfig((10,)))[("P", 10)]
    print(f"{cap:4.2f}  {p10:9.4f}  {result.best_epoch:10d}")
