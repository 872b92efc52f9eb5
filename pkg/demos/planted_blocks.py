"""
BUIR on planted communities
===========================

Two groups of users each interact with their own half of the catalogue.
A model trained only on positive pairs, without a single negative sample,
should still pull apart the two halves instead of collapsing every item
onto one point.
"""

import numpy as np

from buir.data import SplitConfig, make_planted_blocks, split_per_user
from buir.evaluation import EvalConfig, evaluate_model, popularity_scorer
from buir.model import TrainConfig, recommend_topk
from buir.optim import OptimizerConfig
from buir.training import Trainer, build_model

# 200 users, 300 items, two blocks; a user sees ~20% of its block's items
data = make_planted_blocks(200, 300, num_blocks=2, p_in=0.2, seed=0)
split = split_per_user(data, SplitConfig(train_ratio=0.5, seed=0))
print(f"{data.num_users} users, {data.num_items} items, {len(data)} interactions, "
      f"{len(split.train)} used for training")

# %%
# Train the ID-encoder model. The target tables start as a copy of the
# online ones and then trail them by a momentum average.
model = build_model("buir_id", split.num_users, split.num_items, dim=64, seed=0)
trainer = Trainer(model, split, TrainConfig(batch_size=256, max_epochs=60, early_stop_patience=60), OptimizerConfig(), seed=0)
result = trainer.fit(on_epoch=lambda r: r.epoch % 10 == 0 and print(
    f"epoch {r.epoch:3d}  loss {r.loss:+.4f}  val P@10 {r.val_p10:.4f}"))

# %%
# Collapse check: if every item embedding pointed the same way, the mean
# absolute cosine between random item pairs would approach 1.
items = result.model.online.item
unit = items / np.linalg.norm(items, axis=1, keepdims=True)
cos = unit @ unit.T
# vocab names carry the original ids, which fix each item's block
block = np.array([int(name[1:]) * 2 // 300 for name in data.item_vocab])
same = block[:, None] == block[None, :]
off_diag = ~np.eye(data.num_items, dtype=bool)
print(f"\nmean |cos| between items: {np.abs(cos[off_diag]).mean():.3f}")
print(f"mean cos, same block:      {cos[same & off_diag].mean():+.3f}")
print(f"mean cos, different block: {cos[~same].mean():+.3f}")

# %%
# Ranking quality against the most-popular-items baseline.
cfg = EvalConfig((10, 20))
ours = evaluate_model(result.best_model, split, cfg)
pop = evaluate_model(popularity_scorer(split.train.items, split.num_items), split, cfg)
for key in sorted(ours.values):
    print(f"{key[0]}@{key[1]:<3d} BUIR {ours[key]:.4f}   popularity {pop[key]:.4f}")

# %%
# Top-10 lists for one user from each block.
for user in (0, data.num_users - 1):
    user_block = int(data.user_vocab[user][1:]) * 2 // 200
    recs = recommend_topk(result.best_model, user, 10, exclude=split.known_items("test")[user])
    print(f"user {user} (block {user_block}): {np.mean(block[recs] == user_block):.0%} of top-10 in own block")
