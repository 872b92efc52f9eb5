"""Implicit-feedback datasets: parsing, long-tail filtering, per-user splits and
the bipartite adjacency used by the neighbor encoder."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

_logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class InteractionDataset:
    """Deduplicated positive user-item pairs over dense 0-based indices.

    ``users``/``items`` are parallel int64 arrays. ``user_vocab`` and
    ``item_vocab`` list raw ids in dense-index order (position == index).
    """

    num_users: int
    num_items: int
    users: np.ndarray
    items: np.ndarray
    user_vocab: tuple[str, ...] = ()
    item_vocab: tuple[str, ...] = ()

    def __post_init__(self):
        if self.users.shape != self.items.shape:
            raise ValueError("users and items must be parallel arrays")

    def __len__(self) -> int:
        return int(self.users.size)

    @property
    def pairs(self) -> np.ndarray:
        return np.stack([self.users, self.items], axis=1)

    def user_index(self) -> dict[str, int]:
        return {raw: i for i, raw in enumerate(self.user_vocab)}

    def item_index(self) -> dict[str, int]:
        return {raw: i for i, raw in enumerate(self.item_vocab)}

    def items_by_user(self) -> list[np.ndarray]:
        """Sorted item indices per user."""
        return _group(self.users, self.items, self.num_users)


def _group(keys: np.ndarray, values: np.ndarray, n: int) -> list[np.ndarray]:
    order = np.lexsort((values, keys))
    keys, values = keys[order], values[order]
    bounds = np.searchsorted(keys, np.arange(n + 1))
    return [values[bounds[i]:bounds[i + 1]] for i in range(n)]


def from_pairs(users, items, num_users=None, num_items=None,
               user_vocab=(), item_vocab=()) -> InteractionDataset:
    """Build a dataset from index arrays, collapsing duplicate pairs.

    First occurrence order is kept.
    """
    users = np.asarray(users, dtype=np.int64).reshape(-1)
    items = np.asarray(items, dtype=np.int64).reshape(-1)
    if num_users is None:
        num_users = int(users.max()) + 1 if users.size else 0
    if num_items is None:
        num_items = int(items.max()) + 1 if items.size else 0
    if users.size:
        if users.min() < 0 or users.max() >= num_users:
            raise ValueError("user index out of range")
        if items.min() < 0 or items.max() >= num_items:
            raise ValueError("item index out of range")
        keys = users * num_items + items
        _, first = np.unique(keys, return_index=True)
        first.sort()
        users, items = users[first], items[first]
    return InteractionDataset(num_users, num_items, users, items,
                              tuple(user_vocab), tuple(item_vocab))


def parse_interactions(path, delimiter: str | None = None,
                       comment: str = "#") -> InteractionDataset:
    """Read ``raw_user raw_item [extra columns...]`` lines.

    With ``delimiter=None`` any run of whitespace (spaces or tabs) separates
    tokens. Dense indices are assigned in order of first appearance.
    """
    path = os.fspath(path)
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read interactions file {path!r}: {exc.strerror}") from exc

    user_ids: dict[str, int] = {}
    item_ids: dict[str, int] = {}
    users: list[int] = []
    items: list[int] = []
    with fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith(comment):
                continue
            tokens = stripped.split(delimiter)
            if len(tokens) < 2 or not tokens[0].strip() or not tokens[1].strip():
                raise DataError(f"{path}:{lineno}: expected at least two columns, got {line.rstrip()!r}")
            raw_u, raw_v = tokens[0].strip(), tokens[1].strip()
            users.append(user_ids.setdefault(raw_u, len(user_ids)))
            items.append(item_ids.setdefault(raw_v, len(item_ids)))

    if not users:
        raise DataError(f"{path}: no interactions found")
    return from_pairs(users, items, len(user_ids), len(item_ids),
                      tuple(user_ids), tuple(item_ids))


def filter_long_tail(data: InteractionDataset, min_user_interactions: int = 0,
                     min_item_interactions: int = 0) -> InteractionDataset:
    """Drop users/items under the thresholds, repeating until nothing changes.

    Survivors are reindexed densely, keeping their relative order.
    """
    if min_user_interactions < 0 or min_item_interactions < 0:
        raise ValueError("thresholds must be >= 0")
    users, items = data.users, data.items
    keep = np.ones(users.size, dtype=bool)
    while True:
        u_cnt = np.bincount(users[keep], minlength=data.num_users)
        i_cnt = np.bincount(items[keep], minlength=data.num_items)
        bad = keep & ((u_cnt[users] < min_user_interactions) | (i_cnt[items] < min_item_interactions))
        if not bad.any():
            break
        keep &= ~bad
    if not keep.any():
        raise DataError("filtering removed every interaction")
    if keep.all():
        return data

    users, items = users[keep], items[keep]
    u_alive = np.unique(users)
    i_alive = np.unique(items)
    u_map = np.full(data.num_users, -1, dtype=np.int64)
    i_map = np.full(data.num_items, -1, dtype=np.int64)
    u_map[u_alive] = np.arange(u_alive.size)
    i_map[i_alive] = np.arange(i_alive.size)
    user_vocab = tuple(data.user_vocab[i] for i in u_alive) if data.user_vocab else ()
    item_vocab = tuple(data.item_vocab[i] for i in i_alive) if data.item_vocab else ()
    _logger.info("filtered %d -> %d interactions", data.users.size, users.size)
    return InteractionDataset(int(u_alive.size), int(i_alive.size), u_map[users], i_map[items],
                              user_vocab, item_vocab)


@dataclass(frozen=True)
class SplitConfig:
    train_ratio: float = 0.5
    seed: int = 0
    min_train_per_user: int = 1

    def __post_init__(self):
        if not 0.0 < self.train_ratio < 1.0:
            raise ValueError(f"train_ratio must lie in (0, 1), got {self.train_ratio}")
        if self.min_train_per_user < 0:
            raise ValueError("min_train_per_user must be >= 0")


@dataclass(frozen=True)
class DatasetSplit:
    train: InteractionDataset
    validation: list[np.ndarray]
    test: list[np.ndarray]

    @property
    def num_users(self) -> int:
        return self.train.num_users

    @property
    def num_items(self) -> int:
        return self.train.num_items

    def train_items(self) -> list[np.ndarray]:
        return self.train.items_by_user()

    def known_items(self, phase: str) -> list[np.ndarray]:
        """Items excluded from ranking for ``phase`` ("validation" or "test")."""
        train = self.train_items()
        if phase == "validation":
            return train
        if phase == "test":
            return [np.union1d(t, v) for t, v in zip(train, self.validation)]
        raise ValueError(f"unknown phase {phase!r}")

    def relevant_items(self, phase: str) -> list[np.ndarray]:
        if phase == "validation":
            return self.validation
        if phase == "test":
            return self.test
        raise ValueError(f"unknown phase {phase!r}")


def split_counts(n: int, train_ratio: float, min_train: int = 1) -> tuple[int, int, int]:
    """(train, validation, test) sizes for a user with ``n`` interactions."""
    if n == 0:
        return 0, 0, 0
    n_train = min(n, max(min_train, int(np.floor(train_ratio * n))))
    rest = n - n_train
    n_val = rest // 2
    return n_train, n_val, rest - n_val


def split_per_user(data: InteractionDataset, cfg: SplitConfig) -> DatasetSplit:
    rng = np.random.default_rng(cfg.seed)
    per_user = data.items_by_user()
    tr_u, tr_i, val, test = [], [], [], []
    for u, items in enumerate(per_user):
        items = rng.permutation(items)
        n_tr, n_val, _ = split_counts(items.size, cfg.train_ratio, cfg.min_train_per_user)
        tr_u.append(np.full(n_tr, u, dtype=np.int64))
        tr_i.append(items[:n_tr])
        val.append(np.sort(items[n_tr:n_tr + n_val]))
        test.append(np.sort(items[n_tr + n_val:]))
    train = InteractionDataset(data.num_users, data.num_items,
                               np.concatenate(tr_u) if tr_u else np.empty(0, np.int64),
                               np.concatenate(tr_i) if tr_i else np.empty(0, np.int64),
                               data.user_vocab, data.item_vocab)
    return DatasetSplit(train, val, test)


@dataclass(frozen=True)
class BipartiteAdjacency:
    """Both directions of the user-item graph in CSR form.

    Edges are numbered in user-major order (``edge_users``, ``edge_items``);
    augmentation masks index this numbering.
    """

    num_users: int
    num_items: int
    user_indptr: np.ndarray
    user_indices: np.ndarray
    item_indptr: np.ndarray
    item_indices: np.ndarray
    edge_users: np.ndarray = field(repr=False)
    edge_items: np.ndarray = field(repr=False)

    @property
    def num_edges(self) -> int:
        return int(self.edge_users.size)

    @property
    def user_degrees(self) -> np.ndarray:
        return np.diff(self.user_indptr)

    @property
    def item_degrees(self) -> np.ndarray:
        return np.diff(self.item_indptr)

    def user_neighbors(self, u: int) -> np.ndarray:
        return self.user_indices[self.user_indptr[u]:self.user_indptr[u + 1]]

    def item_neighbors(self, v: int) -> np.ndarray:
        return self.item_indices[self.item_indptr[v]:self.item_indptr[v + 1]]


def _csr(keys, values, n):
    order = np.lexsort((values, keys))
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(keys, minlength=n), out=indptr[1:])
    return indptr, values[order], order


def build_adjacency(train: InteractionDataset) -> BipartiteAdjacency:
    users = np.asarray(train.users, dtype=np.int64)
    items = np.asarray(train.items, dtype=np.int64)
    u_ptr, u_idx, order = _csr(users, items, train.num_users)
    i_ptr, i_idx, _ = _csr(items, users, train.num_items)
    return BipartiteAdjacency(train.num_users, train.num_items, u_ptr, u_idx, i_ptr, i_idx,
                              users[order], items[order])


def make_planted_blocks(num_users: int = 200, num_items: int = 300, num_blocks: int = 2,
                        p_in: float = 0.2, p_out: float = 0.0, seed: int = 0) -> InteractionDataset:
    """Synthetic community data: users and items are split into contiguous
    blocks and interact with probability ``p_in`` inside their block and
    ``p_out`` across blocks. Users and items left without any interaction
    are dropped."""
    rng = np.random.default_rng(seed)
    u_block = np.arange(num_users) * num_blocks // num_users
    i_block = np.arange(num_items) * num_blocks // num_items
    prob = np.where(u_block[:, None] == i_block[None, :], p_in, p_out)
    users, items = np.nonzero(rng.random((num_users, num_items)) < prob)
    data = from_pairs(users, items, num_users, num_items,
                      tuple(f"u{i}" for i in range(num_users)),
                      tuple(f"i{i}" for i in range(num_items)))
    return filter_long_tail(data, 1, 1)


# split manifest files ---------------------------------------------------------

TRAIN_FILE = "train.tsv"
VALID_FILE = "valid.tsv"
TEST_FILE = "test.tsv"
VOCAB_FILE = "vocab.tsv"


def _write_pairs(path, users, items):
    with open(path, "w", encoding="utf-8") as fh:
        for u, v in zip(users.tolist(), items.tolist()):
            fh.write(f"{u}\t{v}\n")


def write_split(split: DatasetSplit, out_dir) -> None:
    """Write train/valid/test pair files (dense indices) and the vocab file."""
    os.makedirs(out_dir, exist_ok=True)
    train = split.train
    _write_pairs(os.path.join(out_dir, TRAIN_FILE), train.users, train.items)
    for name, sets in ((VALID_FILE, split.validation), (TEST_FILE, split.test)):
        users = np.concatenate([np.full(s.size, u, np.int64) for u, s in enumerate(sets)] or [np.empty(0, np.int64)])
        items = np.concatenate(list(sets) or [np.empty(0, np.int64)])
        _write_pairs(os.path.join(out_dir, name), users, items)
    user_vocab = train.user_vocab or tuple(str(i) for i in range(train.num_users))
    item_vocab = train.item_vocab or tuple(str(i) for i in range(train.num_items))
    with open(os.path.join(out_dir, VOCAB_FILE), "w", encoding="utf-8") as fh:
        for kind, vocab in (("user", user_vocab), ("item", item_vocab)):
            for idx, raw in enumerate(vocab):
                fh.write(f"{kind}\t{raw}\t{idx}\n")


def _read_pairs(path):
    try:
        arr = np.loadtxt(path, dtype=np.int64, delimiter="\t", ndmin=2)
    except OSError as exc:
        raise DataError(f"cannot read split file {path!r}") from exc
    if arr.size == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return arr[:, 0], arr[:, 1]


def read_split(data_dir) -> DatasetSplit:
    vocab_path = os.path.join(data_dir, VOCAB_FILE)
    vocabs: dict[str, list[str]] = {"user": [], "item": []}
    try:
        with open(vocab_path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                kind, raw, idx = line.rstrip("\n").split("\t")
                if int(idx) != len(vocabs[kind]):
                    raise DataError(f"{vocab_path}:{lineno}: indices must be dense and ordered")
                vocabs[kind].append(raw)
    except OSError as exc:
        raise DataError(f"cannot read vocab file {vocab_path!r}") from exc
    except (ValueError, KeyError) as exc:
        raise DataError(f"malformed vocab file {vocab_path!r}") from exc

    m, n = len(vocabs["user"]), len(vocabs["item"])
    tu, ti = _read_pairs(os.path.join(data_dir, TRAIN_FILE))
    train = InteractionDataset(m, n, tu, ti, tuple(vocabs["user"]), tuple(vocabs["item"]))
    sets = []
    for name in (VALID_FILE, TEST_FILE):
        u, i = _read_pairs(os.path.join(data_dir, name))
        sets.append(_group(u, i, m))
    return DatasetSplit(train, sets[0], sets[1])
