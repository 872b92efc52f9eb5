"""User/item encoders.

Two encoders share one parameter layout, an :class:`EmbeddingTable`:

* the ID encoder returns embedding rows as-is;
* the light graph convolution (LGCN) encoder propagates the table over the
  symmetrically normalised user-item graph and averages layers 0..K.

The LGCN map is linear in the table, and the normalised bipartite operator is
symmetric, so its adjoint (used for backprop) is the same propagation applied
to the upstream gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .data import BipartiteAdjacency


@dataclass
class EmbeddingTable:
    user: np.ndarray
    item: np.ndarray

    def __post_init__(self):
        if self.user.ndim != 2 or self.item.ndim != 2 or self.user.shape[1] != self.item.shape[1]:
            raise ValueError("user and item matrices must be 2-D with equal width")
        if self.user.shape[1] == 0:
            raise ValueError("embedding dimension must be positive")

    @property
    def dim(self) -> int:
        return self.user.shape[1]

    @property
    def num_users(self) -> int:
        return self.user.shape[0]

    @property
    def num_items(self) -> int:
        return self.item.shape[0]

    @classmethod
    def random(cls, num_users, num_items, dim, rng) -> EmbeddingTable:
        std = 1.0 / np.sqrt(dim)
        return cls(rng.normal(0.0, std, (num_users, dim)), rng.normal(0.0, std, (num_items, dim)))

    def copy(self) -> EmbeddingTable:
        return EmbeddingTable(self.user.copy(), self.item.copy())

    def side(self, side: str) -> np.ndarray:
        if side == "user":
            return self.user
        if side == "item":
            return self.item
        raise ValueError(f"side must be 'user' or 'item', got {side!r}")


@dataclass(frozen=True)
class LgcnConfig:
    num_layers: int = 2

    def __post_init__(self):
        if self.num_layers < 0:
            raise ValueError("num_layers must be >= 0")


@dataclass(frozen=True)
class AugmentConfig:
    max_drop_probability: float = 1.0
    enabled: bool = True

    def __post_init__(self):
        if not 0.0 <= self.max_drop_probability <= 1.0:
            raise ValueError("max_drop_probability must lie in [0, 1]")


@dataclass(frozen=True)
class AugmentedNeighborhood:
    edge_mask: np.ndarray
    drop_probability: float


def encode_id(table: EmbeddingTable, index: int, side: str = "user") -> np.ndarray:
    """Embedding row for one user or item (a view, not a copy)."""
    mat = table.side(side)
    if not 0 <= index < mat.shape[0]:
        raise IndexError(f"{side} index {index} out of range [0, {mat.shape[0]})")
    return mat[index]


def drop_edges(num_edges: int, p: float, rng: np.random.Generator) -> AugmentedNeighborhood:
    """Keep every edge independently with probability ``1 - p``."""
    keep = rng.random(num_edges) >= p
    return AugmentedNeighborhood(keep, float(p))


def sample_augmentation(adj: BipartiteAdjacency, cfg: AugmentConfig,
                        rng: np.random.Generator) -> AugmentedNeighborhood:
    """Draw ``p ~ U(0, P)`` then an edge-dropout mask for one training step."""
    p = rng.uniform(0.0, cfg.max_drop_probability)
    return drop_edges(adj.num_edges, p, rng)


class Propagation:
    """Normalised bipartite operator for one (possibly masked) graph.

    ``weights`` holds ``1/sqrt(d_u d_v)`` under the masked degrees; isolated
    nodes have no edges and therefore receive nothing.
    """

    def __init__(self, adj: BipartiteAdjacency, mask: np.ndarray | None = None):
        users, items = adj.edge_users, adj.edge_items
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != users.shape:
                raise ValueError(f"mask has {mask.size} entries for {users.size} edges")
            users, items = users[mask], items[mask]
        du = np.bincount(users, minlength=adj.num_users).astype(np.float64)
        dv = np.bincount(items, minlength=adj.num_items).astype(np.float64)
        weights = 1.0 / np.sqrt(du[users] * dv[items])
        shape = (adj.num_users, adj.num_items)
        self.user_from_item = sp.csr_matrix((weights, (users, items)), shape=shape)
        self.item_from_user = self.user_from_item.T.tocsr()
        self.shape = shape

    def step(self, user: np.ndarray, item: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.user_from_item @ item, self.item_from_user @ user


def propagate(user: np.ndarray, item: np.ndarray, prop: Propagation,
              num_layers: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean of layers 0..num_layers of repeated propagation."""
    if user.shape[0] != prop.shape[0] or item.shape[0] != prop.shape[1]:
        raise ValueError("table shape does not match adjacency")
    acc_u, acc_i = user.copy(), item.copy()
    cur_u, cur_i = user, item
    for _ in range(num_layers):
        cur_u, cur_i = prop.step(cur_u, cur_i)
        acc_u += cur_u
        acc_i += cur_i
    scale = 1.0 / (num_layers + 1)
    return acc_u * scale, acc_i * scale


def encode_lgcn(table: EmbeddingTable, adj: BipartiteAdjacency, cfg: LgcnConfig,
                aug: AugmentedNeighborhood | None = None) -> tuple[np.ndarray, np.ndarray]:
    if cfg.num_layers == 0:
        return table.user.copy(), table.item.copy()
    prop = Propagation(adj, None if aug is None else aug.edge_mask)
    return propagate(table.user, table.item, prop, cfg.num_layers)


def encode_lgcn_backward(grad_user: np.ndarray, grad_item: np.ndarray, adj: BipartiteAdjacency,
                         cfg: LgcnConfig, aug: AugmentedNeighborhood | None = None,
                         prop: Propagation | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Gradient on the embedding table given gradients on the LGCN outputs.

    Pass a prebuilt ``prop`` to reuse the forward operator.
    """
    if grad_user.shape[0] != adj.num_users or grad_item.shape[0] != adj.num_items:
        raise ValueError("gradient shape does not match adjacency")
    if grad_user.shape[1] != grad_item.shape[1]:
        raise ValueError("user and item gradients must have equal width")
    if cfg.num_layers == 0:
        return grad_user.copy(), grad_item.copy()
    if prop is None:
        prop = Propagation(adj, None if aug is None else aug.edge_mask)
    return propagate(grad_user, grad_item, prop, cfg.num_layers)
