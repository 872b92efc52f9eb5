"""Adam with coupled L2 regularisation and lazy row-sparse updates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")


@dataclass
class SparseRows:
    """Gradient touching only ``indices`` (unique) of a 2-D parameter."""

    indices: np.ndarray
    values: np.ndarray

    @classmethod
    def accumulate(cls, indices, values, num_rows=None) -> SparseRows:
        """Sum ``values`` rows that share an index."""
        indices = np.asarray(indices, dtype=np.int64)
        uniq, inverse = np.unique(indices, return_inverse=True)
        out = np.zeros((uniq.size,) + values.shape[1:], dtype=values.dtype)
        np.add.at(out, inverse, values)
        return cls(uniq, out)

    def to_dense(self, shape) -> np.ndarray:
        out = np.zeros(shape)
        out[self.indices] = self.values
        return out


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> AdamState:
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)

    def copy(self) -> AdamState:
        return AdamState({k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()}, self.t)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray | SparseRows],
              state: AdamState, cfg: OptimizerConfig) -> None:
    """One Adam update, in place on ``params`` and ``state``.

    The L2 term ``weight_decay * param`` is added to the gradient before the
    moment updates. For :class:`SparseRows` gradients only the listed rows
    (their parameters *and* moments) are touched; the bias correction still
    uses the global step counter. Parameters missing from ``grads`` are left
    alone.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        p = params[name]
        vals = g.values if isinstance(g, SparseRows) else g
        if isinstance(g, SparseRows):
            if vals.shape[1:] != p.shape[1:] or vals.shape[0] != g.indices.size:
                raise ValueError(f"sparse gradient shape mismatch for {name!r}")
        elif vals.shape != p.shape:
            raise ValueError(f"gradient shape {vals.shape} != parameter shape {p.shape} for {name!r}")
        if not np.all(np.isfinite(vals)):
            raise NumericalError(f"non-finite gradient for {name!r}")
    if not state.m:
        state.m.update({k: np.zeros_like(p) for k, p in params.items()})
        state.v.update({k: np.zeros_like(p) for k, p in params.items()})

    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        p, m, v = params[name], state.m[name], state.v[name]
        if isinstance(g, SparseRows):
            rows = g.indices
            grad = g.values + cfg.weight_decay * p[rows]
            m_r = b1 * m[rows] + (1.0 - b1) * grad
            v_r = b2 * v[rows] + (1.0 - b2) * grad * grad
            m[rows] = m_r
            v[rows] = v_r
            p[rows] -= cfg.learning_rate * (m_r / bc1) / (np.sqrt(v_r / bc2) + cfg.epsilon)
        else:
            grad = g + cfg.weight_decay * p
            m *= b1
            m += (1.0 - b1) * grad
            v *= b2
            v += (1.0 - b2) * grad * grad
            p -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.epsilon)
