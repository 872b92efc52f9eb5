"""Binary checkpoint and optimizer-state files.

Checkpoint layout (all little-endian)::

    offset  size  field
    0       8     magic  b"BUIRCKPT"
    8       4     format version (uint32, currently 1)
    12      4     kind (uint32): 0 buir_id, 1 buir_lgcn, 2 bpr_inner, 3 bpr_cross
    16      8     M, number of users (uint64)
    24      8     N, number of items (uint64)
    32      8     D, embedding dimension (uint64)
    40      4     K_layers (uint32, 0 for non-graph kinds)
    44      4     reserved, zero
    48      8     tau (float64; 0 for BPR kinds)
    56      ...   float64 arrays, row-major, concatenated without padding

Array order: BUIR kinds write online user (MxD), online item (NxD),
predictor weight (DxD), predictor bias (D), target user (MxD), target item
(NxD). ``bpr_inner`` writes user, item; ``bpr_cross`` writes user, item,
predictor weight, predictor bias.

Optimizer-state layout::

    magic b"BUIROPT\\0", version (uint32), parameter count P (uint32),
    step counter t (uint64), then P records of
        name length (uint32), UTF-8 name, ndim (uint32), shape (uint64 each),
        first moment (float64 array), second moment (float64 array)
    and finally an extras blob: length (uint32) + UTF-8 JSON (may be "{}").
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .baseline import BprModel
from .encoder import EmbeddingTable, LgcnConfig
from .errors import DataError
from .model import BuirModel, PredictorParams
from .optim import AdamState

MAGIC = b"BUIRCKPT"
OPT_MAGIC = b"BUIROPT\0"
VERSION = 1
KINDS = ("buir_id", "buir_lgcn", "bpr_inner", "bpr_cross")
_HEADER = struct.Struct("<8sIIQQQIId")


def model_kind(model) -> str:
    if isinstance(model, BuirModel):
        return "buir_id" if model.encoder == "id" else "buir_lgcn"
    if isinstance(model, BprModel):
        return "bpr_inner" if model.score_mode == "inner_product" else "bpr_cross"
    raise TypeError(f"cannot checkpoint {type(model).__name__}")


def _arrays(model) -> list[np.ndarray]:
    if isinstance(model, BuirModel):
        return [model.online.user, model.online.item, model.predictor.weight,
                model.predictor.bias, model.target.user, model.target.item]
    out = [model.user, model.item]
    if model.predictor is not None:
        out += [model.predictor.weight, model.predictor.bias]
    return out


def checkpoint_bytes(model, tau: float = 0.0) -> bytes:
    kind = model_kind(model)
    layers = model.lgcn.num_layers if kind == "buir_lgcn" else 0
    if not isinstance(model, BuirModel):
        tau = 0.0
    header = _HEADER.pack(MAGIC, VERSION, KINDS.index(kind), model.num_users, model.num_items,
                          model.dim, layers, 0, float(tau))
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in _arrays(model))
    return header + body


def save_checkpoint(path, model, tau: float = 0.0) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model, tau))


def load_checkpoint(path):
    """Return ``(model, header)`` where header holds kind, M, N, D, layers, tau."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {str(path)!r}") from exc
    if len(blob) < _HEADER.size:
        raise DataError(f"{path}: truncated checkpoint header")
    magic, version, kind_id, m, n, d, layers, _, tau = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    if kind_id >= len(KINDS):
        raise DataError(f"{path}: unknown model kind {kind_id}")
    kind = KINDS[kind_id]
    shapes = {
        "buir_id": [(m, d), (n, d), (d, d), (d,), (m, d), (n, d)],
        "bpr_inner": [(m, d), (n, d)],
        "bpr_cross": [(m, d), (n, d), (d, d), (d,)],
    }
    shapes["buir_lgcn"] = shapes["buir_id"]
    expected = _HEADER.size + 8 * sum(int(np.prod(s)) for s in shapes[kind])
    if len(blob) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(blob)}")

    arrays, offset = [], _HEADER.size
    for shape in shapes[kind]:
        count = int(np.prod(shape))
        arrays.append(np.frombuffer(blob, "<f8", count, offset).astype(np.float64).reshape(shape))
        offset += 8 * count

    if kind.startswith("buir"):
        model = BuirModel(EmbeddingTable(arrays[0], arrays[1]), PredictorParams(arrays[2], arrays[3]),
                          EmbeddingTable(arrays[4], arrays[5]),
                          "id" if kind == "buir_id" else "lgcn", LgcnConfig(layers))
    elif kind == "bpr_inner":
        model = BprModel(arrays[0], arrays[1])
    else:
        model = BprModel(arrays[0], arrays[1], "cross_prediction", PredictorParams(arrays[2], arrays[3]))
    header = {"kind": kind, "num_users": m, "num_items": n, "dim": d, "num_layers": layers, "tau": tau}
    return model, header


def save_optimizer_state(path, state: AdamState, extras: dict | None = None) -> None:
    parts = [OPT_MAGIC, struct.pack("<IIQ", VERSION, len(state.m), state.t)]
    for name in state.m:
        m, v = state.m[name], state.v[name]
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", m.ndim) + struct.pack(f"<{m.ndim}Q", *m.shape))
        parts.append(np.ascontiguousarray(m, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(v, dtype="<f8").tobytes())
    blob = json.dumps(extras or {}, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(blob)) + blob)
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_optimizer_state(path) -> tuple[AdamState, dict]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read optimizer state {str(path)!r}") from exc
    if blob[:8] != OPT_MAGIC:
        raise DataError(f"{path}: not an optimizer-state file")
    try:
        version, count, t = struct.unpack_from("<IIQ", blob, 8)
        if version != VERSION:
            raise DataError(f"{path}: unsupported optimizer-state version {version}")
        offset = 24
        state = AdamState(t=t)
        for _ in range(count):
            (length,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset:offset + length].decode("utf-8")
            offset += length
            (ndim,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            shape = struct.unpack_from(f"<{ndim}Q", blob, offset)
            offset += 8 * ndim
            size = int(np.prod(shape))
            arrs = []
            for _ in range(2):
                arrs.append(np.frombuffer(blob, "<f8", size, offset).astype(np.float64).reshape(shape))
                offset += 8 * size
            state.m[name], state.v[name] = arrs
        (length,) = struct.unpack_from("<I", blob, offset)
        extras = json.loads(blob[offset + 4:offset + 4 + length].decode("utf-8"))
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: corrupt optimizer-state file") from exc
    return state, extras
