"""Straight-line scalar re-implementation of every merge method.

Implemented from the documented contracts alone: plain Python loops over
element lists, float64 formula evaluation with a single float32 rounding,
and an inline copy of the documented counter-based PRNG scheme. It shares
no code with the production kernels, so bitwise agreement between the two
is a meaningful check. Intended for toy-scale inputs only.
"""

from __future__ import annotations

import hashlib
import math
import struct
from fractions import Fraction

import numpy as np

from ..checkpoint import Checkpoint, TensorRecord
from ..errors import ParameterError
from .assignment import brute_force_assignment

_M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_ROLE = {"a": 0x243F6A8885A308D3, "b": 0x452821E638D01377}


# --- documented PRNG scheme, scalar copy -----------------------------------

def _mix(z: int) -> int:
    z &= _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return (z ^ (z >> 31)) & _M64


def _stream_key(seed: int, name: str, role: str) -> int:
    name64 = int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")
    return _mix(_mix((seed & _M64) ^ _GOLDEN) ^ name64 ^ _ROLE[role])


def _unit(key: int, i: int) -> float:
    return (_mix((key + (i + 1) * _GOLDEN) & _M64) >> 11) * 2.0**-53


# --- scalar dtype handling ---------------------------------------------------

def _widen(record: TensorRecord) -> list[float]:
    if record.dtype == "F32":
        return [struct.unpack("<f", record.data[4 * i:4 * i + 4])[0]
                for i in range(record.num_elements)]
    if record.dtype == "BF16":
        out = []
        for i in range(record.num_elements):
            (bits,) = struct.unpack("<H", record.data[2 * i:2 * i + 2])
            out.append(struct.unpack("<f", struct.pack("<I", bits << 16))[0])
        return out
    raise ParameterError(f"reference merge does not handle dtype {record.dtype}")


def _f32(x) -> float:
    return float(np.float32(x))


def _f32_sub(a: float, b: float) -> float:
    return float(np.float32(a) - np.float32(b))


def _narrow_bits_bf16(value: float) -> int:
    (u,) = struct.unpack("<I", struct.pack("<f", value))
    if (u & 0x7F800000) == 0x7F800000 and (u & 0x007FFFFF):
        r = u >> 16
        return r | 0x40 if (r & 0x7F) == 0 else r
    return ((u + 0x7FFF + ((u >> 16) & 1)) >> 16) & 0xFFFF


def _encode(values: list[float], shape, dtype: str, name: str) -> TensorRecord:
    if dtype == "F32":
        data = b"".join(struct.pack("<f", v) for v in values)
    elif dtype == "BF16":
        data = b"".join(struct.pack("<H", _narrow_bits_bf16(v)) for v in values)
    else:
        raise ParameterError(f"reference merge does not emit dtype {dtype}")
    return TensorRecord(name, dtype, tuple(shape), data)


# --- scalar kernels ----------------------------------------------------------

def _ref_lerp(a, b, alpha):
    return [_f32((1.0 - alpha) * x + alpha * y) for x, y in zip(a, b)]


def _ref_task_arithmetic(base, da, db, alpha):
    return [_f32(x + alpha * u + (1.0 - alpha) * v)
            for x, u, v in zip(base, da, db)]


def _ref_dare(d, density, key):
    out = []
    for i, v in enumerate(d):
        out.append(_f32(v / density) if _unit(key, i) < density else 0.0)
    return out


def _ref_ties(da, db):
    out = []
    for u, v in zip(da, db):
        s = u + v
        if s >= 0.0:
            matches = [x for x in (u, v) if x > 0.0]
        else:
            matches = [x for x in (u, v) if x < 0.0]
        if matches:
            total = 0.0
            for x in matches:
                total += x
            out.append(_f32(total / len(matches)))
        else:
            out.append(0.0)
    return out


def _ref_midranks(absvals):
    n = len(absvals)
    order = sorted(range(n), key=lambda i: absvals[i])
    ranks = [0.0] * n
    i = 0
    while i < n:
        j = i
        while j < n and absvals[order[j]] == absvals[order[i]]:
            j += 1
        mid = i + (j - i - 1) / 2.0
        for k in range(i, j):
            ranks[order[k]] = mid
        i = j
    return ranks


def _ref_della(d, density, epsilon, key):
    n = len(d)
    if n == 1:
        probs = [1.0 - density]
    else:
        ranks = _ref_midranks([abs(v) for v in d])
        probs = [(1.0 - density) + epsilon * (1.0 - 2.0 * r / (n - 1.0)) for r in ranks]
    out = []
    for i, (v, p) in enumerate(zip(d, probs)):
        out.append(0.0 if _unit(key, i) < p else _f32(v / (1.0 - p)))
    return out


def _ref_breadcrumbs(d, density, gamma):
    n = len(d)
    top = math.ceil(Fraction(gamma) * n)
    keep = math.floor(Fraction(density) * n)
    bottom = n - top - keep
    order = sorted(range(n), key=lambda i: (abs(d[i]), i))
    out = list(d)
    for idx in order[:bottom]:
        out[idx] = 0.0
    if top:
        for idx in order[n - top:]:
            out[idx] = 0.0
    return out


# --- scalar hierarchical pieces ----------------------------------------------

def _seq_sum(values) -> float:
    total = 0.0
    for v in values:
        total += v
    return total


def _ref_layer_weight(da, db) -> float:
    x = _seq_sum(u * u for u in da)
    y = _seq_sum(v * v for v in db)
    if x == 0.0 or y == 0.0:
        return 0.0
    dot = _seq_sum(u * v for u, v in zip(da, db))
    return min(1.0, max(0.0, dot / math.sqrt(x * y)))


def _split_rows(values, shape, num_heads, head_dim):
    rows, cols = shape
    per = head_dim * cols
    return [values[i * per:(i + 1) * per] for i in range(num_heads)]


def _split_cols(values, shape, num_heads, head_dim):
    rows, cols = shape
    heads = []
    for i in range(num_heads):
        slab = []
        for r in range(rows):
            start = r * cols + i * head_dim
            slab.extend(values[start:start + head_dim])
        heads.append(slab)
    return heads


def _merge_rows(heads, shape):
    out = []
    for slab in heads:
        out.extend(slab)
    return out


def _merge_cols(heads, shape, head_dim):
    rows, cols = shape
    out = [0.0] * (rows * cols)
    for i, slab in enumerate(heads):
        for r in range(rows):
            for c in range(head_dim):
                out[r * cols + i * head_dim + c] = slab[r * head_dim + c]
    return out


def _ref_cost_matrix(heads_a, heads_b):
    h = len(heads_a)
    na2 = [_seq_sum(x * x for x in head) for head in heads_a]
    nb2 = [_seq_sum(x * x for x in head) for head in heads_b]
    cost = [[1.0] * h for _ in range(h)]
    for i in range(h):
        if na2[i] == 0.0:
            continue
        for j in range(h):
            if nb2[j] == 0.0:
                continue
            dot = _seq_sum(x * y for x, y in zip(heads_a[i], heads_b[j]))
            cos = dot / math.sqrt(na2[i] * nb2[j])
            cost[i][j] = min(2.0, max(0.0, 1.0 - cos))
    return cost


def _ref_interpolate(pa, pb, w):
    if w == 0.0:
        return list(pa)
    if w == 1.0:
        return list(pb)
    return [_f32((1.0 - w) * x + w * y) for x, y in zip(pa, pb)]


def _ref_hierarchical_tensor(name, base, a, b, shape, recipe):
    da = [_f32_sub(x, y) for x, y in zip(a, base)]
    db = [_f32_sub(x, y) for x, y in zip(b, base)]
    w = _ref_layer_weight(da, db)
    proj = None
    for kind, pattern in recipe.attention.patterns:
        if pattern.search(name):
            proj = kind
            break
    if proj is None or len(shape) != 2:
        return _ref_interpolate(a, b, w)
    layout = recipe.attention.layout_for(proj)
    if layout.split_axis == "rows":
        heads_a = _split_rows(a, shape, layout.num_heads, layout.head_dim)
        heads_b = _split_rows(b, shape, layout.num_heads, layout.head_dim)
    else:
        heads_a = _split_cols(a, shape, layout.num_heads, layout.head_dim)
        heads_b = _split_cols(b, shape, layout.num_heads, layout.head_dim)
    mapping, _ = brute_force_assignment(_ref_cost_matrix(heads_a, heads_b))
    gathered = [heads_b[j] for j in mapping]
    if layout.split_axis == "rows":
        aligned = _merge_rows(gathered, shape)
    else:
        aligned = _merge_cols(gathered, shape, layout.head_dim)
    return _ref_interpolate(a, aligned, w)


# --- whole-checkpoint reference ------------------------------------------------

def reference_merge(method: str, base: Checkpoint, a: Checkpoint, b: Checkpoint,
                    recipe) -> Checkpoint:
    """Merge the trio with scalar loops only; bitwise oracle for the pipeline."""
    records = []
    for name in base.names():
        base_v = _widen(base[name])
        a_v = _widen(a[name])
        b_v = _widen(b[name])
        shape = base[name].shape
        if method == "linear_average":
            out = _ref_lerp(a_v, b_v, recipe.alpha)
        elif method == "task_arithmetic":
            da = [_f32_sub(x, y) for x, y in zip(a_v, base_v)]
            db = [_f32_sub(x, y) for x, y in zip(b_v, base_v)]
            out = _ref_task_arithmetic(base_v, da, db, recipe.alpha)
        elif method in ("dare_ties", "della", "breadcrumbs"):
            da = [_f32_sub(x, y) for x, y in zip(a_v, base_v)]
            db = [_f32_sub(x, y) for x, y in zip(b_v, base_v)]
            key_a = _stream_key(recipe.seed, name, "a")
            key_b = _stream_key(recipe.seed, name, "b")
            if method == "dare_ties":
                cons = _ref_ties(_ref_dare(da, recipe.density, key_a),
                                 _ref_dare(db, recipe.density, key_b))
                out = [_f32(x + c) for x, c in zip(base_v, cons)]
            elif method == "della":
                da = _ref_della(da, recipe.density, recipe.epsilon, key_a)
                db = _ref_della(db, recipe.density, recipe.epsilon, key_b)
                out = _ref_task_arithmetic(base_v, da, db, recipe.alpha)
            else:
                da = _ref_breadcrumbs(da, recipe.density, recipe.gamma)
                db = _ref_breadcrumbs(db, recipe.density, recipe.gamma)
                out = _ref_task_arithmetic(base_v, da, db, recipe.alpha)
        elif method == "hierarchical":
            out = _ref_hierarchical_tensor(name, base_v, a_v, b_v, shape, recipe)
        else:
            raise ParameterError(f"unknown merge method {method!r}")
        dtype = recipe.output_dtype or a[name].dtype
        records.append(_encode(out, shape, dtype, name))
    return Checkpoint(records, metadata=dict(base.metadata))
