"""Pure elementwise merge kernels on aligned float32 buffers.

Numerical contract, mirrored by the independent reference implementation in
the testkit: every kernel evaluates its formula per element in float64 and
rounds once to float32. Intermediate float32 buffers appear only where a
kernel hands its result to another kernel (e.g. drop-rescale feeding sign
consensus), never inside a single formula.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .checkpoint import Checkpoint, TensorRecord
from .errors import CompatibilityError, ParameterError
from .rng import derive_key, uniform_stream

__all__ = [
    "TaskVector",
    "compute_task_vector",
    "linear_average",
    "task_arithmetic",
    "dare_drop_rescale",
    "ties_sign_consensus",
    "della_magprune",
    "breadcrumbs_mask",
    "merge_elementwise",
]


@dataclass
class TaskVector:
    """Per-tensor fine-tuning deltas of one parent relative to the base."""

    deltas: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.deltas[name]


def check_same_names(names_a, names_b, label_a: str, label_b: str) -> None:
    sa, sb = set(names_a), set(names_b)
    if sa != sb:
        only_a = sorted(sa - sb)
        only_b = sorted(sb - sa)
        raise CompatibilityError(
            f"tensor sets differ: only in {label_a}: {only_a}; only in {label_b}: {only_b}"
        )


def check_same_shape(name: str, shape_a, shape_b, label_a: str, label_b: str) -> None:
    if tuple(shape_a) != tuple(shape_b):
        raise CompatibilityError(
            f"tensor {name!r}: shape {tuple(shape_a)} in {label_a} vs "
            f"{tuple(shape_b)} in {label_b}"
        )


def compute_task_vector(model: Checkpoint, base: Checkpoint) -> TaskVector:
    """Delta = model - base, per element in float32."""
    check_same_names(model.names(), base.names(), "model", "base")
    deltas = {}
    for name in base.names():
        check_same_shape(name, model[name].shape, base[name].shape, "model", "base")
        deltas[name] = model[name].to_f32_array() - base[name].to_f32_array()
    return TaskVector(deltas)


def _as_f32(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float32)


def _check_shapes(*buffers: np.ndarray) -> None:
    first = buffers[0].shape
    for b in buffers[1:]:
        if b.shape != first:
            raise CompatibilityError(f"buffer shapes differ: {first} vs {b.shape}")


def linear_average(a: np.ndarray, b: np.ndarray, alpha: float) -> np.ndarray:
    """out = (1 - alpha) * a + alpha * b."""
    a, b = _as_f32(a), _as_f32(b)
    _check_shapes(a, b)
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must be in [0, 1], got {alpha}")
    out64 = (1.0 - alpha) * a.astype(np.float64) + alpha * b.astype(np.float64)
    return out64.astype(np.float32)


def task_arithmetic(base: np.ndarray, da: np.ndarray, db: np.ndarray,
                    alpha: float) -> np.ndarray:
    """out = base + alpha * da + (1 - alpha) * db."""
    base, da, db = _as_f32(base), _as_f32(da), _as_f32(db)
    _check_shapes(base, da, db)
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must be in [0, 1], got {alpha}")
    out64 = (base.astype(np.float64)
             + alpha * da.astype(np.float64)
             + (1.0 - alpha) * db.astype(np.float64))
    return out64.astype(np.float32)


def dare_drop_rescale(d: np.ndarray, density: float, rng_seed: int) -> np.ndarray:
    """Keep each element with probability `density`, rescale survivors by 1/density.

    The keep mask is a pure function of (rng_seed, element index), so the
    result is independent of schedule. E[out] == d element-wise.
    """
    d = _as_f32(d)
    if not 0.0 < density <= 1.0:
        raise ParameterError(f"density must be in (0, 1], got {density}")
    u = uniform_stream(rng_seed, d.size).reshape(d.shape)
    out64 = np.where(u < density, d.astype(np.float64) / density, 0.0)
    return out64.astype(np.float32)


def ties_sign_consensus(da: np.ndarray, db: np.ndarray) -> np.ndarray:
    """Two-model sign election on already-sparsified deltas.

    Elected sign per element is the sign of da + db (exact ties go to +);
    the output is the mean of the nonzero inputs whose sign matches.
    """
    da, db = _as_f32(da), _as_f32(db)
    _check_shapes(da, db)
    a64 = da.astype(np.float64)
    b64 = db.astype(np.float64)
    plus = (a64 + b64) >= 0.0
    match_a = np.where(plus, a64 > 0.0, a64 < 0.0)
    match_b = np.where(plus, b64 > 0.0, b64 < 0.0)
    count = match_a.astype(np.int64) + match_b.astype(np.int64)
    total = np.where(match_a, a64, 0.0) + np.where(match_b, b64, 0.0)
    out64 = np.where(count > 0, total / np.maximum(count, 1), 0.0)
    return out64.astype(np.float32)


def _midranks(absvals: np.ndarray) -> np.ndarray:
    """0-based ranks of |values| ascending; tied magnitudes share their midrank."""
    order = np.argsort(absvals, kind="stable")
    sorted_vals = absvals[order]
    uniq, counts = np.unique(sorted_vals, return_counts=True)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    mid_per_uniq = starts + (counts - 1) / 2.0
    ranks = np.empty(absvals.size, dtype=np.float64)
    ranks[order] = np.repeat(mid_per_uniq, counts)
    return ranks


def della_magprune(d: np.ndarray, density: float, epsilon: float,
                   rng_seed: int) -> np.ndarray:
    """Magnitude-adaptive drop with per-rank rescale.

    Rank r of n (|value| ascending, midrank on ties) drops with probability
    p_r = (1 - density) + epsilon * (1 - 2 r / (n - 1)); survivors are
    rescaled by 1 / (1 - p_r), which keeps the estimator unbiased.
    """
    d = _as_f32(d)
    if not 0.0 < density < 1.0:
        raise ParameterError(f"density must be in (0, 1), got {density}")
    if not 0.0 <= epsilon < min(density, 1.0 - density):
        raise ParameterError(
            f"epsilon must be in [0, min(density, 1 - density)), got {epsilon}"
        )
    n = d.size
    if n == 0:
        return d.copy()
    flat = d.reshape(-1)
    if n == 1:
        p = np.array([1.0 - density], dtype=np.float64)
    else:
        r = _midranks(np.abs(flat))
        p = (1.0 - density) + epsilon * (1.0 - 2.0 * r / (n - 1.0))
    u = uniform_stream(rng_seed, n)
    out64 = np.where(u < p, 0.0, flat.astype(np.float64) / (1.0 - p))
    return out64.astype(np.float32).reshape(d.shape)


def breadcrumbs_mask(d: np.ndarray, density: float, gamma: float) -> np.ndarray:
    """Dual-threshold mask: zero the ceil(gamma n) largest and the smallest
    magnitudes down to floor(density n) kept elements; no rescaling.

    Magnitude ties break toward the lower flat index being treated as
    smaller, so masking is fully deterministic.
    """
    d = _as_f32(d)
    if not 0.0 < density <= 1.0:
        raise ParameterError(f"density must be in (0, 1], got {density}")
    if not 0.0 <= gamma < 1.0:
        raise ParameterError(f"gamma must be in [0, 1), got {gamma}")
    if density + gamma > 1.0:
        raise ParameterError(f"density + gamma must be <= 1, got {density + gamma}")
    n = d.size
    if n == 0:
        return d.copy()
    flat = d.reshape(-1)
    # Exact integer thresholds; float products like 0.01 * n must not drift.
    top = math.ceil(Fraction(gamma) * n)
    keep = math.floor(Fraction(density) * n)
    bottom = n - top - keep
    order = np.argsort(np.abs(flat), kind="stable")
    out = flat.copy()
    out[order[:bottom]] = 0.0
    if top:
        out[order[n - top:]] = 0.0
    return out.reshape(d.shape)


def _combined_delta_output(base64: np.ndarray, da32: np.ndarray, db32: np.ndarray,
                           alpha: float) -> np.ndarray:
    out64 = (base64
             + alpha * da32.astype(np.float64)
             + (1.0 - alpha) * db32.astype(np.float64))
    return out64.astype(np.float32)


def merge_tensor_elementwise(method: str, name: str, base32: np.ndarray,
                             a32: np.ndarray, b32: np.ndarray, *, alpha: float,
                             density: float, epsilon: float, gamma: float,
                             seed: int) -> np.ndarray:
    """Apply one non-hierarchical method to a single tensor's f32 workspaces."""
    if method == "linear_average":
        return linear_average(a32, b32, alpha)
    if method == "task_arithmetic":
        da = a32 - base32
        db = b32 - base32
        return task_arithmetic(base32, da, db, alpha)

    base64 = base32.astype(np.float64)
    da = a32 - base32
    db = b32 - base32
    key_a = derive_key(seed, name, "a")
    key_b = derive_key(seed, name, "b")
    if method == "dare_ties":
        da = dare_drop_rescale(da, density, key_a)
        db = dare_drop_rescale(db, density, key_b)
        consensus = ties_sign_consensus(da, db)
        return (base64 + consensus.astype(np.float64)).astype(np.float32)
    if method == "della":
        da = della_magprune(da, density, epsilon, key_a)
        db = della_magprune(db, density, epsilon, key_b)
        return _combined_delta_output(base64, da, db, alpha)
    if method == "breadcrumbs":
        da = breadcrumbs_mask(da, density, gamma)
        db = breadcrumbs_mask(db, density, gamma)
        return _combined_delta_output(base64, da, db, alpha)
    raise ParameterError(f"unknown elementwise merge method {method!r}")


def merge_elementwise(recipe, base: Checkpoint, a: Checkpoint, b: Checkpoint) -> Checkpoint:
    """Whole-checkpoint merge for the five elementwise methods.

    Output dtype per tensor follows parent A unless the recipe overrides it.
    """
    if recipe.method == "hierarchical":
        raise ParameterError("hierarchical merging is handled by hierarchical_merge")
    for label, cp in (("parent_a", a), ("parent_b", b)):
        check_same_names(cp.names(), base.names(), label, "base")
        for name in base.names():
            check_same_shape(name, cp[name].shape, base[name].shape, label, "base")
    out = []
    for name in base.names():
        merged = merge_tensor_elementwise(
            recipe.method, name,
            base[name].to_f32_array(), a[name].to_f32_array(), b[name].to_f32_array(),
            alpha=recipe.alpha, density=recipe.density, epsilon=recipe.epsilon,
            gamma=recipe.gamma, seed=recipe.seed,
        )
        dtype = recipe.output_dtype or a[name].dtype
        out.append(TensorRecord.from_f32_array(name, merged, dtype))
    return Checkpoint(out, metadata=dict(base.metadata))
