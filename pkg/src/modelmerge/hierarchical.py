"""Hierarchical merge: per-tensor cosine similarity weights over the two
parents' deltas, with optimal-transport head alignment on attention
projections before interpolation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .checkpoint import Checkpoint, TensorRecord
from .heads import (
    assignment_cost,
    head_cost_matrix,
    linear_sum_assignment,
    merge_heads,
    split_heads,
)
from .kernels import check_same_names, check_same_shape

logger = logging.getLogger(__name__)

ATTENTION_KINDS = ("q", "k", "v", "o")


@dataclass(frozen=True)
class LayerClass:
    """Classification of one tensor name: attention projection kind or other."""

    name: str
    proj: str | None  # one of ATTENTION_KINDS, or None for everything else

    @property
    def is_attention(self) -> bool:
        return self.proj is not None


@dataclass(frozen=True)
class LayerWeightReport:
    name: str
    w: float
    aligned: bool
    assignment_cost: float | None = None
    permutation: tuple[int, ...] | None = None


def _seq_sum64(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    return float(np.cumsum(values)[-1])


def layer_weight(da: np.ndarray, db: np.ndarray) -> float:
    """Clamped cosine similarity of the flattened deltas, in [0, 1].

    Zero-norm input on either side gives 0. Accumulation is left-to-right
    in float64; the denominator is sqrt(x * y) so identical inputs give
    exactly 1.0.
    """
    if da.shape != db.shape:
        from .errors import CompatibilityError
        raise CompatibilityError(f"delta shapes differ: {da.shape} vs {db.shape}")
    a = da.reshape(-1).astype(np.float64)
    b = db.reshape(-1).astype(np.float64)
    x = _seq_sum64(a * a)
    y = _seq_sum64(b * b)
    if x == 0.0 or y == 0.0:
        return 0.0
    dot = _seq_sum64(a * b)
    return min(1.0, max(0.0, dot / float(np.sqrt(x * y))))


def classify_layer(name: str, recipe) -> LayerClass:
    """Match the tensor name against the recipe's attention patterns in order."""
    for kind, pattern in recipe.attention.patterns:
        if pattern.search(name):
            return LayerClass(name, kind)
    return LayerClass(name, None)


def _interpolate(p_a32: np.ndarray, p_b32: np.ndarray, w: float) -> np.ndarray:
    # Endpoints copy bits so w == 0 reproduces parent A exactly (and w == 1
    # the aligned parent B), signed zeros included.
    if w == 0.0:
        return p_a32.copy()
    if w == 1.0:
        return p_b32.copy()
    return ((1.0 - w) * p_a32.astype(np.float64)
            + w * p_b32.astype(np.float64)).astype(np.float32)


def merge_tensor_hierarchical(name: str, base32: np.ndarray, a32: np.ndarray,
                              b32: np.ndarray, recipe):
    """One tensor of Algorithm-style hierarchical merging.

    Returns (merged float32 array, LayerWeightReport). The similarity weight
    is computed from the unaligned deltas before any head alignment.
    """
    da = a32 - base32
    db = b32 - base32
    w = layer_weight(da, db)
    cls = classify_layer(name, recipe)
    if cls.is_attention and a32.ndim == 2:
        layout = recipe.attention.layout_for(cls.proj)
        heads_a = split_heads(a32, layout)
        heads_b = split_heads(b32, layout)
        cost = head_cost_matrix(heads_a, heads_b)
        perm = linear_sum_assignment(cost)
        total = assignment_cost(cost, perm)
        aligned_b = merge_heads(heads_b[list(perm.mapping)], layout, b32.shape)
        logger.info("aligned %s H=%d perm=%s cost=%.6g",
                    name, layout.num_heads, list(perm.mapping), total)
        merged = _interpolate(a32, aligned_b, w)
        report = LayerWeightReport(name, w, True, total, perm.mapping)
    else:
        merged = _interpolate(a32, b32, w)
        report = LayerWeightReport(name, w, False)
    return merged, report


def hierarchical_merge(base: Checkpoint, a: Checkpoint, b: Checkpoint, recipe):
    """Merge whole checkpoints; returns (Checkpoint, reports in lexicographic order)."""
    for label, cp in (("parent_a", a), ("parent_b", b)):
        check_same_names(cp.names(), base.names(), label, "base")
        for name in base.names():
            check_same_shape(name, cp[name].shape, base[name].shape, label, "base")
    records = []
    reports = []
    for name in base.names():
        merged, report = merge_tensor_hierarchical(
            name, base[name].to_f32_array(), a[name].to_f32_array(),
            b[name].to_f32_array(), recipe,
        )
        dtype = recipe.output_dtype or a[name].dtype
        records.append(TensorRecord.from_f32_array(name, merged, dtype))
        reports.append(report)
    return Checkpoint(records, metadata=dict(base.metadata)), reports
