"""Attention-head alignment: reshape projections into heads, build a
1 - cosine cost matrix, solve the assignment exactly, permute model B.

The assignment solver works on exact integers. Every finite float64 cost is
a dyadic rational, so the matrix is scaled to a common power-of-two
denominator and solved with O(H^3) Hungarian potentials over Python ints.
Lexicographic tie-breaking is folded into the objective: entry (i, j) gains
j * (H+1)^(H-1-i) after scaling the true costs by (H+1)^H, which makes the
lexicographically smallest optimal mapping the unique minimizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LayoutError, ParameterError

ROWS = "rows"
COLUMNS = "columns"


@dataclass(frozen=True)
class HeadLayout:
    """How a projection matrix factors into attention heads."""

    num_heads: int
    head_dim: int
    split_axis: str  # ROWS or COLUMNS

    def __post_init__(self):
        if self.num_heads < 1 or self.head_dim < 1:
            raise LayoutError(f"head counts must be positive, got {self}")
        if self.split_axis not in (ROWS, COLUMNS):
            raise LayoutError(f"split_axis must be {ROWS!r} or {COLUMNS!r}")


@dataclass(frozen=True)
class HeadPermutation:
    """mapping[i] is the source head of B placed into target slot i of A."""

    mapping: tuple[int, ...]

    def __post_init__(self):
        if sorted(self.mapping) != list(range(len(self.mapping))):
            raise ParameterError(f"mapping {self.mapping} is not a permutation")

    def is_identity(self) -> bool:
        return all(i == j for i, j in enumerate(self.mapping))


def _check_layout(p: np.ndarray, layout: HeadLayout) -> int:
    if p.ndim != 2:
        raise LayoutError(f"head splitting is defined on matrices, got rank {p.ndim}")
    axis = 0 if layout.split_axis == ROWS else 1
    extent = p.shape[axis]
    if extent % layout.head_dim != 0:
        raise LayoutError(
            f"extent {extent} along {layout.split_axis} is not divisible by "
            f"head_dim {layout.head_dim}"
        )
    if extent != layout.num_heads * layout.head_dim:
        raise LayoutError(
            f"extent {extent} along {layout.split_axis} != num_heads {layout.num_heads} "
            f"x head_dim {layout.head_dim}"
        )
    return axis


def split_heads(p: np.ndarray, layout: HeadLayout) -> np.ndarray:
    """Return an (H, head_dim * other_extent) array of flattened head slabs."""
    axis = _check_layout(p, layout)
    h, hd = layout.num_heads, layout.head_dim
    if axis == 0:
        return np.ascontiguousarray(p).reshape(h, hd * p.shape[1])
    return np.stack([p[:, i * hd:(i + 1) * hd].ravel() for i in range(h)])


def merge_heads(heads: np.ndarray, layout: HeadLayout, shape: tuple[int, int]) -> np.ndarray:
    """Inverse of split_heads for a matrix of the given shape."""
    h, hd = layout.num_heads, layout.head_dim
    if layout.split_axis == ROWS:
        return heads.reshape(shape)
    out = np.empty(shape, dtype=heads.dtype)
    for i in range(h):
        out[:, i * hd:(i + 1) * hd] = heads[i].reshape(shape[0], hd)
    return out


def _seq_sum(values: np.ndarray) -> float:
    """Left-to-right float64 accumulation (np.cumsum is sequential)."""
    if values.size == 0:
        return 0.0
    return float(np.cumsum(values)[-1])


def head_cost_matrix(heads_a: np.ndarray, heads_b: np.ndarray) -> np.ndarray:
    """C[i][j] = 1 - cosine(head_a_i, head_b_j), clipped to [0, 2].

    Zero-norm heads have cosine 0 (cost 1). Dot products and squared norms
    accumulate left-to-right in float64 so a scalar reimplementation can
    reproduce every bit.
    """
    heads_a = np.asarray(heads_a, dtype=np.float64)
    heads_b = np.asarray(heads_b, dtype=np.float64)
    if heads_a.shape != heads_b.shape:
        raise LayoutError(f"head sets differ in shape: {heads_a.shape} vs {heads_b.shape}")
    h = heads_a.shape[0]
    na2 = [_seq_sum(heads_a[i] * heads_a[i]) for i in range(h)]
    nb2 = [_seq_sum(heads_b[j] * heads_b[j]) for j in range(h)]
    cost = np.ones((h, h), dtype=np.float64)
    for i in range(h):
        if na2[i] == 0.0:
            continue
        for j in range(h):
            if nb2[j] == 0.0:
                continue
            dot = _seq_sum(heads_a[i] * heads_b[j])
            cos = dot / np.sqrt(na2[i] * nb2[j])
            cost[i, j] = min(2.0, max(0.0, 1.0 - cos))
    return cost


def exact_cost_ints(cost: np.ndarray) -> list[list[int]]:
    """Scale a float64 matrix to exact integers on a common power-of-two grid."""
    if not np.all(np.isfinite(cost)):
        raise ParameterError("cost matrix contains non-finite entries")
    ratios = [[float(x).as_integer_ratio() for x in row] for row in np.asarray(cost)]
    max_den = max((den for row in ratios for _, den in row), default=1)
    return [[num * (max_den // den) for num, den in row] for row in ratios]


def _hungarian_exact(a: list[list[int]]) -> list[int]:
    """Minimum-cost perfect matching on an exact integer n x n matrix.

    Potentials-based O(n^3) Hungarian method; returns row -> column mapping.
    """
    n = len(a)
    inf = (max((abs(x) for row in a for x in row), default=0) + 1) * (n + 1)
    u = [0] * (n + 1)
    v = [0] * (n + 1)
    p = [0] * (n + 1)  # p[j]: row matched to column j (1-based; 0 = free)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = a[i0 - 1][j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    result = [0] * n
    for j in range(1, n + 1):
        result[p[j] - 1] = j - 1
    return result


def lex_tiebreak_ints(cost_ints: list[list[int]]) -> list[list[int]]:
    """Fold lexicographic mapping preference into exact integer costs."""
    n = len(cost_ints)
    scale = (n + 1) ** n
    return [
        [cost_ints[i][j] * scale + j * (n + 1) ** (n - 1 - i) for j in range(n)]
        for i in range(n)
    ]


def linear_sum_assignment(cost: np.ndarray) -> HeadPermutation:
    """Permutation minimizing sum_i cost[i][pi(i)].

    Exact over the float inputs; among equal-cost optima the
    lexicographically smallest mapping sequence is returned.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ParameterError(f"cost matrix must be square, got shape {cost.shape}")
    n = cost.shape[0]
    if n == 0:
        return HeadPermutation(())
    encoded = lex_tiebreak_ints(exact_cost_ints(cost))
    return HeadPermutation(tuple(_hungarian_exact(encoded)))


def assignment_cost(cost: np.ndarray, perm: HeadPermutation) -> float:
    """Sum of selected entries, accumulated in row order in float64."""
    total = 0.0
    for i, j in enumerate(perm.mapping):
        total += float(cost[i][j])
    return total


def align_heads(p_a: np.ndarray, p_b: np.ndarray, layout: HeadLayout):
    """Permute B's head slabs to match A's. Returns (aligned_b, permutation)."""
    if p_a.shape != p_b.shape:
        raise LayoutError(f"projection shapes differ: {p_a.shape} vs {p_b.shape}")
    heads_a = split_heads(p_a, layout)
    heads_b = split_heads(p_b, layout)
    perm = linear_sum_assignment(head_cost_matrix(heads_a, heads_b))
    aligned = merge_heads(heads_b[list(perm.mapping)], layout, p_b.shape)
    return aligned.astype(p_b.dtype, copy=False), perm


def permute_heads(p: np.ndarray, layout: HeadLayout, perm: HeadPermutation) -> np.ndarray:
    """Scatter head slab i of p into slot perm[i]; inverse of the gather
    applied by align_heads, used to plant known permutations in tests."""
    heads = split_heads(p, layout)
    out = np.empty_like(heads)
    for src, dst in enumerate(perm.mapping):
        out[dst] = heads[src]
    return merge_heads(out, layout, p.shape)
