"""Exhaustive assignment oracle, independent of the production solver.

Works on the same exact-integer view of the float matrix (every finite
float64 is a dyadic rational) and scans permutations in lexicographic
order with strict improvement, so the first minimum found is the
lexicographically smallest optimal mapping.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from ..errors import ParameterError

MAX_BRUTE_FORCE_HEADS = 8


def _exact_ints(cost) -> list[list[int]]:
    rows = [[float(x) for x in row] for row in np.asarray(cost, dtype=np.float64)]
    for row in rows:
        for x in row:
            if not math.isfinite(x):
                raise ParameterError("cost matrix contains non-finite entries")
    ratios = [[x.as_integer_ratio() for x in row] for row in rows]
    max_den = max((den for row in ratios for _, den in row), default=1)
    return [[num * (max_den // den) for num, den in row] for row in ratios]


def brute_force_assignment(cost):
    """Minimum-cost permutation by exhaustive search. Returns (mapping, cost).

    The tie rule matches the production solver: lexicographically smallest
    mapping among exact-cost optima. The returned cost is the float64 sum of
    the selected entries in row order.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ParameterError(f"cost matrix must be square, got shape {cost.shape}")
    n = cost.shape[0]
    if n > MAX_BRUTE_FORCE_HEADS:
        raise ParameterError(f"brute force supports up to {MAX_BRUTE_FORCE_HEADS} heads, got {n}")
    ints = _exact_ints(cost)
    best_perm = None
    best_total = None
    for perm in itertools.permutations(range(n)):
        total = 0
        for i, j in enumerate(perm):
            total += ints[i][j]
        if best_total is None or total < best_total:
            best_total = total
            best_perm = perm
    if best_perm is None:
        return (), 0.0
    value = 0.0
    for i, j in enumerate(best_perm):
        value += float(cost[i][j])
    return best_perm, value
