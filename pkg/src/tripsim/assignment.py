"""Exact one-to-one cluster-to-expert assignment.

``hungarian`` solves the square linear assignment problem; ``brute_force`` is
the independent permutation oracle used by the test suite. Both report totals
through ``total_cost`` (a correctly-rounded sum), so equal-cost optima compare
exactly and ties resolve to the lexicographically smallest permutation.
"""
from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import linear_sum_assignment

BRUTE_FORCE_LIMIT = 8


class AssignmentError(ValueError):
    """Structurally invalid cost matrix (non-square or non-finite)."""


class AssignmentSizeError(ValueError):
    """Instance too large for exhaustive enumeration."""


def _check_matrix(cost: np.ndarray) -> np.ndarray:
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1] or cost.shape[0] == 0:
        raise AssignmentError(f"cost matrix must be square and non-empty, got shape {cost.shape}")
    if not np.isfinite(cost).all():
        raise AssignmentError("cost matrix contains non-finite entries")
    return cost


def total_cost(cost: np.ndarray, perm) -> float:
    """Correctly-rounded total cost of a permutation (order-independent)."""
    return math.fsum(cost[i, int(p)] for i, p in enumerate(perm))


def brute_force(cost: np.ndarray) -> np.ndarray:
    """Exhaustive minimizer over all M! permutations; ties go lexicographic."""
    cost = _check_matrix(cost)
    m = cost.shape[0]
    if m > BRUTE_FORCE_LIMIT:
        raise AssignmentSizeError(f"brute force capped at M={BRUTE_FORCE_LIMIT}, got {m}")
    best_perm, best_total = None, math.inf
    for perm in itertools.permutations(range(m)):  # lexicographic order
        t = total_cost(cost, perm)
        if t < best_total:
            best_perm, best_total = perm, t
    return np.array(best_perm, dtype=np.int64)


def _lap(cost: np.ndarray) -> np.ndarray:
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(cost.shape[0], dtype=np.int64)
    perm[rows] = cols
    return perm


def hungarian(cost: np.ndarray) -> np.ndarray:
    """Optimal assignment of clusters (rows) to experts (columns).

    The dense O(M^3) solver finds an optimum; a refinement pass then walks the
    rows in order and, for each, adopts the smallest column index that still
    admits an optimal completion, which pins the result to the
    lexicographically smallest optimal permutation.
    """
    cost = _check_matrix(cost)
    m = cost.shape[0]
    incumbent = _lap(cost)
    best_total = total_cost(cost, incumbent)

    used: list[int] = []
    for i in range(m):
        current = int(incumbent[i])
        for j in range(m):
            if j >= current:
                break
            if j in used:
                continue
            free_rows = list(range(i + 1, m))
            free_cols = [c for c in range(m) if c not in used and c != j]
            candidate = list(incumbent[:i]) + [j]
            if free_rows:
                sub_perm = _lap(cost[np.ix_(free_rows, free_cols)])
                candidate += [free_cols[int(c)] for c in sub_perm]
            t = total_cost(cost, candidate)
            if t <= best_total:
                incumbent = np.array(candidate, dtype=np.int64)
                best_total = t
                break
        used.append(int(incumbent[i]))

    return incumbent
