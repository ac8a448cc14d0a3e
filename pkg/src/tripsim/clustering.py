"""Capacity-constrained k-means over one image's token embeddings.

Tokens are grouped into M clusters whose sizes never exceed a per-cluster
budget s = floor(alpha * (N+1) / M), clamped to at least 1. The budget is
enforced two ways at once: a per-cluster dual penalty theta that rises while a
cluster is over-demanded, and a hard token-replacement rule inside each
assignment sweep (a full cluster accepts a token only if the token is strictly
cheaper than the cluster's current worst member, which is then displaced and
cascades to its next-best cluster, or is dropped after exhausting all M).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import Rng

DROPPED = -1


class DegenerateTokensError(ValueError):
    """Too few tokens to form the requested number of clusters."""

    def __init__(self, distinct: int, clusters: int):
        super().__init__(
            f"cannot form {clusters} clusters from {distinct} token(s)")
        self.distinct = distinct
        self.clusters = clusters


@dataclass(frozen=True)
class CapacityConfig:
    clusters: int
    alpha: float = 1.0
    max_iters: int = 10
    tol: float = 1e-4
    eta_theta: float = 0.1

    def __post_init__(self):
        if self.clusters < 1:
            raise ValueError("clusters must be >= 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.eta_theta > 0:
            raise ValueError("eta_theta must be > 0")

    def capacity(self, n_tokens: int) -> int:
        """Per-cluster token budget s for an image with n_tokens tokens."""
        if math.isinf(self.alpha):
            return n_tokens
        return min(n_tokens, max(1, math.floor(self.alpha * n_tokens / self.clusters)))


@dataclass
class ClusterResult:
    assignment: np.ndarray   # (N+1,) cluster id per token, or DROPPED
    centroids: np.ndarray    # (M, D)
    thetas: np.ndarray       # (M,) dual penalties, >= 0
    sizes: np.ndarray        # (M,) member counts
    dropped_count: int
    capacity: int            # the budget s every cluster was held to
    objective: float         # sum of squared distances of assigned tokens
    n_iters: int


def assignment_cost(token: np.ndarray, centroid: np.ndarray, theta: float) -> float:
    """Squared distance to the centroid plus the cluster's dual penalty."""
    if theta < 0:
        raise ValueError("theta must be >= 0")
    diff = token - centroid
    return float(np.dot(diff, diff)) + theta


def _kmeans_pp(tokens: np.ndarray, m: int, rng: Rng) -> np.ndarray:
    """k-means++ seeding; duplicate points may yield coincident seeds."""
    n = tokens.shape[0]
    chosen = [int(rng.integers(0, n))]
    d2 = np.sum((tokens - tokens[chosen[0]]) ** 2, axis=1)
    for _ in range(1, m):
        idx = rng.weighted_index(d2)
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((tokens - tokens[idx]) ** 2, axis=1))
    return tokens[chosen].copy()


def _sweep(tokens: np.ndarray, centroids: np.ndarray, thetas: np.ndarray,
           cap: int) -> tuple[np.ndarray, np.ndarray]:
    """One assignment pass with frozen centroids/penalties.

    Returns (assignment, demand) where demand[m] counts tokens whose
    unconstrained first choice was cluster m (the pre-replacement size that
    drives the dual update).
    """
    n, m = tokens.shape[0], centroids.shape[0]
    diffs = tokens[:, None, :] - centroids[None, :, :]
    cost = np.einsum("nmd,nmd->nm", diffs, diffs) + thetas[None, :]
    # stable sort: cost ties broken by lowest cluster id
    prefs = np.argsort(cost, axis=1, kind="stable")

    demand = np.bincount(prefs[:, 0], minlength=m)

    assignment = np.full(n, DROPPED, dtype=np.int64)
    members: list[list[int]] = [[] for _ in range(m)]
    placed_pos = np.zeros(n, dtype=np.int64)  # index into the token's pref list

    for start in range(n):
        tok, pos = start, 0
        while tok is not None:
            placed_at = None
            for p in range(pos, m):
                c = int(prefs[tok, p])
                if len(members[c]) < cap:
                    members[c].append(tok)
                    assignment[tok] = c
                    placed_pos[tok] = p
                    placed_at = (None, p)
                    break
                # full cluster: admit only if strictly cheaper than its worst member
                worst = members[c][0]
                for r in members[c][1:]:
                    if cost[r, c] > cost[worst, c]:
                        worst = r
                if cost[tok, c] < cost[worst, c]:
                    members[c].remove(worst)
                    members[c].append(tok)
                    assignment[tok] = c
                    placed_pos[tok] = p
                    assignment[worst] = DROPPED
                    placed_at = (worst, p)
                    break
            if placed_at is None:
                break  # token exhausted every cluster: dropped
            displaced, _ = placed_at
            if displaced is None:
                tok = None
            else:
                tok, pos = displaced, int(placed_pos[displaced]) + 1

    return assignment, demand


def _objective(tokens: np.ndarray, assignment: np.ndarray,
               centroids: np.ndarray) -> float:
    kept = assignment >= 0
    if not kept.any():
        return 0.0
    diffs = tokens[kept] - centroids[assignment[kept]]
    return float(np.einsum("nd,nd->", diffs, diffs))


def cluster(tokens: np.ndarray, cfg: CapacityConfig, rng: Rng,
            init_centroids: np.ndarray | None = None) -> ClusterResult:
    """Cluster an image's tokens under hard per-cluster capacity.

    Iterates assignment sweeps, dual-penalty updates, and centroid
    recomputation until the largest centroid shift falls below ``cfg.tol`` or
    ``cfg.max_iters`` is reached. The returned state is the last one whose
    objective did not increase over its predecessor, so the objective is
    non-increasing across the final two recorded iterations.
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    n, m = tokens.shape[0], cfg.clusters
    if n < m:
        raise DegenerateTokensError(distinct=n, clusters=m)
    cap = cfg.capacity(n)

    centroids = (_kmeans_pp(tokens, m, rng) if init_centroids is None
                 else np.asarray(init_centroids, dtype=np.float64).copy())
    thetas = np.zeros(m)

    history: list[tuple[np.ndarray, np.ndarray, np.ndarray, float]] = []
    for it in range(cfg.max_iters):
        assignment, demand = _sweep(tokens, centroids, thetas, cap)
        thetas = np.maximum(0.0, thetas + cfg.eta_theta * (demand - cap))
        new_centroids = centroids.copy()
        for c in range(m):
            mask = assignment == c
            if mask.any():
                new_centroids[c] = tokens[mask].mean(axis=0)
        shift = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        history.append((assignment, centroids.copy(), thetas.copy(),
                        _objective(tokens, assignment, centroids)))
        if shift < cfg.tol:
            break

    while len(history) >= 2 and history[-1][3] > history[-2][3]:
        history.pop()

    assignment, centroids, thetas, objective = history[-1]
    sizes = np.bincount(assignment[assignment >= 0], minlength=m)
    return ClusterResult(
        assignment=assignment,
        centroids=centroids,
        thetas=thetas,
        sizes=sizes,
        dropped_count=int((assignment == DROPPED).sum()),
        capacity=cap,
        objective=objective,
        n_iters=len(history),
    )
