"""Parameter-free token-to-expert routing and instance prompt synthesis.

Pipeline per image: capacity clustering -> cost matrix against the static keys
(1 - cosine) -> optimal one-to-one assignment -> mixture weights from cluster
sizes -> prompt = weight-averaged experts. Nothing here is trainable, so
routing costs no communication.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assignment import hungarian
from .clustering import CapacityConfig, ClusterResult, cluster
from .linalg import Rng, StaticKeySet, cosine

EMPTY_CLUSTER_COST = 2.0  # maximal 1-cos value; empty clusters never win a key


@dataclass(frozen=True)
class MixtureWeights:
    pi: np.ndarray  # (M,) non-negative, sums to 1


@dataclass
class RoutedPrompt:
    prompt: np.ndarray        # (L, D) instance-specific prompt
    weights: MixtureWeights
    assignment: np.ndarray    # (M,) expert index assigned to each cluster
    cluster_result: ClusterResult | None


def build_cost(centroids: np.ndarray, keys: StaticKeySet,
               sizes: np.ndarray | None = None) -> np.ndarray:
    """Cost matrix entry (i, j) = 1 - cos(centroid_i, key_j), in [0, 2].

    Rows for empty clusters (size 0, centroid undefined) are pinned to the
    maximal cost so they never displace a populated cluster from its key.
    """
    m = keys.count
    if centroids.shape[0] != m:
        raise ValueError(f"need {m} centroids to match {m} keys, got {centroids.shape[0]}")
    key_ok = np.linalg.norm(keys.keys, axis=1) > 0.0
    cost = np.full((m, m), EMPTY_CLUSTER_COST)
    for i in range(m):
        if sizes is not None and sizes[i] == 0:
            continue
        if not np.linalg.norm(centroids[i]) > 0.0:
            continue
        for j in range(m):
            if key_ok[j]:
                cost[i, j] = 1.0 - cosine(centroids[i], keys.keys[j])
    return cost


def _mixture(sizes: np.ndarray, perm: np.ndarray) -> MixtureWeights:
    surviving = int(sizes.sum())
    assert surviving > 0, "routing invariant violated: every token was dropped"
    pi = np.zeros(len(sizes))
    for i, expert in enumerate(perm):
        pi[int(expert)] = sizes[i] / surviving
    return MixtureWeights(pi=pi)


def synthesize(experts: np.ndarray, weights: MixtureWeights) -> np.ndarray:
    """Instance prompt: mixture-weighted sum of the expert prompts."""
    return np.einsum("m,mld->ld", weights.pi, experts)


def route(tokens: np.ndarray, experts: np.ndarray, keys: StaticKeySet,
          cfg: CapacityConfig, rng: Rng, *, random_assignment: bool = False,
          dynamic_keys: bool = False) -> RoutedPrompt:
    """Route one image's tokens and synthesize its prompt.

    ``random_assignment`` bypasses clustering and scatters tokens uniformly
    over experts (the routing ablation); ``dynamic_keys`` scores centroids
    against mean-pooled expert prompts instead of the static keys (the
    key-staticity ablation).
    """
    m = experts.shape[0]
    if keys.count != m:
        raise ValueError(f"{m} experts but {keys.count} keys")

    if random_assignment:
        picks = rng.integers(0, m, size=tokens.shape[0])
        sizes = np.bincount(picks, minlength=m)
        weights = MixtureWeights(pi=sizes / sizes.sum())
        return RoutedPrompt(prompt=synthesize(experts, weights), weights=weights,
                            assignment=np.arange(m, dtype=np.int64),
                            cluster_result=None)

    result = cluster(tokens, cfg, rng)
    if dynamic_keys:
        pooled = experts.mean(axis=1)  # (M, D) stand-in keys that drift with training
        keys = StaticKeySet(keys=pooled, strategy="dynamic")
    cost = build_cost(result.centroids, keys, sizes=result.sizes)
    perm = hungarian(cost)
    weights = _mixture(result.sizes, perm)
    return RoutedPrompt(prompt=synthesize(experts, weights), weights=weights,
                        assignment=perm, cluster_result=result)
