"""Dense vector math, counter-based seeded randomness, and static key initialization.

Everything downstream (clustering, transport, routing, the frozen scoring head)
builds on the handful of primitives here. All randomness flows through ``Rng``,
a thin wrapper over a Philox counter-based generator, so identical seeds give
identical draw sequences on every platform.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ZeroNormError(ValueError):
    """A vector that must have positive norm was (numerically) zero."""

    def __init__(self, argument: str):
        super().__init__(f"zero-norm vector passed as '{argument}'")
        self.argument = argument


class KeyConfigError(ValueError):
    """Key-set request that cannot be satisfied."""


KEY_STRATEGIES = ("uniform", "normal", "binary", "orthogonal")


class Rng:
    """Deterministic random stream backed by the Philox counter-based generator.

    ``spawn(*key)`` derives an independent child stream; the (seed, spawn_key)
    pair fully identifies a stream, so experiment components can each own a
    reproducible source without consuming from one another.
    """

    def __init__(self, seed: int, spawn_key: tuple[int, ...] = ()):
        if seed < 0:
            raise ValueError("seed must be a non-negative integer")
        self.seed = int(seed)
        self.spawn_key = tuple(int(k) for k in spawn_key)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def spawn(self, *key: int) -> "Rng":
        return Rng(self.seed, self.spawn_key + tuple(int(k) for k in key))

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, shape=None) -> np.ndarray | float:
        out = self._gen.random(shape)
        return float(out) if shape is None else out

    def integers(self, low: int, high: int | None = None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def weighted_index(self, weights: np.ndarray) -> int:
        """Pick an index with probability proportional to non-negative weights."""
        total = float(weights.sum())
        if total <= 0.0:
            return int(self.integers(0, len(weights)))
        u = self.uniform() * total
        return int(min(np.searchsorted(np.cumsum(weights), u, side="right"),
                       len(weights) - 1))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two vectors, clamped to [-1, 1] against rounding."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0:
        raise ZeroNormError("a")
    if nb == 0.0:
        raise ZeroNormError("b")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def normalize(a: np.ndarray) -> np.ndarray:
    """Project a vector onto the unit sphere, preserving direction."""
    n = float(np.linalg.norm(a))
    if n == 0.0:
        raise ZeroNormError("a")
    return a / n


def gram_schmidt(rows: np.ndarray) -> np.ndarray:
    """Orthonormalize matrix rows by classical Gram-Schmidt.

    A second re-orthogonalization pass keeps pairwise dot products below 1e-10
    even for nearly dependent draws.
    """
    out = rows.astype(np.float64, copy=True)
    for _ in range(2):
        for i in range(out.shape[0]):
            for j in range(i):
                out[i] -= np.dot(out[i], out[j]) * out[j]
            n = np.linalg.norm(out[i])
            if n == 0.0:
                raise KeyConfigError("linearly dependent draws during orthogonalization")
            out[i] /= n
    return out


def orthonormal_rows(m: int, d: int, rng: Rng) -> np.ndarray:
    """m seeded orthonormal row vectors in R^d (requires m <= d)."""
    if m > d:
        raise KeyConfigError(f"cannot draw {m} orthonormal vectors in dimension {d}")
    return gram_schmidt(rng.normal((m, d)))


@dataclass(frozen=True)
class StaticKeySet:
    """Fixed anchor vectors, one per prompt expert; never updated after init."""

    keys: np.ndarray  # (M, D)
    strategy: str

    @property
    def count(self) -> int:
        return self.keys.shape[0]

    @property
    def dims(self) -> int:
        return self.keys.shape[1]


def init_keys(m: int, d: int, strategy: str, rng: Rng) -> StaticKeySet:
    """Draw M static keys of dimension D under the named strategy.

    ``orthogonal`` gives pairwise-orthogonal unit vectors (Gram-Schmidt over
    seeded normal draws) and requires M <= D; ``uniform`` samples entries from
    [0, 1); ``normal`` from N(0, 1); ``binary`` from {0, 1}.
    """
    if strategy not in KEY_STRATEGIES:
        raise KeyConfigError(f"unknown key strategy '{strategy}' (choose from {KEY_STRATEGIES})")
    if m < 1:
        raise KeyConfigError("need at least one key")
    if strategy == "orthogonal":
        if m > d:
            raise KeyConfigError(f"orthogonal strategy needs M <= D, got M={m} > D={d}")
        keys = orthonormal_rows(m, d, rng)
    elif strategy == "uniform":
        keys = rng.uniform((m, d))
    elif strategy == "normal":
        keys = rng.normal((m, d))
    else:  # binary
        keys = rng.integers(0, 2, size=(m, d)).astype(np.float64)
        for i in range(m):
            # all-zero rows would make the routing cost undefined; redraw
            while not keys[i].any():
                keys[i] = rng.integers(0, 2, size=d).astype(np.float64)
    return StaticKeySet(keys=keys, strategy=strategy)
