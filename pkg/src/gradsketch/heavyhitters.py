"""Approximate top-k extraction from merged count sketches.

The server never sees worker vectors, only their merged sketch.  Recovery of
a k-sparse update runs in two rounds: the sketch nominates candidate
coordinates (a thresholded heavy set plus a uniform random fill, or a plain
top-P*k of the point estimates), then an exact-lookup round fetches the true
values of the nominated coordinates from the workers.  Returned vectors
therefore carry exact values on their support; all approximation error lives
in which coordinates were nominated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from gradsketch.sketch import CountSketch, SketchConfig, size_for, sketch_vector

# An exact-value oracle: maps a sorted array of coordinate indices to the
# true values of the summarized vector at those indices.
ExactLookup = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class KSparseVector:
    """A sparse vector with strictly increasing indices.

    Attributes:
        d: ambient dimension.
        indices: int64 array, strictly increasing, all in ``[0, d)``.
        values: float64 array aligned with ``indices``.
    """

    d: int
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        if idx.shape != vals.shape or idx.ndim != 1:
            raise ValueError("indices and values must be aligned 1-d arrays")
        if idx.size:
            if idx[0] < 0 or idx[-1] >= self.d:
                raise ValueError(f"indices out of range for dimension {self.d}")
            if np.any(np.diff(idx) <= 0):
                raise ValueError("indices must be strictly increasing")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return int(self.indices.size)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.d, dtype=np.float64)
        out[self.indices] = self.values
        return out


def topk_indices(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries of ``|values|``, ascending.

    Ties in magnitude resolve to the lower index (stable sort), so the
    selection is deterministic.
    """
    values = np.asarray(values)
    if not 0 <= k <= values.size:
        raise ValueError(f"k={k} out of range for {values.size} values")
    order = np.argsort(-np.abs(values), kind="stable")
    return np.sort(order[:k])


def top_pk_candidates(sketch: CountSketch, p: int, k: int) -> np.ndarray:
    """The min(P*k, d) coordinates with largest estimated magnitude.

    Args:
        sketch: merged sketch to query.
        p: candidate multiplier, at least 1.
        k: target sparsity, in ``[1, d]``.

    Returns:
        Sorted int64 index array of size ``min(p * k, d)``.
    """
    d = sketch.config.d
    if p < 1:
        raise ValueError(f"candidate multiplier must be >= 1, got {p}")
    if not 1 <= k <= d:
        raise ValueError(f"k must be in [1, {d}], got {k}")
    return topk_indices(sketch.estimate_all(), min(p * k, d))


def heavymix(sketch: CountSketch, k: int, lookup: ExactLookup, rng_seed: int) -> KSparseVector:
    """Recover a k-sparse approximation of the sketched vector.

    Coordinates whose estimated squared value clears a ``1/k`` share of the
    estimated squared norm form the heavy set (truncated to the k largest
    estimates if it overflows).  The remaining budget is filled by sampling
    uniformly without replacement from the complement, which is what makes
    the expected residual contract by a ``k/d`` factor even when nothing is
    heavy.  The returned values come from ``lookup``, so they are exact.

    The ``k <= d/2`` regime is the one the contraction guarantee covers;
    larger k (up to d) is accepted and simply nominates more of the vector.

    Args:
        sketch: merged sketch of the target vector.
        k: output sparsity, in ``[1, d]``.
        lookup: exact-value oracle; receives a sorted index array.
        rng_seed: seed for the uniform fill, making the call deterministic.

    Returns:
        KSparseVector with exactly ``k`` entries and exact values.
    """
    d = sketch.config.d
    if not 1 <= k <= d:
        raise ValueError(f"k must be in [1, {d}], got {k}")
    est = sketch.estimate_all()
    l2_hat = sketch.l2_squared_estimate()
    est_sq = est * est
    # A coordinate estimated at exactly zero carries no estimated mass and is
    # never treated as heavy; this also keeps the zero vector's heavy set
    # empty instead of degenerate-everything.
    heavy = (est_sq >= l2_hat / k) & (est_sq > 0.0)
    heavy_idx = np.flatnonzero(heavy)
    if heavy_idx.size > k:
        order = np.argsort(-np.abs(est[heavy_idx]), kind="stable")
        chosen = heavy_idx[order[:k]]
    else:
        chosen = heavy_idx
        fill = k - heavy_idx.size
        if fill > 0:
            pool = np.flatnonzero(~heavy)
            rng = np.random.default_rng(rng_seed)
            sampled = rng.choice(pool, size=fill, replace=False)
            chosen = np.concatenate([chosen, sampled])
    support = np.sort(chosen.astype(np.int64))
    values = np.asarray(lookup(support), dtype=np.float64)
    if values.shape != support.shape:
        raise ValueError("lookup returned a value array of the wrong shape")
    return KSparseVector(d=d, indices=support, values=values)


def gaussian_vector(rng: np.random.Generator, d: int) -> np.ndarray:
    return rng.standard_normal(d)


def zipf_vector(rng: np.random.Generator, d: int, exponent: float = 1.2) -> np.ndarray:
    """Power-law magnitudes ``i**-exponent`` with random signs and positions."""
    mags = np.arange(1, d + 1, dtype=np.float64) ** (-exponent)
    signs = rng.choice([-1.0, 1.0], size=d)
    out = np.zeros(d)
    out[rng.permutation(d)] = signs * mags
    return out


def ksparse_vector(rng: np.random.Generator, d: int, k: int, magnitude: float = 1.0) -> np.ndarray:
    """Exactly k nonzeros of equal magnitude at random positions."""
    out = np.zeros(d)
    support = rng.choice(d, size=k, replace=False)
    out[support] = magnitude * rng.choice([-1.0, 1.0], size=k)
    return out


def contraction_ratio(
    d: int,
    k: int,
    make_vector: Callable[[np.random.Generator, int], np.ndarray],
    trials: int,
    rng_seed: int,
    delta: float = 0.01,
) -> float:
    """Monte-Carlo estimate of ``E ||g - heavymix(g)||^2 / ||g||^2``.

    Each trial draws a fresh vector and a fresh hash seed, sketches at the
    ``size_for(k, d, delta)`` shape, and recovers with an exact lookup.  The
    mean ratio should not exceed ``1 - k/d`` by more than Monte-Carlo and
    failure-probability slack.

    Only ``k <= d/2`` is accepted: that is the regime the bound covers.
    """
    if not 1 <= k <= d // 2:
        raise ValueError(f"contraction oracle needs 1 <= k <= d/2, got k={k}, d={d}")
    if trials < 1:
        raise ValueError("trials must be positive")
    r, c = size_for(k, d, delta)
    seeds = np.random.SeedSequence(rng_seed).spawn(trials)
    total = 0.0
    for trial_seq in seeds:
        sub = trial_seq.generate_state(2)
        rng = np.random.default_rng(int(sub[0]))
        g = make_vector(rng, d)
        norm_sq = float(g @ g)
        if norm_sq == 0.0:
            continue
        cfg = SketchConfig(d=d, r=r, c=c, seed=int(sub[1]))
        recovered = heavymix(sketch_vector(cfg, g), k, lambda idx: g[idx], int(sub[0]))
        resid = g - recovered.to_dense()
        total += float(resid @ resid) / norm_sq
    return total / trials
