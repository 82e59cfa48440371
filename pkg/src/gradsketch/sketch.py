"""Mergeable count sketches over dense gradient vectors.

A count sketch summarizes a vector ``g`` of dimension ``d`` in an ``r x c``
table of float64 cells.  Each row ``j`` owns a pair of 4-wise independent
hash functions: a bucket hash ``h_j : [d) -> [c)`` and a sign hash
``s_j : [d) -> {-1, +1}``.  Accumulating weight ``w`` at index ``i`` adds
``s_j(i) * w`` to cell ``(j, h_j(i))`` for every row.  The structure is
linear in its input, which gives the two properties everything else here
relies on:

* sketches of partial gradients can be merged cell-wise, and the merge of
  ``sketch(g1)`` and ``sketch(g2)`` equals ``sketch(g1 + g2)`` exactly
  (up to float addition order);
* a single coordinate is recovered by the median over rows of
  ``s_j(i) * table[j, h_j(i)]``, with error controlled by the mass of the
  colliding coordinates, and the squared norm is recovered by the median
  over rows of the row's sum of squared cells.

Hashes are degree-3 polynomials over the Mersenne prime ``2**61 - 1`` with
coefficients drawn from a counter-based Philox stream keyed by the config
seed, so a config fully determines the hash family on every platform.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MERSENNE_P = (1 << 61) - 1

_HEADER = struct.Struct("<4sHQIIQ")
_MAGIC = b"CSK1"
_VERSION = 1


class ConfigMismatchError(ValueError):
    """Raised when two sketches with different configs are combined."""


@dataclass(frozen=True)
class SketchConfig:
    """Shape and seeding of a count sketch.

    Two sketches interoperate (merge, compare) exactly when their configs
    are equal field-for-field.

    Attributes:
        d: dimension of the summarized vectors.
        r: number of table rows (independent hash pairs).
        c: number of buckets per row.
        seed: hash-family seed; must fit in an unsigned 64-bit integer.
    """

    d: int
    r: int
    c: int
    seed: int

    def __post_init__(self):
        for name in ("d", "r", "c"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.r >= 1 << 32 or self.c >= 1 << 32:
            raise ValueError(f"table dims r={self.r}, c={self.c} exceed u32 range")
        if self.d >= 1 << 64:
            raise ValueError(f"dimension d={self.d} exceeds u64 range")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 1 << 64:
            raise ValueError(f"seed must be an integer in [0, 2**64), got {self.seed!r}")


def size_for(k: int, d: int, delta: float, row_constant: float = 1.0, col_constant: int = 6) -> tuple[int, int]:
    """Table shape sized to recover k heavy coordinates out of d.

    Returns ``(r, c)`` with ``r = ceil(row_constant * log2(d / delta))``
    rows and ``c = col_constant * k`` buckets, the failure-probability /
    collision-mass trade-off the recovery guarantees are stated for.

    Args:
        k: number of coordinates the caller intends to extract.
        d: vector dimension.
        delta: failure probability budget, in (0, 1).

    Raises:
        ValueError: if ``k`` is not in ``[1, d]`` or ``delta`` not in (0, 1).
    """
    if not isinstance(k, int) or not isinstance(d, int) or k < 1 or d < 1 or k > d:
        raise ValueError(f"need 1 <= k <= d, got k={k!r}, d={d!r}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta!r}")
    if row_constant <= 0 or col_constant < 1:
        raise ValueError("size constants must be positive")
    r = math.ceil(row_constant * math.log2(d / delta))
    return max(r, 1), int(col_constant) * k


def _mulmod_p61(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Product modulo 2**61 - 1 on uint64 arrays with all values < 2**61.
    # Splits each factor at 32 bits so no intermediate overflows, then folds
    # the high parts back with 2**61 = 1 (mod p).
    mask32 = np.uint64(0xFFFFFFFF)
    p = np.uint64(MERSENNE_P)
    ah, al = a >> np.uint64(32), a & mask32
    bh, bl = b >> np.uint64(32), b & mask32
    mid = ah * bl + al * bh
    mid_hi, mid_lo = mid >> np.uint64(29), mid & np.uint64((1 << 29) - 1)
    lo = al * bl
    lo = (lo >> np.uint64(61)) + (lo & p)
    s = ((ah * bh) << np.uint64(3)) + mid_hi + (mid_lo << np.uint64(32)) + lo
    s = (s >> np.uint64(61)) + (s & p)
    return np.where(s >= p, s - p, s)


def _poly_eval(coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
    # Horner evaluation of per-row degree-3 polynomials mod 2**61 - 1.
    # coeffs: (rows, 4) uint64, highest degree first; x: (n,) uint64.
    p = np.uint64(MERSENNE_P)
    rows = coeffs.shape[0]
    acc = np.broadcast_to(coeffs[:, 0][:, None], (rows, x.shape[0])).copy()
    for deg in range(1, coeffs.shape[1]):
        acc = _mulmod_p61(acc, x[None, :]) + coeffs[:, deg][:, None]
        acc = np.where(acc >= p, acc - p, acc)
    return acc


class HashFamily:
    """Bucket and sign hashes for every row of a sketch config.

    The family is materialized as lookup tables over all ``d`` indices:
    ``buckets[j, i]`` is the bucket of index ``i`` in row ``j`` and
    ``signs[j, i]`` its sign.  Construction is deterministic in the config;
    rebuilding from an equal config reproduces the tables bit for bit.
    """

    def __init__(self, config: SketchConfig):
        self.config = config
        rng = np.random.Generator(np.random.Philox(key=config.seed))
        coeffs = rng.integers(0, MERSENNE_P, size=(config.r, 2, 4), dtype=np.uint64)
        idx = np.arange(config.d, dtype=np.uint64)
        if config.d > MERSENNE_P:
            raise ValueError("dimension exceeds the hash field size")
        bucket_vals = _poly_eval(coeffs[:, 0, :], idx)
        sign_vals = _poly_eval(coeffs[:, 1, :], idx)
        self.buckets = (bucket_vals % np.uint64(config.c)).astype(np.int64)
        self.signs = 1.0 - 2.0 * (sign_vals & np.uint64(1)).astype(np.float64)
        # Flattened (row, bucket) offsets so gathers against table.ravel()
        # touch all rows in one indexing op.
        self._flat = self.buckets + (np.arange(config.r, dtype=np.int64) * config.c)[:, None]


@lru_cache(maxsize=32)
def _family_for(config: SketchConfig) -> HashFamily:
    return HashFamily(config)


class CountSketch:
    """An ``r x c`` count-sketch table bound to a :class:`SketchConfig`.

    A fresh sketch is all zeros.  All mutation happens through
    :meth:`accumulate` / :meth:`update_dense`; estimation and merging never
    modify the table in place.
    """

    __slots__ = ("config", "table", "_family")

    def __init__(self, config: SketchConfig, _family: HashFamily | None = None, _table: np.ndarray | None = None):
        self.config = config
        self._family = _family if _family is not None else _family_for(config)
        if _table is None:
            self.table = np.zeros((config.r, config.c), dtype=np.float64)
        else:
            self.table = _table

    def zero_like(self) -> "CountSketch":
        """Fresh empty sketch sharing this sketch's config and hash family."""
        return CountSketch(self.config, _family=self._family)

    def copy(self) -> "CountSketch":
        return CountSketch(self.config, _family=self._family, _table=self.table.copy())

    def accumulate(self, index: int, weight: float) -> None:
        """Add ``weight`` at ``index``, touching one cell per row."""
        cfg = self.config
        if not 0 <= index < cfg.d:
            raise IndexError(f"index {index} out of range for dimension {cfg.d}")
        fam = self._family
        self.table[np.arange(cfg.r), fam.buckets[:, index]] += fam.signs[:, index] * weight

    def update_dense(self, vec: np.ndarray) -> None:
        """Accumulate every nonzero coordinate of a dense length-d vector."""
        cfg = self.config
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (cfg.d,):
            raise ValueError(f"expected vector of shape ({cfg.d},), got {vec.shape}")
        nz = np.nonzero(vec)[0]
        if nz.size == 0:
            return
        fam = self._family
        flat = fam._flat[:, nz].ravel()
        weights = (fam.signs[:, nz] * vec[nz]).ravel()
        self.table += np.bincount(flat, weights=weights, minlength=cfg.r * cfg.c).reshape(cfg.r, cfg.c)

    def point_estimate(self, index: int) -> float:
        """Median-of-rows estimate of the summarized value at ``index``."""
        cfg = self.config
        if not 0 <= index < cfg.d:
            raise IndexError(f"index {index} out of range for dimension {cfg.d}")
        fam = self._family
        vals = self.table[np.arange(cfg.r), fam.buckets[:, index]] * fam.signs[:, index]
        return float(np.median(vals))

    def estimate_all(self) -> np.ndarray:
        """Point estimates for every coordinate as a dense length-d vector.

        One gather per row, so cost is Theta(d * r).
        """
        fam = self._family
        vals = self.table.ravel()[fam._flat] * fam.signs
        return np.median(vals, axis=0)

    def l2_squared_estimate(self) -> float:
        """Median over rows of the row-wise sum of squared cells.

        Each row's sum of squares is an unbiased estimate of the summarized
        vector's squared l2 norm; the median tightens the tail.
        """
        return float(np.median(np.sum(self.table * self.table, axis=1)))

    def merge(self, other: "CountSketch") -> "CountSketch":
        """Cell-wise sum with ``other``; requires identical configs."""
        if self.config != other.config:
            raise ConfigMismatchError(
                f"cannot merge sketches with configs {self.config} and {other.config}"
            )
        return CountSketch(self.config, _family=self._family, _table=self.table + other.table)

    def scale(self, alpha: float) -> "CountSketch":
        """New sketch with every cell multiplied by finite scalar ``alpha``."""
        alpha = float(alpha)
        if not math.isfinite(alpha):
            raise ValueError(f"scale factor must be finite, got {alpha!r}")
        return CountSketch(self.config, _family=self._family, _table=self.table * alpha)

    def to_bytes(self) -> bytes:
        """Serialize config and cells; round-trips bit-exactly.

        Layout (little-endian): magic ``CSK1``, version u16, d u64, r u32,
        c u32, seed u64, then ``r * c`` float64 cells in row-major order.
        """
        cfg = self.config
        header = _HEADER.pack(_MAGIC, _VERSION, cfg.d, cfg.r, cfg.c, cfg.seed)
        return header + self.table.astype("<f8", copy=False).tobytes(order="C")

    @classmethod
    def from_bytes(cls, data: bytes) -> "CountSketch":
        if len(data) < _HEADER.size:
            raise ValueError(f"sketch payload truncated: {len(data)} bytes")
        magic, version, d, r, c, seed = _HEADER.unpack_from(data, 0)
        if magic != _MAGIC:
            raise ValueError(f"bad sketch magic {magic!r}")
        if version != _VERSION:
            raise ValueError(f"unsupported sketch version {version}")
        expected = _HEADER.size + 8 * r * c
        if len(data) != expected:
            raise ValueError(f"sketch payload has {len(data)} bytes, expected {expected}")
        config = SketchConfig(d=d, r=r, c=c, seed=seed)
        table = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(r, c).copy()
        return cls(config, _table=table)

    @property
    def num_elements(self) -> int:
        """Cell count ``r * c``, the sketch's cost in transmitted elements."""
        return self.config.r * self.config.c


def sketch_vector(config: SketchConfig, v, _family: HashFamily | None = None) -> CountSketch:
    """Sketch a dense array or an iterable of ``(index, weight)`` pairs."""
    s = CountSketch(config, _family=_family)
    if isinstance(v, np.ndarray):
        s.update_dense(v)
    else:
        for index, weight in v:
            s.accumulate(int(index), float(weight))
    return s


def merge_all(sketches) -> CountSketch:
    """Merge sketches by a left fold in the given order.

    Fixing the reduction order keeps float addition bit-reproducible when
    the same collection is merged again.
    """
    sketches = list(sketches)
    if not sketches:
        raise ValueError("cannot merge an empty collection of sketches")
    out = sketches[0].copy()
    for s in sketches[1:]:
        if s.config != out.config:
            raise ConfigMismatchError(
                f"cannot merge sketches with configs {out.config} and {s.config}"
            )
        out.table += s.table
    return out
