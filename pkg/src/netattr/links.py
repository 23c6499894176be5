"""Observation models linking latent relations ``z[i, j]`` to observed relations.

Each link maps an observed value (and, for ranks, the rest of the sender's
latent row) to the interval that ``z[i, j]`` must occupy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import NumericalError, ValidationError


@dataclass(frozen=True)
class TruncationRegion:
    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        if not self.lower < self.upper:
            raise NumericalError(f"empty truncation region ({self.lower}, {self.upper})")

    def contains(self, z) -> bool:
        # open at the lower end, closed at a finite upper end
        return self.lower < z <= self.upper


UNCONSTRAINED = TruncationRegion()


@dataclass(frozen=True)
class FrnRow:
    """One sender's nominations.  ``ranks[j] = 0`` means j was not listed; NaN means unknown."""

    ranks: np.ndarray
    cap: int

    def __post_init__(self):
        ranks = np.asarray(self.ranks, dtype=np.float64)
        listed = ranks[ranks > 0]
        if listed.size != np.unique(listed).size:
            raise ValidationError("nonzero ranks in a row must be distinct")
        if listed.size > self.cap or np.any(listed > self.cap):
            raise ValidationError("row lists more nominations than the cap allows")
        object.__setattr__(self, "ranks", ranks)

    @property
    def listed_count(self) -> int:
        return int(np.sum(self.ranks > 0))


def region_binary(y) -> TruncationRegion:
    """Probit link with threshold 0."""
    if y is None or (isinstance(y, float) and math.isnan(y)):
        return UNCONSTRAINED
    if y == 1:
        return TruncationRegion(0.0, math.inf)
    if y == 0:
        return TruncationRegion(-math.inf, 0.0)
    raise ValidationError(f"binary relation must be 0 or 1, got {y}")


def region_ordinal(y, cutpoints) -> TruncationRegion:
    """Ordered probit: level ``y`` in 1..L occupies ``(c[y-2], c[y-1]]``."""
    c = np.asarray(cutpoints, dtype=np.float64)
    if c.size and np.any(np.diff(c) <= 0):
        raise ValidationError("cutpoints must be strictly increasing")
    if y is None or (isinstance(y, float) and math.isnan(y)):
        return UNCONSTRAINED
    level = int(y)
    if level != y or not 1 <= level <= c.size + 1:
        raise ValidationError(f"ordinal level {y} outside 1..{c.size + 1}")
    lo = -math.inf if level == 1 else float(c[level - 2])
    hi = math.inf if level == c.size + 1 else float(c[level - 1])
    return TruncationRegion(lo, hi)


def region_frn(row: FrnRow, j: int, z_row) -> TruncationRegion:
    """Interval for ``z[i, j]`` implied by the nomination consistencies, given the
    sender's other latent values.

    * listed relations are positive;
    * a higher rank means a larger latent value (unlisted counts as rank 0);
    * if fewer than ``cap`` were listed, unlisted relations are non-positive.

    When the sender used every nomination, unlisted relations only need to fall
    below the sender's listed ones.
    """
    ranks = row.ranks
    z = np.asarray(z_row, dtype=np.float64)
    r = ranks[j]
    if math.isnan(r):
        return UNCONSTRAINED
    known = ~np.isnan(ranks)
    known[j] = False
    lo = 0.0 if r > 0 else -math.inf
    hi = math.inf
    lower = known & (ranks < r)
    higher = known & (ranks > r)
    if lower.any():
        lo = max(lo, float(z[lower].max()))
    if higher.any():
        hi = min(hi, float(z[higher].min()))
    if r == 0 and row.listed_count < row.cap:
        hi = min(hi, 0.0)
    return TruncationRegion(lo, hi)


def frn_feasible(ranks, z_row, cap, strict=True) -> bool:
    """Brute-force check of every pairwise nomination consistency in one row."""
    ranks = np.asarray(ranks, dtype=np.float64)
    z = np.asarray(z_row, dtype=np.float64)
    idx = np.nonzero(~np.isnan(ranks))[0]
    listed = int(np.sum(ranks[idx] > 0))
    for j in idx:
        if ranks[j] > 0 and not z[j] > 0:
            return False
        if ranks[j] == 0 and listed < cap and not z[j] <= 0:
            return False
        for k in idx:
            if k != j and ranks[j] > ranks[k] and not z[j] > z[k]:
                return False
    return True


def sample_truncated_normal(mean, sd, region: TruncationRegion, rng) -> float:
    """One draw from ``normal(mean, sd**2)`` restricted to ``region`` (CDF inversion
    with log-space tails)."""
    if not sd > 0:
        raise ValidationError("sd must be positive")
    u = 1.0 - rng.random()
    a = (region.lower - mean) / sd
    b = (region.upper - mean) / sd
    return float(mean + sd * _kernels.truncnorm_std_scalar(a, b, u))


def rtruncnorm(mean, sd, lower, upper, rng):
    """Vectorized truncated-normal draws."""
    mean, sd, lower, upper = np.broadcast_arrays(*(np.asarray(x, dtype=np.float64) for x in (mean, sd, lower, upper)))
    u = 1.0 - rng.random(mean.shape)
    return mean + sd * _kernels.truncnorm_std_vec((lower - mean) / sd, (upper - mean) / sd, u)


# ---------------------------------------------------------------------------
# matrix forms used by the sampler
# ---------------------------------------------------------------------------


def binary_bounds(values, observed):
    lo = np.full(values.shape, -np.inf)
    hi = np.full(values.shape, np.inf)
    ones = observed & (values == 1)
    zeros = observed & (values == 0)
    lo[ones] = 0.0
    hi[zeros] = 0.0
    return lo, hi


def ordinal_bounds(values, observed, cutpoints):
    edges = np.concatenate([[-np.inf], np.asarray(cutpoints, dtype=np.float64), [np.inf]])
    lev = np.where(observed, values, 1).astype(np.int64)
    lo = np.where(observed, edges[lev - 1], -np.inf)
    hi = np.where(observed, edges[lev], np.inf)
    return lo, hi


def initial_cutpoints(values, observed):
    """Cutpoints at normal quantiles of the empirical level frequencies, shifted so
    the first sits at 0 (the overall mean absorbs location)."""
    levels = values[observed].astype(np.int64)
    L = int(levels.max()) if levels.size else 1
    if L < 2:
        return np.zeros(0)
    counts = np.bincount(levels, minlength=L + 1)[1:].astype(np.float64) + 0.5
    cum = np.cumsum(counts)[:-1] / counts.sum()
    from scipy.special import ndtri

    c = ndtri(cum)
    return c - c[0]


def update_cutpoints(Z, values, observed, cutpoints, rng):
    """Gibbs update of cutpoints 2..L-1 under a flat prior; the first stays at 0.

    Each free cutpoint is uniform between the largest latent value at or below it
    and the smallest latent value above it.
    """
    c = np.array(cutpoints, dtype=np.float64)
    for t in range(1, c.size):
        below = observed & (values == t + 1)
        above = observed & (values == t + 2)
        lo = max(Z[below].max() if below.any() else -np.inf, c[t - 1])
        hi = min(Z[above].min() if above.any() else np.inf, c[t + 1] if t + 1 < c.size else np.inf)
        if not np.isfinite(lo) or not np.isfinite(hi):
            continue
        if hi > lo:
            c[t] = rng.uniform(lo, hi)
    return c


def frn_structure(values, observed, cap):
    """Integer rank matrix, padded listed-index table and capped-row flags."""
    n = values.shape[0]
    ranks = np.where(observed, values, 0).astype(np.int64)
    listed = np.full((n, cap), -1, dtype=np.int64)
    capped = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        idx = np.nonzero(observed[i] & (ranks[i] > 0))[0]
        listed[i, : idx.size] = idx
        capped[i] = idx.size >= cap
    return ranks, listed, capped


def frn_initial_row(ranks, observed, cap):
    """Latent values satisfying every consistency: listed entries at positive normal
    scores ordered by rank, unlisted entries below them."""
    from scipy.special import ndtri

    z = np.zeros(ranks.shape)
    listed = observed & (ranks > 0)
    # ranks 1..cap mapped to increasing positive scores
    z[listed] = ndtri(0.5 + 0.5 * ranks[listed] / (cap + 1.0))
    z[observed & (ranks == 0)] = -0.5
    return z
