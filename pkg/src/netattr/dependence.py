"""Likelihood-ratio test of independence between nodal attributes and network factors.

The statistic depends on the data only through the canonical correlations between
the attribute matrix ``X`` (n x p) and the factor matrix ``N`` (n x q), and its null
law is Wilks' Lambda, a product of independent beta variables.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NumericalError, ValidationError

COND_LIMIT = 1e10
TRANSFORM_COND_LIMIT = 1e12
SATURATION_TOL = 1e-12
DEFAULT_NULL_DRAWS = 100_000


def _prepare(X, N, center):
    X = np.asarray(X, dtype=np.float64)
    N = np.asarray(N, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if N.ndim == 1:
        N = N[:, None]
    if X.shape[0] != N.shape[0]:
        raise ValidationError("X and N must have the same number of rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(N))):
        raise ValidationError("X and N must be finite")
    n, p = X.shape
    q = N.shape[1]
    n_eff = n - 1 if center else n
    if not n_eff > p + q:
        raise ValidationError(f"need n > p + q (n={n}, p={p}, q={q}{', centered' if center else ''})")
    if center:
        X = X - X.mean(axis=0)
        N = N - N.mean(axis=0)
    for name, M in (("X", X), ("N", N)):
        if np.linalg.cond(M.T @ M) > COND_LIMIT:
            raise ValidationError(f"{name} is rank-deficient (cross-product condition number above {COND_LIMIT:g})")
    return X, N, n, n_eff


def _orthobasis(M):
    Q, _ = np.linalg.qr(M)
    return Q


def canonical_correlations(X, N, center=False) -> np.ndarray:
    """Canonical correlations between the columns of ``X`` and of ``N``.

    Parameters
    ----------
    X : (n, p) array
        Attributes, assumed centered unless ``center=True``.
    N : (n, q) array
    center : bool
        Subtract column means first (the null then has ``n - 1`` degrees of freedom).

    Returns
    -------
    (min(p, q),) array sorted decreasing, clamped to [0, 1].
    """
    X, N, _, _ = _prepare(X, N, center)
    r = np.linalg.svd(_orthobasis(X).T @ _orthobasis(N), compute_uv=False)
    return np.clip(np.sort(r)[::-1], 0.0, 1.0)


def log_lambda(r, n) -> float:
    """``log Lambda = -(n/2) sum log(1 - r_i^2)``; ``inf`` when some ``r_i = 1``."""
    r = np.asarray(r, dtype=np.float64)
    one_minus = 1.0 - r * r
    if np.any(one_minus <= SATURATION_TOL):
        return np.inf
    return float(-0.5 * n * np.sum(np.log(one_minus)))


def _wilks_from_r(r):
    r = np.asarray(r, dtype=np.float64)
    if np.any(1.0 - r * r <= SATURATION_TOL):
        return 0.0
    return float(np.prod(1.0 - r * r))


def lrt_statistic(X, N, center=False):
    """Return ``(lambda, wilks)``; lambda is ``inf`` (and wilks 0) for a saturated statistic."""
    r = canonical_correlations(X, N, center)
    n = np.shape(X)[0]
    ll = log_lambda(r, n)
    return (float(np.exp(ll)) if np.isfinite(ll) else np.inf), _wilks_from_r(r)


def _beta_shapes(p, q, n):
    i = np.arange(1, p + 1)
    a = (n - q - p + i) / 2.0
    if p < 1 or q < 1 or np.any(a <= 0):
        raise ValidationError(f"invalid Wilks parameters p={p}, q={q}, n={n}: need n - q - p + 1 > 0")
    return a, np.full(p, q / 2.0)


def wilks_mean(p, q, n) -> float:
    a, b = _beta_shapes(p, q, n)
    return float(np.prod(a / (a + b)))


def wilks_null_quantiles(p, q, n, num_draws=DEFAULT_NULL_DRAWS, rng=None) -> np.ndarray:
    """``num_draws`` independent draws of the product of ``p`` beta variables
    ``Beta((n - q - p + i)/2, q/2)``, i = 1..p."""
    a, b = _beta_shapes(p, q, n)
    rng = np.random.default_rng() if rng is None else rng
    W = np.ones(int(num_draws))
    for ai, bi in zip(a, b):
        W *= rng.beta(ai, bi, int(num_draws))
    return W


_CACHE: dict = {}
_CACHE_LOCK = threading.Lock()


def null_draws(p, q, n, num_draws=DEFAULT_NULL_DRAWS, seed=0) -> np.ndarray:
    """Sorted, cached null draws keyed by ``(p, q, n, seed, num_draws)``."""
    key = (int(p), int(q), int(n), int(seed), int(num_draws))
    with _CACHE_LOCK:
        hit = _CACHE.get(key)
    if hit is not None:
        return hit
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(0x5717, p, q, n)))
    draws = np.sort(wilks_null_quantiles(p, q, n, num_draws, rng))
    draws.setflags(write=False)
    with _CACHE_LOCK:
        return _CACHE.setdefault(key, draws)


def clear_null_cache():
    with _CACHE_LOCK:
        _CACHE.clear()


@dataclass(frozen=True)
class TestResult:
    canonical_correlations: np.ndarray
    lambda_: float
    wilks: float
    p_value: float
    alpha: float
    reject: bool
    null_draws_used: int
    seed: Optional[int] = None
    saturated: bool = False

    __test__ = False  # not a pytest class

    def to_dict(self):
        return {
            "r": [float(x) for x in self.canonical_correlations],
            "lambda": None if not np.isfinite(self.lambda_) else float(self.lambda_),
            "wilks": float(self.wilks),
            "p_value": float(self.p_value),
            "alpha": float(self.alpha),
            "reject": bool(self.reject),
            "null_draws_used": int(self.null_draws_used),
            "seed": self.seed,
            "saturated": bool(self.saturated),
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text


def test_independence(X, N, alpha=0.05, num_draws=DEFAULT_NULL_DRAWS, seed=0, rng=None,
                      center=False) -> TestResult:
    """Exact level-``alpha`` test that attributes and factors are uncorrelated.

    The p-value is the fraction of null Wilks draws at or below the observed
    statistic (small values are evidence of dependence).  Null draws come from the
    shared cache for ``seed`` unless an explicit ``rng`` is given.
    """
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    X2, N2, n, n_eff = _prepare(X, N, center)
    r = np.clip(np.sort(np.linalg.svd(_orthobasis(X2).T @ _orthobasis(N2), compute_uv=False))[::-1], 0.0, 1.0)
    p, q = X2.shape[1], N2.shape[1]
    W = _wilks_from_r(r)
    ll = log_lambda(r, n)
    if rng is None:
        draws = null_draws(p, q, n_eff, num_draws, seed)
    else:
        draws = np.sort(wilks_null_quantiles(p, q, n_eff, num_draws, rng))
        seed = None
    p_value = float(np.searchsorted(draws, W, side="right") / draws.size)
    return TestResult(
        canonical_correlations=r, lambda_=float(np.exp(ll)) if np.isfinite(ll) else np.inf, wilks=W,
        p_value=p_value, alpha=float(alpha), reject=bool(p_value < alpha),
        null_draws_used=int(draws.size), seed=seed, saturated=not np.isfinite(ll),
    )


def _residual_logdet(Y, Z):
    """log det of the residual cross-product of ``Y`` after regression on ``Z``."""
    Q = _orthobasis(Z)
    R = Y - Q @ (Q.T @ Y)
    sign, ld = np.linalg.slogdet(R.T @ R)
    if sign <= 0:
        return -np.inf
    return ld


def conditional_lrt(X, N, direction="x_given_n", center=False):
    """LRT for a zero coefficient matrix in the multivariate regression of one block
    on the other, from residual cross-product determinants.  Returns ``(lambda, wilks)``."""
    X, N, n, _ = _prepare(X, N, center)
    if direction == "x_given_n":
        Y, Z = X, N
    elif direction == "n_given_x":
        Y, Z = N, X
    else:
        raise ValidationError(f"unknown direction {direction!r}")
    _, ld_full = np.linalg.slogdet(Y.T @ Y)
    ld_res = _residual_logdet(Y, Z)
    log_w = ld_res - ld_full
    if not np.isfinite(log_w) or log_w < np.log(SATURATION_TOL):
        return np.inf, 0.0
    return float(np.exp(-0.5 * n * log_w)), float(np.exp(log_w))


@dataclass(frozen=True)
class InvarianceTransform:
    """Separate nonsingular linear maps of each node's attribute and factor vectors."""

    block_x: np.ndarray
    block_n: np.ndarray

    def __post_init__(self):
        for name in ("block_x", "block_n"):
            B = np.atleast_2d(np.asarray(getattr(self, name), dtype=np.float64))
            if B.shape[0] != B.shape[1]:
                raise ValidationError(f"{name} must be square")
            if not np.all(np.isfinite(B)) or np.linalg.cond(B) > TRANSFORM_COND_LIMIT:
                raise ValidationError(f"{name} is singular")
            object.__setattr__(self, name, B)

    @classmethod
    def identity(cls, p, q):
        return cls(np.eye(p), np.eye(q))

    @classmethod
    def from_factor_map(cls, A, p):
        """The element acting as ``u -> A' u``, ``v -> A^{-1} v``; additive effects and
        attributes are left alone, and ``u_i' v_j`` is preserved."""
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        k = A.shape[0]
        if A.shape != (k, k) or np.linalg.cond(A) > TRANSFORM_COND_LIMIT:
            raise ValidationError("A must be a nonsingular square matrix")
        B = np.eye(2 + 2 * k)
        B[2:2 + k, 2:2 + k] = A.T
        B[2 + k:, 2 + k:] = np.linalg.inv(A)
        return cls(np.eye(p), B)

    @classmethod
    def random(cls, p, q, rng, max_cond=1e8):
        """Random well-conditioned element (for invariance checks)."""
        def draw(m):
            while True:
                B = rng.standard_normal((m, m))
                if np.linalg.cond(B) < max_cond:
                    return B
        return cls(draw(p), draw(q))


def apply_transform(X, N, t: InvarianceTransform):
    """Row-wise action ``x_i -> B_x x_i``, ``n_i -> B_n n_i``."""
    X = np.asarray(X, dtype=np.float64)
    N = np.asarray(N, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if t.block_x.shape[0] != X.shape[1] or t.block_n.shape[0] != N.shape[1]:
        raise ValidationError("transform blocks do not match the data dimensions")
    return X @ t.block_x.T, N @ t.block_n.T
