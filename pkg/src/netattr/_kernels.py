"""Hot loops for the latent-relation Gibbs scans.

Two interchangeable implementations live here: numba-compiled scalar loops and
vectorized numpy/scipy code.  The numpy path is selected by setting
``NETATTR_DISABLE_NUMBA=1`` (it is also used when numba is not importable).

Both paths consume the random stream in the same order and invert the same
truncated-normal CDF, so for a given generator state they agree up to
floating-point round-off in the special functions.
"""

import math
import os

import numpy as np
from scipy import special

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

_FLAG = os.environ.get("NETATTR_DISABLE_NUMBA", "0").strip().lower()
USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")

BACKENDS = ("numba", "numpy") if HAVE_NUMBA else ("numpy",)
DEFAULT_BACKEND = "numba" if USE_NUMBA else "numpy"

_SQRT1_2 = 1.0 / math.sqrt(2.0)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG_HALF = math.log(0.5)


def _jit(func):
    if HAVE_NUMBA:
        return numba.njit(cache=True)(func)
    return func


# ---------------------------------------------------------------------------
# scalar special functions (pure ``math``; compiled when numba is present)
# ---------------------------------------------------------------------------


@_jit
def _log_ndtr(x):
    """log of the standard normal CDF, accurate in both tails."""
    if x > 6.0:
        return math.log1p(-0.5 * math.erfc(x * _SQRT1_2))
    if x > -37.0:
        return math.log(0.5 * math.erfc(-x * _SQRT1_2))
    # asymptotic expansion of the Mills ratio
    x2 = 1.0 / (x * x)
    series = 1.0 + x2 * (-1.0 + x2 * (3.0 + x2 * (-15.0 + x2 * (105.0 + x2 * (-945.0 + x2 * 10395.0)))))
    return -0.5 * x * x - math.log(-x) - _HALF_LOG_2PI + math.log(series)


@_jit
def _ndtri_exp(y):
    """Inverse of ``_log_ndtr`` for ``y <= log(0.5)`` (Wichura's AS241 in log form)."""
    p = math.exp(y)
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = ((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r
                   + 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r
                 + 1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r
               + 1.3314166789178437745e2) * r + 3.3871328727963666080e0
        den = ((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r
                   + 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r
                 + 5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r
               + 4.2313330701600911252e1) * r + 1.0
        return q * num / den
    r = math.sqrt(-y)
    if r <= 5.0:
        r -= 1.6
        num = ((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r
                   + 2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r
                 + 3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r
               + 4.63033784615654529590e0) * r + 1.42343711074968357734e0
        den = ((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r
                   + 1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r
                 + 6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r
               + 2.05319162663775882187e0) * r + 1.0
    else:
        r -= 5.0
        num = ((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                   + 1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r
                 + 2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r
               + 5.46378491116411436990e0) * r + 6.65790464350110377720e0
        den = ((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r
                   + 1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r
                 + 1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r
               + 5.99832206555887937690e-1) * r + 1.0
    x = -num / den
    if y < -680.0:
        # beyond AS241's tested range: polish with Newton steps on log Phi
        for _ in range(3):
            lx = _log_ndtr(x)
            step = (lx - y) * math.exp(lx + 0.5 * x * x + _HALF_LOG_2PI)
            x -= step
    return x


@_jit
def _tn_lower(a, b, u):
    # region (a, b] with b <= 0: invert in log space
    la = _log_ndtr(a) if a > -math.inf else -math.inf
    lb = _log_ndtr(b)
    one_minus_w = -math.expm1(la - lb)
    logp = lb + math.log1p(-(1.0 - u) * one_minus_w)
    if logp > _LOG_HALF:
        logp = _LOG_HALF
    return _ndtri_exp(logp)


@_jit
def _truncnorm_std(a, b, u):
    """Standard normal restricted to ``(a, b)``, by CDF inversion of ``u`` in (0, 1]."""
    if a >= 0.0:
        x = -_tn_lower(-b, -a, u)
    elif b <= 0.0:
        x = _tn_lower(a, b, u)
    else:
        pa = 0.5 * math.erfc(-a * _SQRT1_2)
        pb = 0.5 * math.erfc(-b * _SQRT1_2)
        p = pa + u * (pb - pa)
        if p <= 0.5:
            x = _ndtri_exp(math.log(p))
        else:
            qa = 0.5 * math.erfc(a * _SQRT1_2)
            qb = 0.5 * math.erfc(b * _SQRT1_2)
            q = qb + (1.0 - u) * (qa - qb)
            x = -_ndtri_exp(math.log(q))
    if x < a:
        x = a
    elif x > b:
        x = b
    return x


log_ndtr_scalar = _log_ndtr
ndtri_exp_scalar = _ndtri_exp
truncnorm_std_scalar = _truncnorm_std


# ---------------------------------------------------------------------------
# vectorized truncated normal (numpy / scipy)
# ---------------------------------------------------------------------------


def _tn_lower_vec(a, b, u):
    with np.errstate(divide="ignore", invalid="ignore"):
        la = special.log_ndtr(a)
        lb = special.log_ndtr(b)
        one_minus_w = -np.expm1(la - lb)
        logp = lb + np.log1p(-(1.0 - u) * one_minus_w)
    return special.ndtri_exp(np.minimum(logp, _LOG_HALF))


def truncnorm_std_vec(a, b, u):
    """Vectorized counterpart of the scalar CDF-inversion sampler."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    a, b, u = np.broadcast_arrays(a, b, u)
    x = np.empty(a.shape)
    upper = a >= 0.0
    lower = ~upper & (b <= 0.0)
    mid = ~upper & ~lower
    if upper.any():
        x[upper] = -_tn_lower_vec(-b[upper], -a[upper], u[upper])
    if lower.any():
        x[lower] = _tn_lower_vec(a[lower], b[lower], u[lower])
    if mid.any():
        am, bm, um = a[mid], b[mid], u[mid]
        pa = special.ndtr(am)
        pb = special.ndtr(bm)
        p = pa + um * (pb - pa)
        xm = np.empty(am.shape)
        small = p <= 0.5
        if small.any():
            xm[small] = special.ndtri_exp(np.log(p[small]))
        big = ~small
        if big.any():
            qa = special.ndtr(-am[big])
            qb = special.ndtr(-bm[big])
            q = qb + (1.0 - um[big]) * (qa - qb)
            xm[big] = -special.ndtri_exp(np.log(q))
        x[mid] = xm
    return np.minimum(np.maximum(x, a), b)


# ---------------------------------------------------------------------------
# Gibbs scans over latent relations
# ---------------------------------------------------------------------------
#
# Conditional of z[r, c] given its dyad partner z[c, r]:
#   normal(EZ[r, c] + rho * (z[c, r] - EZ[c, r]), sd**2),  sd**2 = s2 * (1 - rho**2)
#
# Fixed-region scan: all upper-triangle entries first (mutually independent given
# the lower triangle), then all lower-triangle entries, each in np.triu_indices
# order; one uniform per updated entry.
#
# Rank scan: column by column; within column c the entries (i, c) sit in
# different rows, so they are conditionally independent.  n uniforms per column
# are drawn (the diagonal slot is discarded).


def _sweep_fixed_nb(Z, EZ, lo, hi, upd, rho, sd, rng):
    n = Z.shape[0]
    bad = 0
    for half in range(2):
        count = 0
        for i in range(n):
            for j in range(i + 1, n):
                if half == 0:
                    if upd[i, j]:
                        count += 1
                elif upd[j, i]:
                    count += 1
        buf = np.empty(count)
        for t in range(count):
            buf[t] = 1.0 - rng.random()
        t = 0
        for i in range(n):
            for j in range(i + 1, n):
                if half == 0:
                    r = i
                    c = j
                else:
                    r = j
                    c = i
                if not upd[r, c]:
                    continue
                m = EZ[r, c] + rho * (Z[c, r] - EZ[c, r])
                l = lo[r, c]
                h = hi[r, c]
                if not l < h:
                    bad += 1
                    t += 1
                    continue
                Z[r, c] = m + sd * _truncnorm_std((l - m) / sd, (h - m) / sd, buf[t])
                t += 1
    return bad


def _sweep_fixed_np(Z, EZ, lo, hi, upd, rho, sd, rng):
    n = Z.shape[0]
    iu, ju = np.triu_indices(n, 1)
    bad = 0
    for r_idx, c_idx in ((iu, ju), (ju, iu)):
        sel = upd[r_idx, c_idx]
        r = r_idx[sel]
        c = c_idx[sel]
        u = 1.0 - rng.random(r.size)
        if r.size == 0:
            continue
        m = EZ[r, c] + rho * (Z[c, r] - EZ[c, r])
        l = lo[r, c]
        h = hi[r, c]
        ok = l < h
        bad += int(r.size - ok.sum())
        x = m + sd * truncnorm_std_vec((l - m) / sd, (h - m) / sd, u)
        Z[r[ok], c[ok]] = x[ok]
    return bad


def _sweep_rank_nb(Z, EZ, ranks, obs, listed, capped, rho, sd, rng):
    n = Z.shape[0]
    cap = listed.shape[1]
    buf = np.empty(n)
    bad = 0
    for c in range(n):
        for i in range(n):
            buf[i] = 1.0 - rng.random()
        for i in range(n):
            if i == c:
                continue
            m = EZ[i, c] + rho * (Z[c, i] - EZ[c, i])
            lo = -np.inf
            hi = np.inf
            if obs[i, c]:
                r = ranks[i, c]
                if r > 0:
                    lo = 0.0
                    for k in range(n):
                        if k == i or k == c or not obs[i, k]:
                            continue
                        rk = ranks[i, k]
                        if rk < r:
                            if Z[i, k] > lo:
                                lo = Z[i, k]
                        elif rk > r:
                            if Z[i, k] < hi:
                                hi = Z[i, k]
                else:
                    if not capped[i]:
                        hi = 0.0
                    for t in range(cap):
                        k = listed[i, t]
                        if k >= 0 and k != c and Z[i, k] < hi:
                            hi = Z[i, k]
            if not lo < hi:
                bad += 1
                continue
            Z[i, c] = m + sd * _truncnorm_std((lo - m) / sd, (hi - m) / sd, buf[i])
    return bad


def _sweep_rank_np(Z, EZ, ranks, obs, listed, capped, rho, sd, rng):
    n = Z.shape[0]
    rows_all = np.arange(n)
    bad = 0
    pad = listed < 0
    safe_listed = np.where(pad, 0, listed)
    for c in range(n):
        u = 1.0 - rng.random(n)
        m = EZ[:, c] + rho * (Z[c, :] - EZ[c, :])
        lo = np.full(n, -np.inf)
        hi = np.full(n, np.inf)
        r = ranks[:, c]
        ob = obs[:, c].copy()
        ob[c] = False

        idx = np.nonzero(ob & (r > 0))[0]
        if idx.size:
            Zi = Z[idx]
            Ri = ranks[idx]
            Oi = obs[idx].copy()
            Oi[:, c] = False
            Oi[np.arange(idx.size), idx] = False
            ri = r[idx][:, None]
            low = np.where(Oi & (Ri < ri), Zi, -np.inf).max(axis=1)
            lo[idx] = np.maximum(low, 0.0)
            hi[idx] = np.where(Oi & (Ri > ri), Zi, np.inf).min(axis=1)

        idx = np.nonzero(ob & (r == 0))[0]
        if idx.size:
            L = safe_listed[idx]
            valid = ~pad[idx] & (listed[idx] != c)
            vals = np.where(valid, Z[idx[:, None], L], np.inf).min(axis=1)
            hi[idx] = np.where(capped[idx], vals, np.minimum(vals, 0.0))

        keep = rows_all != c
        ok = keep & (lo < hi)
        bad += int(keep.sum() - ok.sum())
        sdv = sd
        x = m + sdv * truncnorm_std_vec((lo - m) / sdv, (hi - m) / sdv, u)
        Z[ok, c] = x[ok]
    return bad


if HAVE_NUMBA:
    _sweep_fixed_c = numba.njit(cache=True)(_sweep_fixed_nb)
    _sweep_rank_c = numba.njit(cache=True)(_sweep_rank_nb)
else:  # pragma: no cover
    _sweep_fixed_c = None
    _sweep_rank_c = None


def _resolve(backend):
    backend = DEFAULT_BACKEND if backend is None else backend
    if backend not in BACKENDS:
        raise ValueError(f"unknown or unavailable backend {backend!r}; choose from {BACKENDS}")
    return backend


def sweep_fixed(Z, EZ, lo, hi, upd, rho, sd, rng, backend=None):
    """In-place Gibbs scan of entries of ``Z`` with data-independent truncation bounds.

    Returns the number of entries skipped because their region was empty.
    """
    if _resolve(backend) == "numba":
        return int(_sweep_fixed_c(Z, EZ, lo, hi, upd, float(rho), float(sd), rng))
    return _sweep_fixed_np(Z, EZ, lo, hi, upd, float(rho), float(sd), rng)


def sweep_rank(Z, EZ, ranks, obs, listed, capped, rho, sd, rng, backend=None):
    """In-place Gibbs scan of a fixed-rank-nomination network."""
    if _resolve(backend) == "numba":
        return int(_sweep_rank_c(Z, EZ, ranks, obs, listed, capped, float(rho), float(sd), rng))
    return _sweep_rank_np(Z, EZ, ranks, obs, listed, capped, float(rho), float(sd), rng)
