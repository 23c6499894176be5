"""Full-conditional updates for the additive-and-multiplicative-effects model.

Dyadic errors ``(e_ij, e_ji)`` are bivariate normal with variance ``sigma2_e`` and
correlation ``rho``.  Writing ``s = (e_ij + e_ji)/2`` and ``d = (e_ij - e_ji)/2``
whitens each dyad: ``s`` and ``d`` are independent with precisions
``tau_s = 1/(sigma2_e (1 + rho))`` and ``tau_d = 1/(sigma2_e (1 - rho))`` (up to the
factor 2 carried by the ordered-pair sums used below).  All Gaussian updates are
phrased through the bilinear form

    <A, B> = c * (sum_{i != j} A_ij B_ij - rho * sum_{i != j} A_ij B_ji),
    c = 1 / (sigma2_e (1 - rho^2)),

which is the log-likelihood inner product of the dyadic error model.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import invwishart

from .. import _kernels, links
from ..errors import NumericalError
from ._linalg import draw_from_precision, safe_cholesky, spd_inverse, sym
from .model import ChainData
from .state import ModelState


def coefficients(state: ModelState) -> np.ndarray:
    return np.concatenate([[state.mu], state.beta])


def regression_mean(state: ModelState, data: ChainData) -> np.ndarray:
    return np.tensordot(coefficients(state), data.design, axes=1)


def expected_z(state: ModelState, data: ChainData) -> np.ndarray:
    """``mu + beta'w_ij + a_i + b_j + u_i'v_j`` with a zero diagonal."""
    M = regression_mean(state, data) + state.a[:, None] + state.b[None, :] + state.U @ state.V.T
    np.fill_diagonal(M, 0.0)
    return M


def _inner(A, B, c, rho):
    # both arguments must have zero diagonals
    return c * (np.vdot(A, B) - rho * np.vdot(A, B.T))


def _dyad_constants(state):
    s2, rho = state.sigma2_e, state.rho
    c = 1.0 / (s2 * (1.0 - rho * rho))
    return c, rho


def _score_ab(rs, cs, c, rho):
    """Gradient of ``<R, a 1' + 1 b'>`` w.r.t. ``(a, b)`` given row/column sums of R."""
    return np.column_stack([c * (rs - rho * cs), c * (cs - rho * rs)])


def _ab_likelihood_blocks(n, c, rho):
    """``<A, A>`` for ``A_ij = a_i + b_j`` equals
    ``sum_i t_i' Q_node t_i + (sum_i t_i)' Q_cross (sum_i t_i)`` with ``t_i = (a_i, b_i)``."""
    q_node = c * np.array([[n - 1 + rho, -(1 + (n - 1) * rho)], [-(1 + (n - 1) * rho), n - 1 + rho]])
    q_cross = c * np.array([[-rho, 1.0], [1.0, -rho]])
    return q_node, q_cross


def _conditional_prior(Sigma, idx):
    """Precision-based conditional of coordinates ``idx`` given the rest.

    Returns ``(prec_block, coef)`` so that the conditional mean of row ``s`` is
    ``-inv(prec_block) @ coef @ s`` with ``coef = Omega[idx, :]`` and the ``idx``
    columns zeroed.
    """
    Omega = spd_inverse(Sigma, "joint covariance")
    block = Omega[np.ix_(idx, idx)]
    coef = Omega[idx, :].copy()
    coef[:, idx] = 0.0
    return block, coef


class _AbPosterior:
    """Gaussian full conditional of the deviations of ``(a, b)`` from their prior
    conditional means.  Precision is ``I (x) A1 + P (x) (A2 - A1)`` with ``P`` the
    averaging projector, so solves and draws split into a centered part and a mean part."""

    def __init__(self, n, prior_prec, c, rho):
        q_node, q_cross = _ab_likelihood_blocks(n, c, rho)
        self.n = n
        self.A1 = prior_prec + q_node
        self.A2 = self.A1 + n * q_cross
        self.A1_inv = spd_inverse(self.A1, "(a, b) conditional precision")
        self.A2_inv = spd_inverse(self.A2, "(a, b) conditional precision")

    def solve(self, L):
        m = L.mean(axis=0)
        return (L - m) @ self.A1_inv + m @ self.A2_inv

    def draw(self, L, rng):
        xi = rng.standard_normal((self.n, 2))
        m = xi.mean(axis=0)
        K1 = safe_cholesky(self.A1_inv, "(a, b) conditional covariance")
        K2 = safe_cholesky(self.A2_inv, "(a, b) conditional covariance")
        return self.solve(L) + (xi - m) @ K1.T + m @ K2.T


def update_additive(state: ModelState, data: ChainData, rng) -> None:
    """Draw ``(mu, beta)`` with ``(a, b)`` integrated out, then ``(a, b)`` given them.

    The prior of ``(a_i, b_i)`` is its normal conditional given the node's other
    coordinates under ``Sigma``; the likelihood is the dyadic regression of
    ``z_ij - u_i'v_j`` with correlated dyad errors.
    """
    n, p = data.n, data.p
    c, rho = _dyad_constants(state)
    idx = np.array([p, p + 1])
    prec, coef = _conditional_prior(state.Sigma, idx)
    S = state.joint()
    prior_mean = -(S @ coef.T) @ np.linalg.inv(prec)
    post = _AbPosterior(n, prec, c, rho)

    R0 = state.Z - state.U @ state.V.T - prior_mean[:, :1] - prior_mean[:, 1][None, :]
    np.fill_diagonal(R0, 0.0)
    L0 = _score_ab(R0.sum(axis=1), R0.sum(axis=0), c, rho)

    # regression coefficients, collapsed over the (a, b) deviations
    D = data.design
    m = data.n_coef
    LD = [_score_ab(data.design_rs[t], data.design_cs[t], c, rho) for t in range(m)]
    SD = [post.solve(Lt) for Lt in LD]
    G = c * (data.gram - rho * data.gram_t)
    h = np.empty(m)
    for s in range(m):
        h[s] = _inner(D[s], R0, c, rho) - np.vdot(LD[s], post.solve(L0))
        for t in range(s, m):
            G[s, t] -= np.vdot(LD[s], SD[t])
            G[t, s] = G[s, t]
    G[np.diag_indices(m)] += 1.0 / data.prior.beta_prior_var
    theta = draw_from_precision(G, h, rng, "regression coefficient precision")
    state.mu = float(theta[0])
    state.beta = theta[1:].copy()

    L1 = L0 - sum(theta[t] * LD[t] for t in range(m))
    delta = post.draw(L1, rng)
    state.a = prior_mean[:, 0] + delta[:, 0]
    state.b = prior_mean[:, 1] + delta[:, 1]


def sample_inverse_wishart(df, scale, rng):
    scale = sym(np.asarray(scale, dtype=np.float64))
    safe_cholesky(scale, "inverse-Wishart scale")
    draw = invwishart.rvs(df=df, scale=scale, random_state=rng)
    return sym(np.atleast_2d(draw))


def update_cov(state: ModelState, data: ChainData, rng) -> None:
    """Conjugate inverse-Wishart draw for the joint covariance of the node vectors."""
    S = state.joint()
    n = S.shape[0]
    scale = data.wishart_scale
    df = data.wishart_df
    if not data.restrict_cross:
        state.Sigma = sample_inverse_wishart(df + n, scale + S.T @ S, rng)
        return
    # additive and multiplicative blocks independent; prior df shifted per block
    extra = df - (scale.shape[0] + 1)
    out = np.zeros_like(state.Sigma)
    for sl in (slice(0, 2), slice(2, scale.shape[0])):
        Sb = S[:, sl]
        dim = Sb.shape[1]
        if dim == 0:
            continue
        out[sl, sl] = sample_inverse_wishart(dim + 1 + extra + n, scale[sl, sl] + Sb.T @ Sb, rng)
    state.Sigma = out


def dyad_sums(state: ModelState, data: ChainData, EZ=None):
    """Whitened residual sums over dyads with at least one observed relation.

    Returns ``(n_dyads, S_ss, S_dd)`` where ``S_ss = 2 sum s^2`` and ``S_dd = 2 sum d^2``.
    """
    if EZ is None:
        EZ = expected_z(state, data)
    iu, ju = data.used_pairs
    E = state.Z - EZ
    e1 = E[iu, ju]
    e2 = E[ju, iu]
    return iu.size, 0.5 * float(np.sum((e1 + e2) ** 2)), 0.5 * float(np.sum((e1 - e2) ** 2))


def rho_log_target(r, sigma2_e, n_dyads, s_ss, s_dd):
    return (-0.5 * n_dyads * np.log1p(-r * r)
            - 0.5 / sigma2_e * (s_ss / (1.0 + r) + s_dd / (1.0 - r)))


def _log_mass(r, sd):
    # log of the normal(r, sd) mass on [-1, 1]
    from scipy.special import log_ndtr

    hi = log_ndtr((1.0 - r) / sd)
    lo = log_ndtr((-1.0 - r) / sd)
    return hi + np.log1p(-np.exp(lo - hi))


def rho_log_acceptance(rho, proposal, sd, sigma2_e, n_dyads, s_ss, s_dd):
    """Log Metropolis-Hastings ratio for a truncated-normal proposal on (-1, 1)."""
    return (rho_log_target(proposal, sigma2_e, n_dyads, s_ss, s_dd)
            - rho_log_target(rho, sigma2_e, n_dyads, s_ss, s_dd)
            + _log_mass(rho, sd) - _log_mass(proposal, sd))


def update_rho(state: ModelState, data: ChainData, rng, proposal_sd, EZ=None) -> bool:
    """Metropolis-Hastings step for the within-dyad correlation; returns acceptance."""
    m, s_ss, s_dd = dyad_sums(state, data, EZ)
    region = links.TruncationRegion(-1.0, 1.0)
    prop = links.sample_truncated_normal(state.rho, proposal_sd, region, rng)
    prop = min(max(prop, -1.0 + 1e-12), 1.0 - 1e-12)
    log_r = rho_log_acceptance(state.rho, prop, proposal_sd, state.sigma2_e, m, s_ss, s_dd)
    if np.log(rng.random()) < log_r:
        state.rho = float(prop)
        return True
    return False


def sigma_posterior(state: ModelState, data: ChainData, EZ=None):
    """Shape and rate of the gamma full conditional of ``1/sigma2_e``."""
    m, s_ss, s_dd = dyad_sums(state, data, EZ)
    rho = state.rho
    shape = data.prior.sigma_e_shape + m
    rate = data.prior.sigma_e_rate + 0.5 * (s_ss / (1.0 + rho) + s_dd / (1.0 - rho))
    return shape, rate


def update_sigma_e(state: ModelState, data: ChainData, rng, EZ=None) -> None:
    shape, rate = sigma_posterior(state, data, EZ)
    state.sigma2_e = float(1.0 / rng.gamma(shape, 1.0 / rate))


def redraw_unobserved_dyads(state: ModelState, data: ChainData, rng, EZ=None) -> None:
    """Fresh draw of both latent relations of every dyad with no observed relation."""
    iu, ju = data.missing_pairs
    if iu.size == 0:
        return
    if EZ is None:
        EZ = expected_z(state, data)
    sd = np.sqrt(state.sigma2_e)
    e = rng.standard_normal((2, iu.size))
    rho = state.rho
    state.Z[iu, ju] = EZ[iu, ju] + sd * e[0]
    state.Z[ju, iu] = EZ[ju, iu] + sd * (rho * e[0] + np.sqrt(1.0 - rho * rho) * e[1])


def _solve_diag_rank1(dvec, gamma, w, h, xi):
    """Mean ``P^-1 h`` and a draw ``mean + P^(-1/2) xi`` for ``P = diag(dvec) + gamma w w'``
    with a positive diagonal (Sherman-Morrison, symmetric square root)."""
    dinv = 1.0 / dvec
    wd = w * dinv
    denom = 1.0 + gamma * float(w @ wd)
    if not denom > 0:
        raise NumericalError("factor column precision is not positive-definite")
    mean = dinv * h - gamma * wd * float(wd @ h) / denom
    what = w * np.sqrt(dinv)
    nrm = float(what @ what)
    kappa = 0.0 if nrm == 0 else (1.0 / np.sqrt(denom) - 1.0) / nrm
    noise = np.sqrt(dinv) * (xi + kappa * what * float(what @ xi))
    return mean, noise


def _draw_factor_column(R, other, prior_mean, prior_var, c, rho, rng):
    """Draw ``u`` from the full conditional with likelihood ``<R - u other', R - u other'>``.

    The precision is ``diag(dvec) - c rho other other'``; solved in O(n) with
    Sherman-Morrison and sampled with the matching symmetric square root.  For
    negative ``rho`` one diagonal entry can be non-positive (when a single entry of
    ``other`` dominates its norm); that coordinate is then drawn from its marginal
    and the rest conditionally on it.
    """
    w = np.asarray(other, dtype=np.float64)
    ww = float(w @ w)
    h = c * (R @ w - rho * (R.T @ w)) + prior_mean / prior_var
    dvec = c * (ww - (1.0 - rho) * w * w) + 1.0 / prior_var
    gamma = -c * rho
    xi = rng.standard_normal(w.size)
    bad = np.nonzero(dvec <= 0)[0]
    if bad.size == 0:
        mean, noise = _solve_diag_rank1(dvec, gamma, w, h, xi)
        return mean + noise
    if bad.size > 1 or gamma <= 0:
        raise NumericalError("factor column precision is not positive-definite")
    s = int(bad[0])
    rest = np.arange(w.size) != s
    d_r, w_r, h_r = dvec[rest], w[rest], h[rest]
    # P_rr^-1 w_r and P_rr^-1 h_r
    x_w, _ = _solve_diag_rank1(d_r, gamma, w_r, w_r, np.zeros(d_r.size))
    x_h, _ = _solve_diag_rank1(d_r, gamma, w_r, h_r, np.zeros(d_r.size))
    p_ss = dvec[s] + gamma * w[s] ** 2
    cross = gamma * w[s]  # P_sr = cross * w_r'
    schur = p_ss - cross ** 2 * float(w_r @ x_w)
    if not schur > 0:
        raise NumericalError("factor column precision is not positive-definite")
    u_s = (h[s] - cross * float(w_r @ x_h)) / schur + xi[s] / np.sqrt(schur)
    mean_r, noise_r = _solve_diag_rank1(d_r, gamma, w_r, h_r - cross * u_s * w_r, xi[rest])
    out = np.empty(w.size)
    out[s] = u_s
    out[rest] = mean_r + noise_r
    return out


def update_multiplicative(state: ModelState, data: ChainData, rng) -> None:
    """Column-by-column draws of ``U[:, l]`` then ``V[:, l]``."""
    k, p = data.k, data.p
    if k == 0:
        return
    c, rho = _dyad_constants(state)
    Omega = spd_inverse(state.Sigma, "joint covariance")
    base = regression_mean(state, data) + state.a[:, None] + state.b[None, :]
    UV = state.U @ state.V.T
    for col in range(k):
        u = state.U[:, col]
        v = state.V[:, col]
        R = state.Z - base - (UV - np.outer(u, v))
        np.fill_diagonal(R, 0.0)
        for which, t in (("U", p + 2 + col), ("V", p + 2 + k + col)):
            S = state.joint()
            rest = S @ Omega[:, t] - S[:, t] * Omega[t, t]
            prior_mean = -rest / Omega[t, t]
            prior_var = 1.0 / Omega[t, t]
            if which == "U":
                state.U[:, col] = _draw_factor_column(R, state.V[:, col], prior_mean, prior_var, c, rho, rng)
            else:
                state.V[:, col] = _draw_factor_column(R.T, state.U[:, col], prior_mean, prior_var, c, rho, rng)
        UV = UV - np.outer(u, v) + np.outer(state.U[:, col], state.V[:, col])


def update_latent_relations(state: ModelState, data: ChainData, rng, backend=None, EZ=None) -> int:
    """Gibbs scan of the latent relations given everything else.

    Observed continuous relations stay fixed; other entries are drawn from their
    normal conditional given the reciprocal entry, truncated to the link region.
    Returns the number of entries skipped because of an empty region (always 0
    for valid data).
    """
    if EZ is None:
        EZ = expected_z(state, data)
    sd = float(np.sqrt(state.sigma2_e * (1.0 - state.rho ** 2)))
    kind = data.kind
    if kind == "rank":
        bad = _kernels.sweep_rank(state.Z, EZ, data.ranks, data.y_obs, data.listed, data.capped,
                                  state.rho, sd, rng, backend=backend)
    else:
        if kind == "continuous":
            if not data.z_update.any():
                return 0
            lo = np.full((data.n, data.n), -np.inf)
            hi = np.full((data.n, data.n), np.inf)
        elif kind == "binary":
            lo, hi = data.lo, data.hi
        else:
            state.cutpoints = links.update_cutpoints(state.Z, data.y_values, data.y_obs, state.cutpoints, rng)
            lo, hi = links.ordinal_bounds(data.y_values, data.y_obs, state.cutpoints)
        bad = _kernels.sweep_fixed(state.Z, EZ, lo, hi, data.z_update, state.rho, sd, rng, backend=backend)
    if bad:
        raise NumericalError(f"{bad} latent relations had empty truncation regions")
    return 0


def attribute_conditionals(state: ModelState, data: ChainData):
    """For each missingness pattern: rows, missing columns, regression matrix on the
    remaining coordinates, and Cholesky factor of the conditional covariance."""
    Sigma = state.Sigma
    dim = Sigma.shape[0]
    out = []
    for rows, miss in data.x_patterns:
        keep = np.setdiff1d(np.arange(dim), miss)
        S_kk = Sigma[np.ix_(keep, keep)]
        S_mk = Sigma[np.ix_(miss, keep)]
        B = np.linalg.solve(S_kk, S_mk.T).T
        cov = sym(Sigma[np.ix_(miss, miss)] - B @ S_mk.T)
        out.append((rows, miss, keep, B, safe_cholesky(cov, "attribute conditional covariance")))
    return out


def impute_missing(state: ModelState, data: ChainData, rng, accumulate=None) -> None:
    """Draw missing attributes from their normal conditional given the node's other
    coordinates.  ``accumulate`` (n x p array) receives the conditional means."""
    if not data.has_missing_x:
        return
    S = state.joint()
    for rows, miss, keep, B, K in attribute_conditionals(state, data):
        mean = S[np.ix_(rows, keep)] @ B.T
        draw = mean + rng.standard_normal((rows.size, miss.size)) @ K.T
        state.X[np.ix_(rows, miss)] = draw
        if accumulate is not None:
            accumulate[np.ix_(rows, miss)] += mean
