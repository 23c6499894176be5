"""Identified reparameterization, conditional coefficients, densities and forward
simulation from the model."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..errors import NumericalError, ValidationError
from ._linalg import safe_cholesky, sym
from .model import ChainData
from .state import ConditionalCoefficients, ModelState
from .updates import expected_z, sample_inverse_wishart

COND_LIMIT = 1e12


def _sqrt_and_invsqrt(S):
    w, Q = np.linalg.eigh(sym(S))
    if w.min() <= 0:
        raise NumericalError("factor covariance block is not positive-definite")
    if w.max() / w.min() > COND_LIMIT:
        raise NumericalError("factor covariance block is too ill-conditioned to identify")
    return (Q * np.sqrt(w)) @ Q.T, (Q / np.sqrt(w)) @ Q.T


def identifying_transform(Sigma, p, k):
    """Matrix ``M`` (k x k) such that ``u -> M u``, ``v -> M^{-T} v`` gives both factor
    covariance blocks the same diagonal with decreasing entries.

    Returns ``(M, M_inv_T, D)``.
    """
    iu = slice(p + 2, p + 2 + k)
    iv = slice(p + 2 + k, p + 2 + 2 * k)
    Su_half, Su_ihalf = _sqrt_and_invsqrt(Sigma[iu, iu])
    _sqrt_and_invsqrt(Sigma[iv, iv])
    S = sym(Su_half @ Sigma[iv, iv] @ Su_half)
    lam, Q = np.linalg.eigh(S)
    order = np.argsort(lam)[::-1]
    lam, Q = lam[order], Q[:, order]
    if lam.min() <= 0:
        raise NumericalError("factor covariance product is not positive-definite")
    M = (lam[:, None] ** 0.25) * (Q.T @ Su_ihalf)
    M_inv_T = (lam[:, None] ** -0.25) * (Q.T @ Su_half)
    return M, M_inv_T, np.sqrt(lam)


def to_identified(state: ModelState) -> ModelState:
    """Map a state to the representative whose factor covariance blocks are both the
    same decreasing diagonal matrix.

    ``U V'``, the data density and the joint density of the node vectors are all
    unchanged.  Remaining sign flips are fixed by making the largest-magnitude entry
    of every transformed ``U`` column positive.
    """
    k, p = state.k, state.p
    if k == 0:
        return state.copy()
    M, M_inv_T, _ = identifying_transform(state.Sigma, p, k)
    U = state.U @ M.T
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(k)])
    signs[signs == 0] = 1.0
    M = signs[:, None] * M
    M_inv_T = signs[:, None] * M_inv_T
    T = np.eye(state.Sigma.shape[0])
    iu = slice(p + 2, p + 2 + k)
    iv = slice(p + 2 + k, p + 2 + 2 * k)
    T[iu, iu] = M
    T[iv, iv] = M_inv_T
    out = state.copy()
    out.U = state.U @ M.T
    out.V = state.V @ M_inv_T.T
    out.Sigma = sym(T @ state.Sigma @ T.T)
    return out


def conditional_coefficients(Sigma, p, k) -> ConditionalCoefficients:
    """Regression coefficients of ``(a, b, U, V)`` on the attributes under ``Sigma``."""
    if p == 0:
        raise ValidationError("no attribute block in this covariance")
    Sx = Sigma[:p, :p]
    if np.linalg.cond(Sx) > COND_LIMIT:
        raise NumericalError("attribute covariance block is singular")
    B = np.linalg.solve(Sx, Sigma[:p, p:]).T
    return ConditionalCoefficients(beta_a_x=B[0].copy(), beta_b_x=B[1].copy(),
                                   beta_U_x=B[2:2 + k].copy(), beta_V_x=B[2 + k:2 + 2 * k].copy())


def conditional_expectation(x_i, x_j, state: ModelState, w_ij=None) -> float:
    """Expected relation from node i to node j given only their attributes."""
    cc = conditional_coefficients(state.Sigma, state.p, state.k)
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    val = state.mu + cc.beta_a_x @ x_i + cc.beta_b_x @ x_j + x_i @ cc.interaction @ x_j
    if w_ij is not None:
        val += float(np.asarray(w_ij) @ state.beta)
    return float(val)


def _mvn_logpdf_rows(S, Sigma):
    L = safe_cholesky(Sigma, "joint covariance")
    sol = np.linalg.solve(L, S.T)
    d = Sigma.shape[0]
    return float(-0.5 * np.sum(sol ** 2) - S.shape[0] * (np.sum(np.log(np.diag(L))) + 0.5 * d * np.log(2 * np.pi)))


def network_log_density(state: ModelState, data: ChainData) -> float:
    """Log density of the latent relations ``Z`` given all parameters (all dyads)."""
    E = state.Z - expected_z(state, data)
    iu, ju = np.triu_indices(data.n, 1)
    e1, e2 = E[iu, ju], E[ju, iu]
    s2, rho = state.sigma2_e, state.rho
    m = iu.size
    s_ss = 0.5 * np.sum((e1 + e2) ** 2)
    s_dd = 0.5 * np.sum((e1 - e2) ** 2)
    return float(-m * np.log(2 * np.pi * s2) - 0.5 * m * np.log1p(-rho * rho)
                 - 0.5 / s2 * (s_ss / (1 + rho) + s_dd / (1 - rho)))


def log_density(state: ModelState, data: ChainData) -> float:
    """Joint log density of the latent relations and the stacked node vectors."""
    return network_log_density(state, data) + _mvn_logpdf_rows(state.joint(), state.Sigma)


def simulate_relations(state: ModelState, data: ChainData, rng) -> np.ndarray:
    """Draw ``Z`` from the dyadic error model around the current mean."""
    n = data.n
    EZ = expected_z(state, data)
    iu, ju = np.triu_indices(n, 1)
    e = rng.standard_normal((2, iu.size))
    sd = np.sqrt(state.sigma2_e)
    rho = state.rho
    Z = np.zeros((n, n))
    Z[iu, ju] = EZ[iu, ju] + sd * e[0]
    Z[ju, iu] = EZ[ju, iu] + sd * (rho * e[0] + np.sqrt(1 - rho * rho) * e[1])
    return Z


def simulate_attributes(state: ModelState, rng) -> np.ndarray:
    """Draw every attribute from its normal conditional given the node's factors."""
    p = state.p
    if p == 0:
        return state.X.copy()
    Sigma = state.Sigma
    Snn = Sigma[p:, p:]
    B = np.linalg.solve(Snn, Sigma[p:, :p]).T
    cov = sym(Sigma[:p, :p] - B @ Sigma[p:, :p])
    K = safe_cholesky(cov, "attribute conditional covariance")
    N = state.joint()[:, p:]
    return N @ B.T + rng.standard_normal((state.n, p)) @ K.T


def simulate_from_prior(data: ChainData, rng) -> ModelState:
    """Draw parameters from the prior, then node vectors and latent relations."""
    prior = data.prior
    n, k, p = data.n, data.k, data.p
    scale = data.wishart_scale
    if data.restrict_cross:
        extra = data.wishart_df - (scale.shape[0] + 1)
        Sigma = np.zeros_like(scale)
        for sl in (slice(0, 2), slice(2, scale.shape[0])):
            dim = sl.stop - sl.start
            if dim:
                Sigma[sl, sl] = sample_inverse_wishart(dim + 1 + extra, scale[sl, sl], rng)
    else:
        Sigma = sample_inverse_wishart(data.wishart_df, scale, rng)
    S = rng.standard_normal((n, Sigma.shape[0])) @ safe_cholesky(Sigma, "prior covariance draw").T
    coef = rng.normal(0.0, np.sqrt(prior.beta_prior_var), data.n_coef)
    state = ModelState(
        mu=float(coef[0]), beta=coef[1:].copy(), a=S[:, p].copy(), b=S[:, p + 1].copy(),
        U=S[:, p + 2:p + 2 + k].copy(), V=S[:, p + 2 + k:].copy(), Z=np.zeros((n, n)),
        sigma2_e=float(1.0 / rng.gamma(prior.sigma_e_shape, 1.0 / prior.sigma_e_rate)),
        rho=float(rng.uniform(-1.0, 1.0)), Sigma=Sigma, X=S[:, :p].copy(),
    )
    state.Z = simulate_relations(state, data, rng)
    return state
