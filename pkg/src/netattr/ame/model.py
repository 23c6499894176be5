"""Static data bundle for a chain and state initialization."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import block_diag

from .. import links
from ..errors import ValidationError
from ..lowrank import ame_decompose
from ..relational_data import AttributeMatrix, DyadCovariate, RelationalMatrix
from .state import ModelState, PriorConfig

MODES = ("joint", "network_only")


@dataclass
class ChainData:
    """Everything about the observed data that stays fixed while a chain runs."""

    kind: str
    n: int
    k: int
    mode: str
    restrict_cross: bool
    y_values: np.ndarray
    y_obs: np.ndarray
    z_update: np.ndarray
    design: np.ndarray
    design_rs: np.ndarray
    design_cs: np.ndarray
    gram: np.ndarray
    gram_t: np.ndarray
    used_pairs: tuple
    missing_pairs: tuple
    x_values: np.ndarray
    x_obs: np.ndarray
    x_patterns: list
    prior: PriorConfig
    wishart_df: float
    wishart_scale: np.ndarray
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None
    ranks: Optional[np.ndarray] = None
    listed: Optional[np.ndarray] = None
    capped: Optional[np.ndarray] = None
    cap: int = 0
    covariate_labels: tuple = field(default_factory=tuple)

    @property
    def p(self) -> int:
        return self.x_values.shape[1]

    @property
    def dim(self) -> int:
        return self.p + 2 + 2 * self.k

    @property
    def n_coef(self) -> int:
        return self.design.shape[0]

    @property
    def has_missing_x(self) -> bool:
        return bool(self.x_patterns)


def pairwise_covariance(values, observed):
    """Pairwise-complete covariance of the observed entries of each column pair."""
    p = values.shape[1]
    S = np.zeros((p, p))
    for s in range(p):
        for t in range(s, p):
            both = observed[:, s] & observed[:, t]
            if both.sum() < 2:
                S[s, t] = 1.0 if s == t else 0.0
            else:
                xs = values[both, s] - values[both, s].mean()
                xt = values[both, t] - values[both, t].mean()
                S[s, t] = xs @ xt / (both.sum() - 1)
            S[t, s] = S[s, t]
    return S


def ridge_to_pd(S, rel=1e-3):
    """Add a multiple of the identity so the smallest eigenvalue is at least
    ``rel`` times the mean diagonal."""
    S = 0.5 * (S + S.T)
    if S.size == 0:
        return S
    floor = rel * max(float(np.mean(np.diag(S))), 1e-8)
    lam = float(np.linalg.eigvalsh(S).min())
    if lam < floor:
        S = S + (floor - lam) * np.eye(S.shape[0])
    return S


def _as_network(Y):
    if isinstance(Y, RelationalMatrix):
        return Y
    return RelationalMatrix(np.asarray(Y, dtype=np.float64))


def _as_attributes(X, n):
    if X is None:
        return np.zeros((n, 0)), np.zeros((n, 0), dtype=bool)
    if isinstance(X, AttributeMatrix):
        vals, obs = np.array(X.values), np.array(X.observed)
    else:
        vals = np.array(X, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals[:, None]
        obs = ~np.isnan(vals)
    if vals.shape[0] != n:
        raise ValidationError(f"attributes have {vals.shape[0]} rows but the network has {n} nodes")
    if np.any(obs.sum(axis=0) == 0):
        raise ValidationError("every attribute needs at least one observed value")
    return vals, obs


def build_data(Y, X=None, W: Sequence = (), k=1, prior: Optional[PriorConfig] = None,
               mode: Optional[str] = None, restrict_cross=True) -> ChainData:
    """Validate inputs and precompute the fixed quantities a chain needs.

    ``mode=None`` picks ``joint`` when attributes are supplied.  ``restrict_cross``
    only matters in network-only mode, where it fixes the covariance between the
    additive and multiplicative effects at zero.
    """
    Y = _as_network(Y)
    n = Y.n
    if n < 3:
        raise ValidationError("need at least 3 nodes")
    k = int(k)
    if k < 0 or k >= n:
        raise ValidationError(f"k={k} must satisfy 0 <= k < n={n}")
    if mode is None:
        mode = "network_only" if X is None else "joint"
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r}")
    if mode == "joint" and X is None:
        raise ValidationError("joint mode needs attributes")
    if mode == "network_only":
        X = None
    x_values, x_obs = _as_attributes(X, n)
    prior = PriorConfig() if prior is None else prior

    off = ~np.eye(n, dtype=bool)
    covs = []
    labels = []
    for t, w in enumerate(W):
        if isinstance(w, DyadCovariate):
            labels.append(w.label)
            w = w.values
        else:
            labels.append(f"w{t + 1}")
        w = np.where(off, np.asarray(w, dtype=np.float64), 0.0)
        if w.shape != (n, n):
            raise ValidationError("dyadic covariate shape does not match the network")
        covs.append(w)
    design = np.stack([off.astype(np.float64)] + covs)
    flat = design.reshape(design.shape[0], -1)
    flat_t = design.transpose(0, 2, 1).reshape(design.shape[0], -1)
    gram = flat @ flat.T
    gram_t = flat @ flat_t.T
    if covs and np.linalg.matrix_rank(gram) < design.shape[0]:
        raise ValidationError("dyadic covariates are collinear with each other or the intercept")

    y_obs = np.array(Y.observed)
    y_values = np.array(Y.values)
    iu, ju = np.triu_indices(n, 1)
    any_obs = y_obs[iu, ju] | y_obs[ju, iu]
    used = (iu[any_obs], ju[any_obs])
    missing = (iu[~any_obs], ju[~any_obs])

    kind = Y.kind
    extra = {}
    if kind == "continuous":
        z_update = off & ~y_obs
    else:
        z_update = off.copy()
    if kind == "binary":
        extra["lo"], extra["hi"] = links.binary_bounds(y_values, y_obs)
    elif kind == "rank":
        ranks, listed, capped = links.frn_structure(y_values, y_obs, Y.max_nominations)
        extra.update(ranks=ranks, listed=listed, capped=capped, cap=Y.max_nominations)

    p = x_values.shape[1]
    dim = p + 2 + 2 * k
    df = float(dim + 1) if prior.wishart_df is None else float(prior.wishart_df)
    if df <= dim - 1:
        raise ValidationError(f"wishart_df must exceed dim - 1 = {dim - 1}")
    if p:
        if prior.Sigma_X0 is not None:
            sx0 = np.asarray(prior.Sigma_X0)
            if sx0.shape != (p, p):
                raise ValidationError(f"Sigma_X0 must be {p} x {p}")
        else:
            sx0 = ridge_to_pd(pairwise_covariance(x_values, x_obs))
        scale = block_diag(sx0, np.eye(2 + 2 * k))
    else:
        scale = np.eye(2 + 2 * k)

    patterns = []
    if p:
        miss = ~x_obs
        rows = np.nonzero(miss.any(axis=1))[0]
        keys = {}
        for i in rows:
            keys.setdefault(tuple(np.nonzero(miss[i])[0]), []).append(i)
        for key in sorted(keys):
            patterns.append((np.array(keys[key]), np.array(key)))

    return ChainData(
        kind=kind, n=n, k=k, mode=mode, restrict_cross=bool(restrict_cross and mode == "network_only"),
        y_values=y_values, y_obs=y_obs, z_update=z_update,
        design=design, design_rs=design.sum(axis=2), design_cs=design.sum(axis=1),
        gram=gram, gram_t=gram_t, used_pairs=used, missing_pairs=missing,
        x_values=x_values, x_obs=x_obs, x_patterns=patterns,
        prior=prior, wishart_df=df, wishart_scale=scale, covariate_labels=tuple(labels), **extra,
    )


def _initial_z(data: ChainData):
    n = data.n
    Y, obs = data.y_values, data.y_obs
    Z = np.zeros((n, n))
    cut = np.zeros(0)
    if data.kind == "continuous":
        fill = float(Y[obs].mean()) if obs.any() else 0.0
        Z = np.where(obs, Y, fill)
    elif data.kind == "binary":
        # lower/upper quartile normal scores
        Z = np.where(obs, np.where(Y == 1, 0.6745, -0.6745), 0.0)
    elif data.kind == "ordinal":
        cut = links.initial_cutpoints(Y, obs)
        lo, hi = links.ordinal_bounds(Y, obs, cut)
        flo, fhi = np.isfinite(lo), np.isfinite(hi)
        lo0, hi0 = np.where(flo, lo, 0.0), np.where(fhi, hi, 0.0)
        mid = np.where(flo & fhi, 0.5 * (lo0 + hi0), 0.0)
        mid = np.where(flo & ~fhi, lo0 + 0.5, mid)
        mid = np.where(~flo & fhi, hi0 - 0.5, mid)
        Z = np.where(obs, mid, 0.0)
    elif data.kind == "rank":
        for i in range(n):
            Z[i] = links.frn_initial_row(data.ranks[i], obs[i], data.cap)
    np.fill_diagonal(Z, 0.0)
    return Z, cut


def init_state(data: ChainData, rng=None) -> ModelState:
    """Deterministic starting point: Z consistent with every observation, row/column
    effects and centered multiplicative factors from the decomposition of the
    residual matrix, residual variance for sigma2_e, rho = 0 and a ridge-inflated
    empirical covariance of the stacked node vectors."""
    n, k, p = data.n, data.k, data.p
    Z, cut = _initial_z(data)
    off = ~np.eye(n, dtype=bool)
    mu = float(Z[off].mean())
    R = np.where(off, Z - mu, 0.0)
    a = R.sum(axis=1) / (n - 1)
    b = R.sum(axis=0) / (n - 1)
    R2 = np.where(off, R - a[:, None] - b[None, :], 0.0)
    if k:
        dec = ame_decompose(R2, k)
        U, V = dec.A_tilde, dec.B_tilde
        a = a + dec.a_tilde
        b = b + dec.b_tilde
        mu += dec.mu_ab
        R2 = np.where(off, R2 - dec.reconstruct(), 0.0)
    else:
        U = np.zeros((n, 0))
        V = np.zeros((n, 0))
    s2 = float(np.var(R2[off]))
    s2 = max(s2, 0.05)
    X = np.where(data.x_obs, data.x_values, 0.0)
    S = np.column_stack([X, a, b, U, V])
    emp = S.T @ S / n
    Sigma = ridge_to_pd(emp + 0.1 * max(float(np.mean(np.diag(emp))), 1e-3) * np.eye(S.shape[1]), rel=1e-2)
    if data.restrict_cross:
        Sigma[:2, 2:] = 0.0
        Sigma[2:, :2] = 0.0
    return ModelState(mu=mu, beta=np.zeros(data.n_coef - 1), a=a, b=b, U=U, V=V, Z=Z,
                      sigma2_e=s2, rho=0.0, Sigma=Sigma, X=X, cutpoints=cut)
