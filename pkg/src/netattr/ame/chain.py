"""Running the Gibbs sampler."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .. import _kernels
from . import updates
from .diagnostics import effective_sample_size
from .model import ChainData, build_data, init_state
from .state import ModelState, PosteriorSamples, PriorConfig, Schedule

ADAPT_BATCH = 50
ACCEPT_LOW, ACCEPT_HIGH = 0.30, 0.45


class GibbsSampler:
    """One chain: owns its state, random stream and the rho proposal scale.

    Scan order per iteration: regression coefficients and additive effects,
    covariance, rho, sigma2_e (followed by a fresh draw of unobserved dyads, which
    the rho and sigma2_e steps integrate out), multiplicative factors, latent
    relations, missing attributes.
    """

    def __init__(self, data: ChainData, rng, state: Optional[ModelState] = None, backend=None):
        self.data = data
        self.rng = rng
        self.state = init_state(data) if state is None else state
        self.backend = backend
        self.proposal_sd = data.prior.rho_proposal_sd
        self.accepted = 0
        self.proposed = 0
        self._batch_acc = 0
        self._batch_n = 0

    def step(self, adapt=False, x_accumulator=None):
        data, st, rng = self.data, self.state, self.rng
        updates.update_additive(st, data, rng)
        updates.update_cov(st, data, rng)
        EZ = updates.expected_z(st, data)
        acc = updates.update_rho(st, data, rng, self.proposal_sd, EZ)
        updates.update_sigma_e(st, data, rng, EZ)
        updates.redraw_unobserved_dyads(st, data, rng, EZ)
        updates.update_multiplicative(st, data, rng)
        if data.kind != "continuous" or data.z_update.any():
            updates.update_latent_relations(st, data, rng, backend=self.backend)
        updates.impute_missing(st, data, rng, accumulate=x_accumulator)
        self.proposed += 1
        self.accepted += int(acc)
        if adapt:
            self._batch_acc += int(acc)
            self._batch_n += 1
            if self._batch_n == ADAPT_BATCH:
                rate = self._batch_acc / ADAPT_BATCH
                if rate < ACCEPT_LOW:
                    self.proposal_sd = max(self.proposal_sd * 0.7, 1e-4)
                elif rate > ACCEPT_HIGH:
                    self.proposal_sd = min(self.proposal_sd * 1.3, 2.0)
                self._batch_acc = self._batch_n = 0
        return st


def _link_value(Z, kind, cutpoints):
    if kind == "binary":
        return (Z > 0).astype(np.float64)
    if kind == "ordinal":
        return 1.0 + np.searchsorted(cutpoints, Z, side="left").astype(np.float64)
    return Z


def run_chain(Y, X=None, W: Sequence = (), k=1, prior: Optional[PriorConfig] = None,
              schedule: Schedule = Schedule(), mode: Optional[str] = None, restrict_cross=True,
              backend=None, data: Optional[ChainData] = None, rng=None) -> PosteriorSamples:
    """Fit the model by MCMC.

    Parameters
    ----------
    Y : RelationalMatrix or square array (NaN = missing)
    X : AttributeMatrix or (n, p) array, optional
        Centered attributes; NaN marks missing entries.  Omit for network-only fits.
    W : sequence of dyadic covariates
    k : int
        Dimension of the multiplicative factors.
    schedule : Schedule
        Iterations, burn-in, thinning and seed.  A draw is stored after iteration
        ``t`` (0-based) when ``t >= burn_in`` and ``(t + 1 - burn_in) % thin == 0``.
    mode : {"joint", "network_only"}, optional
    restrict_cross : bool
        Network-only mode only: fix the additive/multiplicative covariance at zero.

    Returns
    -------
    PosteriorSamples
        Stored draws, effective sample sizes and posterior-mean predictions
        (conditional means of missing attributes; link-scale means of every relation).
    """
    if data is None:
        data = build_data(Y, X, W, k, prior, mode, restrict_cross)
    rng = np.random.default_rng(schedule.seed) if rng is None else rng
    sampler = GibbsSampler(data, rng, backend=backend)
    n, k, p = data.n, data.k, data.p
    m = schedule.n_samples
    dim = data.dim
    out = {
        "mu": np.empty(m), "beta": np.empty((m, data.n_coef - 1)), "a": np.empty((m, n)),
        "b": np.empty((m, n)), "U": np.empty((m, n, k)), "V": np.empty((m, n, k)),
        "sigma2_e": np.empty(m), "rho": np.empty(m), "Sigma": np.empty((m, dim, dim)),
    }
    x_acc = np.zeros((n, p))
    y_acc = np.zeros((n, n))
    n_post = 0
    s = 0
    for it in range(schedule.iterations):
        post = it >= schedule.burn_in
        st = sampler.step(adapt=not post, x_accumulator=x_acc if post else None)
        if not post:
            continue
        n_post += 1
        y_acc += _link_value(st.Z, data.kind, st.cutpoints)
        if (it + 1 - schedule.burn_in) % schedule.thin == 0 and s < m:
            out["mu"][s] = st.mu
            out["beta"][s] = st.beta
            out["a"][s] = st.a
            out["b"][s] = st.b
            out["U"][s] = st.U
            out["V"][s] = st.V
            out["sigma2_e"][s] = st.sigma2_e
            out["rho"][s] = st.rho
            out["Sigma"][s] = st.Sigma
            s += 1

    x_pred = None
    if p:
        x_pred = np.where(data.x_obs, data.x_values, x_acc / max(n_post, 1))
    y_pred = y_acc / max(n_post, 1)
    np.fill_diagonal(y_pred, np.nan)
    samples = PosteriorSamples(**out, x_pred=x_pred, y_pred=y_pred)
    samples.ess = {
        "mu": effective_sample_size(out["mu"]),
        "rho": effective_sample_size(out["rho"]),
        "sigma2_e": effective_sample_size(out["sigma2_e"]),
        "estimator": "initial positive sequence",
    }
    samples.meta = {
        "iterations": schedule.iterations, "burn_in": schedule.burn_in, "thin": schedule.thin,
        "seed": schedule.seed, "k": k, "p": p, "n": n, "mode": data.mode, "kind": data.kind,
        "restrict_cross": data.restrict_cross, "covariates": list(data.covariate_labels),
        "prior": data.prior.to_dict(), "wishart_df": data.wishart_df,
        "rho_proposal_sd_final": sampler.proposal_sd,
        "rho_acceptance": sampler.accepted / max(sampler.proposed, 1),
        "backend": _kernels._resolve(backend),
    }
    return samples
