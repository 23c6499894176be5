"""Simulation harnesses: power of the independence test under several network
observation schemes, and cross-validated prediction of held-out attributes."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .ame import PriorConfig, Schedule, run_chain
from .dependence import DEFAULT_NULL_DRAWS, test_independence
from .errors import ValidationError
from .lowrank import extract_factors
from .relational_data import RelationalMatrix, binarize

OBSERVATIONS = ("latent_N", "continuous_Y", "binary")
DEFAULT_GAMMA_SQ = (-0.05, 0.0, 0.05, 0.1, 0.15, 0.2)
DEFAULT_SIZES = (25, 50, 100)
POWER_SCHEDULE = Schedule(iterations=4000, burn_in=500, thin=5, seed=0)


def stream(seed, *key):
    """Independent generator for unit ``key`` of a run with master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(x) for x in key)))


def gamma_from_signed_sq(gamma_sq):
    """``sign(g) * g^2 -> g``."""
    return math.copysign(math.sqrt(abs(gamma_sq)), gamma_sq)


@dataclass(frozen=True)
class ScenarioConfig:
    """One cell of the power study.

    ``scenario`` A correlates the attribute(s) with the sender effect ``a``, B with
    the first sender factor ``u``.  ``observation`` is ``latent_N`` (factors seen
    directly), ``continuous_Y`` or ``binary`` (thresholded at ``density``).
    """

    scenario: str = "A"
    gamma: float = 0.0
    n: int = 100
    p: int = 1
    k: int = 1
    observation: str = "latent_N"
    density: Optional[float] = None

    def __post_init__(self):
        if self.scenario not in ("A", "B"):
            raise ValidationError("scenario must be 'A' or 'B'")
        if self.observation not in OBSERVATIONS:
            raise ValidationError(f"observation must be one of {OBSERVATIONS}")
        if self.observation == "binary" and not (self.density and 0 < self.density < 1):
            raise ValidationError("binary observation needs a density in (0, 1)")
        if self.n < 3 or self.p < 1 or self.k < 1:
            raise ValidationError("need n >= 3, p >= 1, k >= 1")
        if np.linalg.eigvalsh(self.covariance()).min() <= 0:
            raise ValidationError(f"gamma={self.gamma} gives a covariance that is not positive-definite")

    @property
    def gamma_sq(self) -> float:
        return math.copysign(self.gamma ** 2, self.gamma)

    @property
    def label(self) -> str:
        if self.observation == "binary":
            return f"B{self.density:g}"
        return {"latent_N": "N", "continuous_Y": "Y"}[self.observation]

    def covariance(self) -> np.ndarray:
        """``I + gamma E`` on ``(x_1..x_p, a, b, u_1..u_k, v_1..v_k)``; every attribute
        is linked to the same factor."""
        d = self.p + 2 + 2 * self.k
        S = np.eye(d)
        target = self.p if self.scenario == "A" else self.p + 2
        S[: self.p, target] = self.gamma
        S[target, : self.p] = self.gamma
        return S


def parse_observation(token: str):
    """``N``, ``Y`` or ``B<density>`` -> ``(observation, density)``."""
    token = token.strip()
    if token == "N":
        return "latent_N", None
    if token == "Y":
        return "continuous_Y", None
    if token.startswith("B"):
        return "binary", float(token[1:])
    raise ValidationError(f"unknown observation {token!r}; use N, Y or B<density>")


@dataclass
class ScenarioData:
    X: np.ndarray
    N: np.ndarray
    Y: RelationalMatrix
    B: Optional[RelationalMatrix] = None


def simulate_scenario(cfg: ScenarioConfig, rng) -> ScenarioData:
    """Node vectors from ``normal(0, I + gamma E)`` and ``y_ij = a_i + b_j + u_i'v_j + e_ij``
    with standard normal errors."""
    n, p, k = cfg.n, cfg.p, cfg.k
    S = rng.multivariate_normal(np.zeros(p + 2 + 2 * k), cfg.covariance(), size=n, method="cholesky")
    X = S[:, :p]
    N = S[:, p:]
    a, b, U, V = N[:, 0], N[:, 1], N[:, 2:2 + k], N[:, 2 + k:]
    Y = a[:, None] + b[None, :] + U @ V.T + rng.standard_normal((n, n))
    np.fill_diagonal(Y, np.nan)
    Ym = RelationalMatrix(Y)
    B = binarize(Ym, cfg.density) if cfg.observation == "binary" else None
    return ScenarioData(X=X, N=N, Y=Ym, B=B)


@dataclass(frozen=True)
class PowerEstimate:
    gamma_sq: float
    power: float
    reps: int
    mc_se: float
    rejections: int = 0

    @classmethod
    def from_rejections(cls, gamma_sq, rejections, reps):
        power = rejections / reps
        return cls(gamma_sq=float(gamma_sq), power=power, reps=int(reps),
                   mc_se=math.sqrt(power * (1 - power) / reps), rejections=int(rejections))


def _estimated_factors(obs: RelationalMatrix, k, schedule, seed, prior=None):
    post = run_chain(obs, k=k, schedule=Schedule(schedule.iterations, schedule.burn_in, schedule.thin, seed),
                     mode="network_only", prior=prior)
    return extract_factors(post, k).N


def _power_replicate(args):
    cfg, rep, alpha, estimation, schedule, seed, num_draws = args
    rng = stream(seed, 1, rep)
    data = simulate_scenario(cfg, rng)
    if cfg.observation == "latent_N" or estimation == "direct":
        N = data.N
    else:
        obs = data.Y if cfg.observation == "continuous_Y" else data.B
        chain_seed = int(stream(seed, 2, rep).integers(2 ** 63))
        N = _estimated_factors(obs, cfg.k, schedule, chain_seed)
    res = test_independence(data.X, N, alpha=alpha, num_draws=num_draws, seed=seed, center=True)
    return res.reject


def _map(func, items, threads):
    if threads and threads > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(func, items, chunksize=max(1, len(items) // (4 * threads))))
    return [func(x) for x in items]


def estimate_power(cfg: ScenarioConfig, reps=1000, alpha=0.05, estimation="mcmc",
                   schedule: Schedule = POWER_SCHEDULE, seed=0, threads=1,
                   num_draws=DEFAULT_NULL_DRAWS) -> PowerEstimate:
    """Rejection fraction of the level-``alpha`` test over ``reps`` simulated data sets.

    ``estimation="mcmc"`` estimates the factors from the observed network (posterior
    means of ``a``, ``b`` and the leading singular pairs of the posterior mean of
    ``U V'``); ``"direct"`` or ``observation="latent_N"`` uses the true factors.
    Replicate ``r`` draws from a stream keyed by ``(seed, r)``, so results do not
    depend on ``threads``.
    """
    if reps < 1:
        raise ValidationError("reps must be >= 1")
    if estimation not in ("direct", "mcmc"):
        raise ValidationError("estimation must be 'direct' or 'mcmc'")
    items = [(cfg, r, alpha, estimation, schedule, seed, num_draws) for r in range(reps)]
    rejects = _map(_power_replicate, items, threads)
    return PowerEstimate.from_rejections(cfg.gamma_sq, int(sum(rejects)), reps)


POWER_COLUMNS = ("scenario", "observation", "n", "gamma_sq", "power", "mc_se", "reps", "seed")


def power_grid(scenarios=("A", "B"), observations=("N", "Y", "B0.5", "B0.15"), sizes=DEFAULT_SIZES,
               gamma_sq=DEFAULT_GAMMA_SQ, reps=200, alpha=0.05, schedule: Schedule = POWER_SCHEDULE,
               seed=0, threads=1, num_draws=DEFAULT_NULL_DRAWS):
    """Long-format rows, one per (scenario, observation, n, gamma_sq) cell."""
    rows = []
    cell = 0
    for sc in scenarios:
        for token in observations:
            obs, dens = parse_observation(token)
            for n in sizes:
                for g2 in gamma_sq:
                    cfg = ScenarioConfig(scenario=sc, gamma=gamma_from_signed_sq(g2), n=int(n),
                                         observation=obs, density=dens)
                    cell_seed = int(stream(seed, 3, cell).integers(2 ** 63))
                    est = estimate_power(cfg, reps, alpha, "mcmc", schedule, cell_seed, threads, num_draws)
                    rows.append({"scenario": sc, "observation": token, "n": int(n), "gamma_sq": float(g2),
                                 "power": est.power, "mc_se": est.mc_se, "reps": est.reps, "seed": cell_seed})
                    cell += 1
    return rows


def write_power_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POWER_COLUMNS)
        for r in rows:
            w.writerow([r["scenario"], r["observation"], r["n"], repr(float(r["gamma_sq"])),
                        repr(float(r["power"])), repr(float(r["mc_se"])), r["reps"], r["seed"]])


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------


def regression_baseline(X_masked, train_rows=None):
    """Predict every missing entry of ``X_masked`` from the other attributes.

    Each attribute is regressed (with intercept) on all others using complete rows;
    absent predictors of a row being predicted are replaced by their training mean.
    Returns an array equal to ``X_masked`` with missing entries filled in.
    """
    X = np.asarray(X_masked, dtype=np.float64)
    n, p = X.shape
    obs = ~np.isnan(X)
    complete = obs.all(axis=1)
    if train_rows is not None:
        complete &= np.asarray(train_rows, dtype=bool)
    if complete.sum() < p + 1:
        raise ValidationError(f"only {complete.sum()} complete training rows for {p} attributes")
    T = X[complete]
    means = T.mean(axis=0)
    out = X.copy()
    for j in range(p):
        miss = ~obs[:, j]
        if not miss.any():
            continue
        others = [t for t in range(p) if t != j]
        D = np.column_stack([np.ones(T.shape[0]), T[:, others]])
        if np.linalg.cond(D) > 1e10:
            raise ValidationError(f"singular design when regressing attribute {j} on the others")
        coef, *_ = np.linalg.lstsq(D, T[:, j], rcond=None)
        P = X[np.ix_(miss, others)]
        P = np.where(np.isnan(P), means[others], P)
        out[miss, j] = coef[0] + P @ coef[1:]
    return out


def holdout_masks(observed, folds, holdout_fraction, rng):
    """Boolean masks (folds x n x p); in each column the observed rows are shuffled
    and cut into consecutive chunks of ``holdout_fraction`` of them."""
    observed = np.asarray(observed, dtype=bool)
    if folds < 2:
        raise ValidationError("need at least 2 folds")
    if not 0 < holdout_fraction < 1 or folds * holdout_fraction > 1 + 1e-9:
        raise ValidationError("holdout_fraction must be in (0, 1) with folds * holdout_fraction <= 1")
    n, p = observed.shape
    masks = np.zeros((folds, n, p), dtype=bool)
    for j in range(p):
        rows = rng.permutation(np.nonzero(observed[:, j])[0])
        edges = np.round(np.linspace(0, folds * holdout_fraction * rows.size, folds + 1)).astype(int)
        for f in range(folds):
            masks[f, rows[edges[f]:edges[f + 1]], j] = True
    return masks


@dataclass
class CvReport:
    """Held-out mean squared errors on standardized attributes."""

    names: tuple
    baseline_mse: np.ndarray
    joint_mse: np.ndarray
    fold_baseline: np.ndarray
    fold_joint: np.ndarray
    folds: int
    holdout_fraction: float
    meta: dict = field(default_factory=dict)

    @property
    def improvement(self) -> np.ndarray:
        """Percent reduction in MSE of the joint model relative to the baseline."""
        return 100.0 * (self.baseline_mse - self.joint_mse) / self.baseline_mse

    def paired_difference(self):
        """Mean over folds of (baseline - joint) MSE, with its standard error, per attribute."""
        d = self.fold_baseline - self.fold_joint
        ok = ~np.isnan(d)
        mean = np.array([d[ok[:, j], j].mean() for j in range(d.shape[1])])
        se = np.array([d[ok[:, j], j].std(ddof=1) / math.sqrt(ok[:, j].sum()) for j in range(d.shape[1])])
        return mean, se

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", *self.names])
            w.writerow(["regression", *(repr(float(x)) for x in self.baseline_mse)])
            w.writerow(["joint", *(repr(float(x)) for x in self.joint_mse)])
            w.writerow(["improvement_pct", *(repr(float(x)) for x in self.improvement)])


def standardize(X):
    X = np.asarray(X, dtype=np.float64)
    mean = np.nanmean(X, axis=0)
    sd = np.nanstd(X, axis=0, ddof=1)
    if np.any(~(sd > 0)):
        raise ValidationError("an attribute has zero variance")
    return (X - mean) / sd


def _cv_fold(args):
    Y, Xs, W, k, mask, schedule, chain_seed, prior = args
    Xm = Xs.copy()
    Xm[mask] = np.nan
    base = regression_baseline(Xm)
    center = np.nanmean(Xm, axis=0)
    post = run_chain(Y, X=Xm - center, W=W, k=k, prior=prior, mode="joint",
                     schedule=Schedule(schedule.iterations, schedule.burn_in, schedule.thin, chain_seed))
    joint = post.x_pred + center
    p = Xs.shape[1]
    fb = np.full(p, np.nan)
    fj = np.full(p, np.nan)
    for j in range(p):
        m = mask[:, j]
        if m.any():
            fb[j] = np.mean((base[m, j] - Xs[m, j]) ** 2)
            fj[j] = np.mean((joint[m, j] - Xs[m, j]) ** 2)
    sse = (np.sum(np.where(mask, (base - Xs) ** 2, 0.0), axis=0), np.sum(np.where(mask, (joint - Xs) ** 2, 0.0), axis=0))
    return fb, fj, sse, mask.sum(axis=0)


def crossval(Y, X, W: Sequence = (), k=1, folds=20, holdout_fraction=0.05, schedule: Schedule = POWER_SCHEDULE,
             seed=0, threads=1, names=None, prior: Optional[PriorConfig] = None) -> CvReport:
    """Compare attribute-only regression with joint-model imputation on held-out attributes.

    Attributes are standardized first.  Fold ``f`` hides its chunk of each column's
    observed entries, fits both predictors on what remains, and scores the hidden
    entries.  Reported MSEs pool squared errors over all folds.
    """
    Xs = standardize(X)
    n, p = Xs.shape
    rng = stream(seed, 4)
    masks = holdout_masks(~np.isnan(Xs), folds, holdout_fraction, rng)
    items = []
    for f in range(folds):
        chain_seed = int(stream(seed, 5, f).integers(2 ** 63))
        items.append((Y, Xs, tuple(W), k, masks[f], schedule, chain_seed, prior))
    results = _map(_cv_fold, items, threads)
    fold_b = np.array([r[0] for r in results])
    fold_j = np.array([r[1] for r in results])
    sse_b = sum(r[2][0] for r in results)
    sse_j = sum(r[2][1] for r in results)
    counts = sum(r[3] for r in results)
    if np.any(counts == 0):
        raise ValidationError("some attribute had no held-out entries")
    names = tuple(f"x{j + 1}" for j in range(p)) if names is None else tuple(names)
    return CvReport(names=names, baseline_mse=sse_b / counts, joint_mse=sse_j / counts,
                    fold_baseline=fold_b, fold_joint=fold_j, folds=folds, holdout_fraction=holdout_fraction,
                    meta={"seed": seed, "k": k, "iterations": schedule.iterations,
                          "burn_in": schedule.burn_in, "thin": schedule.thin})


def dependent_joint_data(n=150, p=3, k=1, strength=0.6, rng=None, sigma2_e=1.0):
    """Synthetic network and attributes where every attribute loads on the additive
    effects and the first multiplicative factors.

    Attributes are ``x = strength * (a + b + u_1 + v_1)/2 + sqrt(1 - strength^2) * noise``
    (with distinct signs per attribute); ``strength = 0`` gives independent blocks.
    """
    rng = np.random.default_rng() if rng is None else rng
    if not 0 <= strength < 1:
        raise ValidationError("strength must lie in [0, 1)")
    N = rng.standard_normal((n, 2 + 2 * k))
    a, b, U, V = N[:, 0], N[:, 1], N[:, 2:2 + k], N[:, 2 + k:]
    signs = np.array([[1, 1, 1, 1], [1, -1, 1, -1], [-1, 1, 1, 1], [1, 1, -1, 1]], dtype=float)
    core = np.column_stack([a, b, U[:, 0], V[:, 0]])
    X = np.empty((n, p))
    for j in range(p):
        load = core @ signs[j % 4] / 2.0
        X[:, j] = strength * load + math.sqrt(1 - strength ** 2) * rng.standard_normal(n)
    Y = a[:, None] + b[None, :] + U @ V.T + math.sqrt(sigma2_e) * rng.standard_normal((n, n))
    np.fill_diagonal(Y, np.nan)
    return RelationalMatrix(Y), X, N


__all__ = [
    "CvReport", "DEFAULT_GAMMA_SQ", "DEFAULT_SIZES", "OBSERVATIONS", "POWER_COLUMNS",
    "PowerEstimate", "ScenarioConfig", "ScenarioData", "crossval", "dependent_joint_data", "estimate_power",
    "gamma_from_signed_sq", "holdout_masks", "parse_observation", "power_grid", "regression_baseline",
    "simulate_scenario", "standardize", "stream", "write_power_csv",
]
