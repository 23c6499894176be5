"""Containers for the additive-and-multiplicative-effects sampler."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import ValidationError


@dataclass
class PriorConfig:
    """Hyperparameters.

    ``1/sigma2_e ~ gamma(sigma_e_shape, rate=sigma_e_rate)``;
    ``Sigma_XN ~ inverse-Wishart(wishart_df, blockdiag(Sigma_X0, I))``, i.e. the
    precision is Wishart with that df and scale ``blockdiag(Sigma_X0^-1, I)``, so
    ``E[precision] = wishart_df * blockdiag(Sigma_X0^-1, I)``.
    ``wishart_df=None`` means ``dim + 1``; ``Sigma_X0=None`` means the
    pairwise-complete empirical covariance of the observed attributes.
    ``mu`` and dyadic coefficients get independent ``normal(0, beta_prior_var)`` priors.
    """

    sigma_e_shape: float = 0.5
    sigma_e_rate: float = 0.5
    wishart_df: Optional[float] = None
    Sigma_X0: Optional[np.ndarray] = None
    rho_proposal_sd: float = 0.05
    beta_prior_var: float = 100.0

    def __post_init__(self):
        if self.sigma_e_shape <= 0 or self.sigma_e_rate <= 0:
            raise ValidationError("gamma prior parameters must be positive")
        if self.rho_proposal_sd <= 0 or self.beta_prior_var <= 0:
            raise ValidationError("proposal sd and coefficient prior variance must be positive")
        if self.Sigma_X0 is not None:
            S = np.atleast_2d(np.asarray(self.Sigma_X0, dtype=np.float64))
            if S.shape[0] != S.shape[1] or not np.allclose(S, S.T):
                raise ValidationError("Sigma_X0 must be symmetric")
            if np.linalg.eigvalsh(S).min() <= 0:
                raise ValidationError("Sigma_X0 must be positive-definite")
            self.Sigma_X0 = S

    def to_dict(self):
        d = asdict(self)
        d["Sigma_X0"] = None if self.Sigma_X0 is None else np.asarray(self.Sigma_X0).tolist()
        return d


@dataclass(frozen=True)
class Schedule:
    iterations: int = 4000
    burn_in: int = 500
    thin: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1 or self.burn_in < 0 or self.thin < 1:
            raise ValidationError("iterations >= 1, burn_in >= 0 and thin >= 1 required")
        if self.burn_in >= self.iterations:
            raise ValidationError("burn_in must be smaller than iterations")

    @property
    def n_samples(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


@dataclass
class ModelState:
    """One MCMC iterate.

    The joint node vector is ordered ``(x_1..x_p, a, b, u_1..u_k, v_1..v_k)``;
    ``Sigma`` is its covariance (``p = 0`` in network-only mode).  ``X`` holds the
    current attribute values with missing entries imputed.
    """

    mu: float
    beta: np.ndarray
    a: np.ndarray
    b: np.ndarray
    U: np.ndarray
    V: np.ndarray
    Z: np.ndarray
    sigma2_e: float
    rho: float
    Sigma: np.ndarray
    X: np.ndarray
    cutpoints: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n(self):
        return self.a.size

    @property
    def k(self):
        return self.U.shape[1]

    @property
    def p(self):
        return self.X.shape[1]

    def copy(self) -> "ModelState":
        return ModelState(
            mu=float(self.mu), beta=self.beta.copy(), a=self.a.copy(), b=self.b.copy(),
            U=self.U.copy(), V=self.V.copy(), Z=self.Z.copy(), sigma2_e=float(self.sigma2_e),
            rho=float(self.rho), Sigma=self.Sigma.copy(), X=self.X.copy(), cutpoints=self.cutpoints.copy(),
        )

    def joint(self) -> np.ndarray:
        """The n x (p+2+2k) matrix of stacked node vectors."""
        return np.column_stack([self.X, self.a, self.b, self.U, self.V])

    def uv(self) -> np.ndarray:
        return self.U @ self.V.T


@dataclass(frozen=True)
class ConditionalCoefficients:
    """Regression of network factors on attributes implied by ``Sigma``."""

    beta_a_x: np.ndarray
    beta_b_x: np.ndarray
    beta_U_x: np.ndarray
    beta_V_x: np.ndarray

    @property
    def interaction(self) -> np.ndarray:
        """p x p bilinear coefficient matrix ``beta_U^T beta_V`` (rank <= min(p, k))."""
        return self.beta_U_x.T @ self.beta_V_x


_TRACE_FIELDS = ("mu", "beta", "a", "b", "U", "V", "sigma2_e", "rho", "Sigma")


@dataclass
class PosteriorSamples:
    """Thinned draws plus posterior-mean imputations and run metadata."""

    mu: np.ndarray
    beta: np.ndarray
    a: np.ndarray
    b: np.ndarray
    U: np.ndarray
    V: np.ndarray
    sigma2_e: np.ndarray
    rho: np.ndarray
    Sigma: np.ndarray
    x_pred: Optional[np.ndarray] = None
    y_pred: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)
    ess: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.mu.shape[0]

    def to_directory(self, path):
        """One CSV trace per parameter (row = stored iteration) plus ``metadata.json``."""
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        for name in _TRACE_FIELDS:
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            _write_trace(path / f"{name}.csv", arr.reshape(arr.shape[0], -1))
        if self.x_pred is not None:
            _write_trace(path / "x_pred.csv", self.x_pred)
        if self.y_pred is not None:
            _write_trace(path / "y_pred.csv", self.y_pred)
        meta = dict(self.meta)
        meta["shapes"] = {name: list(np.shape(getattr(self, name))) for name in _TRACE_FIELDS}
        meta["ess"] = self.ess
        with open(path / "metadata.json", "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_directory(cls, path) -> "PosteriorSamples":
        path = Path(path)
        meta_path = path / "metadata.json"
        if not meta_path.is_file():
            raise ValidationError(f"{path} is not a posterior sample directory")
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
        shapes = meta.pop("shapes")
        ess = meta.pop("ess", {})
        arrays = {}
        for name in _TRACE_FIELDS:
            shape = tuple(shapes[name])
            arrays[name] = _read_trace(path / f"{name}.csv", shape)
        extra = {}
        for name in ("x_pred", "y_pred"):
            f = path / f"{name}.csv"
            extra[name] = np.loadtxt(f, delimiter=",", ndmin=2) if f.is_file() else None
        return cls(**arrays, **extra, meta=meta, ess=ess)


def _write_trace(path, arr):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in np.atleast_2d(arr):
            w.writerow(["nan" if np.isnan(x) else repr(float(x)) for x in row])


def _read_trace(path, shape):
    if int(np.prod(shape)) == 0:
        return np.zeros(shape)
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    return data.reshape(shape)
