"""Low-rank matrix machinery: truncated SVD, the additive/multiplicative split of a
rank-k approximation, scree profiles and point-estimate factor extraction."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class LatentFactors:
    """Node-level network factors: sender/receiver effects ``a``, ``b`` and
    k-dimensional sender/receiver factors ``U``, ``V``."""

    a: np.ndarray
    b: np.ndarray
    U: np.ndarray
    V: np.ndarray

    @property
    def k(self) -> int:
        return self.U.shape[1]

    @property
    def N(self) -> np.ndarray:
        """The n x (2k+2) matrix ``[a, b, U, V]``."""
        return np.column_stack([self.a, self.b, self.U, self.V])


@dataclass(frozen=True)
class RankKDecomposition:
    mu_ab: float
    a_tilde: np.ndarray
    b_tilde: np.ndarray
    A_tilde: np.ndarray
    B_tilde: np.ndarray

    def reconstruct(self) -> np.ndarray:
        n = self.a_tilde.size
        one = np.ones(n)
        return (self.mu_ab * np.outer(one, one) + np.outer(self.a_tilde, one)
                + np.outer(one, self.b_tilde) + self.A_tilde @ self.B_tilde.T)


@dataclass(frozen=True)
class ScreeProfile:
    proportions: np.ndarray
    singular_values: np.ndarray

    def select_rank(self, cutoff: float = 0.9) -> int:
        """Smallest k whose cumulative proportion reaches ``cutoff``."""
        cum = np.cumsum(self.proportions)
        hit = np.nonzero(cum >= cutoff - 1e-12)[0]
        return int(hit[0] + 1) if hit.size else int(self.proportions.size)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "proportion"])
            for i, prop in enumerate(self.proportions, start=1):
                w.writerow([i, repr(float(prop))])


def _check_matrix(M):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ValidationError("expected a 2-d matrix")
    if not np.all(np.isfinite(M)):
        raise ValidationError("matrix has non-finite entries")
    return M


def truncated_svd(M, k):
    """Leading ``k`` singular triplets of ``M``.

    Returns
    -------
    left : (n, k) array with orthonormal columns
    s : (k,) non-increasing singular values
    right : (m, k) array with orthonormal columns
    """
    M = _check_matrix(M)
    if not 1 <= k <= min(M.shape):
        raise ValidationError(f"rank k={k} outside [1, {min(M.shape)}]")
    left, s, right_t = np.linalg.svd(M, full_matrices=False)
    return left[:, :k], s[:k], right_t[:k].T


def _orient(U, V):
    # largest-magnitude entry of each U column positive; V follows
    if U.size == 0:
        return U, V
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs, V * signs


def ame_decompose(M, k) -> RankKDecomposition:
    """Split the best rank-k approximation of ``M`` into mean, row, column and
    centered multiplicative parts."""
    left, s, right = truncated_svd(M, k)
    root = np.sqrt(s)
    A = left * root
    B = right * root
    mu_a = A.mean(axis=0)
    mu_b = B.mean(axis=0)
    A_t = A - mu_a
    B_t = B - mu_b
    return RankKDecomposition(
        mu_ab=float(mu_a @ mu_b),
        a_tilde=A_t @ mu_b,
        b_tilde=B_t @ mu_a,
        A_tilde=A_t,
        B_tilde=B_t,
    )


def scree_proportions(M_mean, k_max) -> ScreeProfile:
    """Share of squared singular value mass carried by each of the first ``k_max`` components."""
    M = _check_matrix(M_mean)
    if not 1 <= k_max <= min(M.shape):
        raise ValidationError(f"k_max={k_max} outside [1, {min(M.shape)}]")
    s = np.linalg.svd(M, compute_uv=False)[:k_max]
    sq = s ** 2
    total = sq.sum()
    props = np.zeros(k_max) if total == 0 else sq / total
    return ScreeProfile(proportions=props, singular_values=s)


def factors_from_mean(a, b, M, k) -> LatentFactors:
    """Point-estimate factors from posterior means of ``a``, ``b`` and ``U V^T``."""
    M = _check_matrix(M)
    if not 1 <= k <= min(M.shape):
        raise ValidationError(f"k={k} exceeds the available rank {min(M.shape)}")
    left, s, right = truncated_svd(M, k)
    root = np.sqrt(s)
    U, V = _orient(left * root, right * root)
    return LatentFactors(np.asarray(a, dtype=np.float64).copy(), np.asarray(b, dtype=np.float64).copy(), U, V)


def posterior_mean_uv(posterior) -> np.ndarray:
    U = np.asarray(posterior.U)
    V = np.asarray(posterior.V)
    if U.shape[0] == 0:
        raise ValidationError("posterior has no samples")
    return np.einsum("sik,sjk->ij", U, V) / U.shape[0]


def extract_factors(posterior, k) -> LatentFactors:
    """Factors from a posterior sample: elementwise means of ``a`` and ``b``; ``U``, ``V``
    from the leading ``k`` singular pairs of the posterior mean of ``U V^T``."""
    a = np.asarray(posterior.a).mean(axis=0)
    b = np.asarray(posterior.b).mean(axis=0)
    return factors_from_mean(a, b, posterior_mean_uv(posterior), k)
