"""Analytical moments of distance estimates and RDM-space whitening."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import ContrastMatrix, build_contrast_matrix
from .errors import InvalidArgumentError

KINDS = ("full_biased", "full_unbiased", "null_model")
_PINV_CUTOFF = 1e-10


@dataclass(frozen=True)
class DistanceCovariance:
    """D x D covariance (or covariance structure) of a vector of distance estimates."""

    v: np.ndarray
    kind: str
    k: int

    def __post_init__(self):
        v = np.array(self.v, dtype=np.float64)
        d = self.k * (self.k - 1) // 2
        if v.shape != (d, d):
            raise InvalidArgumentError(f"covariance must be {d}x{d} for k={self.k}, got {v.shape}")
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"unknown covariance kind {self.kind!r}")
        v.setflags(write=False)
        object.__setattr__(self, "v", v)

    @property
    def d(self) -> int:
        return self.v.shape[0]


def _as_matrix(v) -> np.ndarray:
    return v.v if isinstance(v, DistanceCovariance) else np.asarray(v, dtype=np.float64)


def xi_matrix(sigma_k: np.ndarray, c: ContrastMatrix) -> np.ndarray:
    """Covariance of the estimated pattern differences, ``C S_K C'``."""
    sigma_k = np.asarray(sigma_k, dtype=np.float64)
    if sigma_k.shape != (c.k, c.k):
        raise InvalidArgumentError(f"sigma_k must be {c.k}x{c.k}, got {sigma_k.shape}")
    xi = c.c @ sigma_k @ c.c.T
    return (xi + xi.T) / 2


def null_covariance(sigma_k: np.ndarray, c: ContrastMatrix | None = None) -> DistanceCovariance:
    """Covariance structure ``V = Xi o Xi`` of distance estimates when all true distances are 0.

    The proportionality constant (which depends on M, P and the channel
    covariance) is dropped; whitened similarity criteria do not depend on it.
    """
    sigma_k = np.asarray(sigma_k, dtype=np.float64)
    if c is None:
        c = build_contrast_matrix(sigma_k.shape[0])
    xi = xi_matrix(sigma_k, c)
    return DistanceCovariance(xi * xi, "null_model", c.k)


def matnorm_quad_moments(mean: np.ndarray, row_cov: np.ndarray, col_cov: np.ndarray):
    """Mean and covariance of ``diag(X X')`` for ``X ~ MN(mean, row_cov, col_cov)``.

    Parameters
    ----------
    mean : ndarray, shape (R, P)
    row_cov : ndarray, shape (R, R)
        Covariance between rows (shared by every column).
    col_cov : ndarray, shape (P, P)
        Covariance between columns (shared by every row).

    Returns
    -------
    expectation : ndarray, shape (R,)
        ``diag(M M' + tr(S) V)``.
    covariance : ndarray, shape (R, R)
        ``4 (M S M') o V + 2 tr(S S) (V o V)``.
    """
    mu = np.asarray(mean, dtype=np.float64)
    v = np.asarray(row_cov, dtype=np.float64)
    s = np.asarray(col_cov, dtype=np.float64)
    r, p = mu.shape
    if v.shape != (r, r) or s.shape != (p, p):
        raise InvalidArgumentError(
            f"shape mismatch: mean {mu.shape}, row_cov {v.shape}, col_cov {s.shape}")
    expectation = np.einsum("ij,ij->i", mu, mu) + np.trace(s) * np.diag(v)
    cov = 4.0 * (mu @ s @ mu.T) * v + 2.0 * np.sum(s * s.T) * (v * v)
    return expectation, cov


def full_covariance(estimator: str, delta: np.ndarray, sigma_p: np.ndarray,
                    xi: np.ndarray, m: int) -> DistanceCovariance:
    """Signal-dependent covariance of biased or crossvalidated distance estimates.

    ``Var(d) = (2 tr(S_P S_P) / n_pairs * Xi o Xi + 4 P / M * Delta* o Xi) / P^2``
    with ``n_pairs = M^2`` (biased) or ``M (M - 1)`` (unbiased) and
    ``Delta* = delta S_P delta' / P``.

    Parameters
    ----------
    delta : ndarray, shape (D, P)
        True pattern differences ``C B`` (un-normalised).
    xi : ndarray, shape (D, D)
        Covariance of the per-partition difference estimates, ``C S_K C'``.
    """
    delta = np.asarray(delta, dtype=np.float64)
    sigma_p = np.asarray(sigma_p, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    d, p = delta.shape
    if sigma_p.shape != (p, p) or xi.shape != (d, d):
        raise InvalidArgumentError(
            f"shape mismatch: delta {delta.shape}, sigma_p {sigma_p.shape}, xi {xi.shape}")
    k = int(round((1 + np.sqrt(1 + 8 * d)) / 2))
    if estimator == "biased":
        if m < 1:
            raise InvalidArgumentError(f"need at least one partition, got m={m}")
        n_pairs = m * m
        kind = "full_biased"
    elif estimator == "unbiased":
        if m < 2:
            raise InvalidArgumentError(f"crossvalidated covariance needs m >= 2, got m={m}")
        n_pairs = m * (m - 1)
        kind = "full_unbiased"
    else:
        raise InvalidArgumentError(f"unknown estimator {estimator!r}")
    delta_star = delta @ sigma_p @ delta.T / p
    tr_ss = np.sum(sigma_p * sigma_p.T)
    v = (2.0 * tr_ss / n_pairs * xi * xi + 4.0 * p / m * delta_star * xi) / p ** 2
    return DistanceCovariance((v + v.T) / 2, kind, k)


def whitener(v) -> np.ndarray:
    """Symmetric inverse square root ``V^{-1/2}``.

    Eigenvalues below 1e-10 times the largest are treated as zero
    (pseudo-inverse), so ``W V W`` is the projector onto the range of V.
    """
    a = _as_matrix(v)
    w, u = np.linalg.eigh((a + a.T) / 2)
    if w.size == 0 or w[-1] <= 0:
        raise InvalidArgumentError("cannot whiten with a zero (or negative) covariance")
    keep = w > _PINV_CUTOFF * w[-1]
    inv_sqrt = np.zeros_like(w)
    inv_sqrt[keep] = 1.0 / np.sqrt(w[keep])
    return (u * inv_sqrt) @ u.T


def build_t_d(k: int) -> np.ndarray:
    """Linear map from ``vec(G)`` (K^2 entries) to the D squared distances.

    Row ``(i, j)`` has +1 at ``G_ii`` and ``G_jj`` and -1 at ``G_ij`` and ``G_ji``.
    The matrix is the same for row- and column-major vectorisation.
    """
    if int(k) != k or k < 2:
        raise InvalidArgumentError(f"need at least 2 conditions, got k={k}")
    k = int(k)
    i, j = np.triu_indices(k, 1)
    t = np.zeros((i.size, k * k))
    rows = np.arange(i.size)
    t[rows, i * k + i] = 1.0
    t[rows, j * k + j] = 1.0
    t[rows, i * k + j] = -1.0
    t[rows, j * k + i] = -1.0
    return t
