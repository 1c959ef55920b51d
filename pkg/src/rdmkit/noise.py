"""Channel (spatial) and condition noise covariances, and spatial prewhitening."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import ActivityDataset
from .errors import (ConditioningError, DegreesOfFreedomError, InvalidArgumentError,
                     MissingResidualsError)

DEFAULT_SHRINKAGE = 0.3
_EIG_CUTOFF = 1e-10


def _check_square(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidArgumentError(f"{name} must be a square matrix, got shape {a.shape}")
    return a


def _check_symmetric(a, name, rtol=1e-12):
    scale = max(np.abs(a).max(), np.finfo(float).tiny)
    if np.abs(a - a.T).max() > rtol * scale:
        raise InvalidArgumentError(f"{name} is not symmetric")


def _check_psd(a, name, rtol=1e-10):
    w = np.linalg.eigvalsh(a)
    if w.size and w[0] < -rtol * max(w[-1], 0.0):
        raise InvalidArgumentError(f"{name} is not positive semidefinite (min eigenvalue {w[0]:.3g})")


@dataclass(frozen=True)
class NoiseSpec:
    """Condition covariance ``sigma_k`` (K x K) and channel covariance ``sigma_p`` (P x P).

    ``sigma_p`` is rescaled on construction so that its trace equals P; the
    overall noise scale then lives entirely in ``sigma_k``.
    """

    sigma_k: np.ndarray
    sigma_p: np.ndarray

    def __post_init__(self):
        sk = _check_square(self.sigma_k, "sigma_k").copy()
        sp = normalize_sigma_p(_check_square(self.sigma_p, "sigma_p"))
        for a, name in ((sk, "sigma_k"), (sp, "sigma_p")):
            _check_symmetric(a, name)
            _check_psd(a, name)
            a.setflags(write=False)
        object.__setattr__(self, "sigma_k", sk)
        object.__setattr__(self, "sigma_p", sp)

    @classmethod
    def iid(cls, k: int, p: int, variance: float = 1.0) -> "NoiseSpec":
        return cls(variance * np.eye(k), np.eye(p))


def estimate_sigma_p(dataset: ActivityDataset, k_m: int | Sequence[int]) -> np.ndarray:
    """Channel covariance from first-level residuals.

    Computes ``sum_m R_m^T R_m / sum_m (N_m - K_m)``. With equal N_m this is
    the usual ``1 / (M (N - K))`` normalisation.

    Parameters
    ----------
    dataset : ActivityDataset
        Must carry residuals.
    k_m : int or sequence of int
        Number of regressors per partition (one value for all, or one per
        partition).
    """
    if dataset.residuals is None:
        raise MissingResidualsError("residuals required to estimate the channel covariance")
    res = dataset.residuals
    k_m = np.broadcast_to(np.asarray(k_m, dtype=int), (len(res),))
    dof = 0
    acc = np.zeros((dataset.p, dataset.p))
    for m, (r, km) in enumerate(zip(res, k_m)):
        n = r.shape[0]
        if n <= km:
            raise DegreesOfFreedomError(
                f"partition {m}: {n} residual rows but {km} regressors (need N_m > K_m)")
        acc += r.T @ r
        dof += n - km
    acc /= dof
    return (acc + acc.T) / 2


def shrink_sigma_p(sigma_hat: np.ndarray, h: float = DEFAULT_SHRINKAGE) -> np.ndarray:
    """Shrink towards the diagonal: ``h * diag(S) + (1 - h) * S``."""
    if not 0.0 <= h <= 1.0:
        raise InvalidArgumentError(f"shrinkage weight must lie in [0, 1], got {h}")
    s = _check_square(sigma_hat, "sigma_hat")
    _check_symmetric(s, "sigma_hat")
    out = (1.0 - h) * s
    np.fill_diagonal(out, np.diag(s))
    return out


def inverse_sqrt(a: np.ndarray) -> np.ndarray:
    """Symmetric inverse square root of an SPD matrix.

    Raises ConditioningError when the smallest eigenvalue is below
    1e-10 times the largest.
    """
    w, u = np.linalg.eigh(a)
    if w[-1] <= 0 or w[0] <= _EIG_CUTOFF * w[-1]:
        raise ConditioningError(
            "channel covariance is (near) singular; increase the shrinkage weight")
    return (u / np.sqrt(w)) @ u.T


def sqrt_psd(a: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix.

    Eigenvalues within round-off of zero (relative to the largest) are set to
    zero, so the root keeps the rank of ``a`` instead of gaining ~1e-8 modes.
    """
    w, u = np.linalg.eigh(a)
    tol = max(float(w[-1]), 0.0) * w.size * np.finfo(np.float64).eps if w.size else 0.0
    w = np.where(w > tol, w, 0.0)
    return (u * np.sqrt(w)) @ u.T


def prewhiten(dataset: ActivityDataset, sigma_tilde: np.ndarray) -> ActivityDataset:
    """Right-multiply every partition by ``sigma_tilde^{-1/2}``.

    Euclidean distances between the returned patterns are Mahalanobis
    distances between the input patterns. Residuals are whitened as well.
    """
    s = _check_square(sigma_tilde, "sigma_tilde")
    if s.shape[0] != dataset.p:
        raise InvalidArgumentError(
            f"sigma_tilde is {s.shape[0]}x{s.shape[0]} but dataset has {dataset.p} channels")
    _check_symmetric(s, "sigma_tilde", rtol=1e-10)
    w = inverse_sqrt((s + s.T) / 2)
    res = None
    if dataset.residuals is not None:
        res = tuple(r @ w for r in dataset.residuals)
    return ActivityDataset(tuple(b @ w for b in dataset.patterns), res)


def effective_channel_count(sigma_p: np.ndarray) -> float:
    """``tr(S)^2 / tr(S S)``: the number of independent channels S is worth."""
    s = _check_square(sigma_p, "sigma_p")
    ss = np.sum(s * s.T)
    if ss == 0:
        raise InvalidArgumentError("effective channel count undefined for a zero matrix")
    return float(np.trace(s) ** 2 / ss)


def normalize_sigma_p(sigma_p: np.ndarray) -> np.ndarray:
    """Rescale so that ``trace(sigma_p) == P``."""
    s = _check_square(sigma_p, "sigma_p")
    tr = np.trace(s)
    if not tr > 0:
        raise InvalidArgumentError(f"sigma_p must have positive trace, got {tr}")
    return s * (s.shape[0] / tr)
