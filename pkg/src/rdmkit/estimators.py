"""Biased and crossvalidated (unbiased) estimates of squared distances and second moments.

All distances are normalised by the number of channels P.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import ActivityDataset, ContrastMatrix, build_contrast_matrix, pair_indices
from .errors import (CrossvalidationError, IngestionError, InvalidArgumentError,
                     RegularizationError)

ESTIMATORS = ("biased", "unbiased")
METRICS = ("euclidean", "mahalanobis")

# above this many partitions the unbiased sum uses the all-pairs identity
DIRECT_SUM_MAX_M = 32


@dataclass(frozen=True)
class RDMEstimate:
    d: np.ndarray
    estimator: str
    metric: str
    k: int
    m: int

    def __post_init__(self):
        d = np.array(self.d, dtype=np.float64).ravel()
        if d.size != self.k * (self.k - 1) // 2:
            raise InvalidArgumentError(
                f"{d.size} distances do not match k={self.k} (need {self.k * (self.k - 1) // 2})")
        if self.estimator not in ESTIMATORS:
            raise InvalidArgumentError(f"unknown estimator {self.estimator!r}")
        if self.metric not in METRICS:
            raise InvalidArgumentError(f"unknown metric {self.metric!r}")
        d.setflags(write=False)
        object.__setattr__(self, "d", d)

    @property
    def pairs(self) -> tuple:
        return pair_indices(self.k)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "m": self.m,
            "estimator": self.estimator,
            "metric": self.metric,
            "pairs": [list(p) for p in self.pairs],
            "d": [float(x) for x in self.d],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "RDMEstimate":
        k = int(obj["k"])
        pairs = [tuple(p) for p in obj.get("pairs", pair_indices(k))]
        if pairs != list(pair_indices(k)):
            raise InvalidArgumentError("pairs are not in canonical upper-triangular order")
        return cls(np.asarray(obj["d"], dtype=float), obj.get("estimator", "unbiased"),
                   obj.get("metric", "euclidean"), k, int(obj.get("m", 0)))


@dataclass(frozen=True)
class SecondMoment:
    g: np.ndarray
    estimator: str
    centered: bool

    def __post_init__(self):
        g = np.array(self.g, dtype=np.float64)
        g.setflags(write=False)
        object.__setattr__(self, "g", g)

    def distances(self) -> np.ndarray:
        """Squared distances ``G_ii + G_jj - 2 G_ij`` in canonical pair order."""
        return distances_from_second_moment(self.g)


def centering_matrix(k: int) -> np.ndarray:
    return np.eye(k) - np.full((k, k), 1.0 / k)


def distances_from_second_moment(g: np.ndarray) -> np.ndarray:
    """Pairwise distances from (a stack of) second-moment matrices.

    Works on arrays of shape (..., K, K).
    """
    k = g.shape[-1]
    i, j = np.triu_indices(k, 1)
    diag = np.diagonal(g, axis1=-2, axis2=-1)
    return diag[..., i] + diag[..., j] - g[..., i, j] - g[..., j, i]


def _check_contrast(dataset, c):
    if c is None:
        return build_contrast_matrix(dataset.k)
    if c.k != dataset.k:
        raise InvalidArgumentError(
            f"contrast matrix is for {c.k} conditions, dataset has {dataset.k}")
    return c


def biased_distances(dataset: ActivityDataset, c: ContrastMatrix | None = None,
                     metric: str = "euclidean") -> RDMEstimate:
    """Squared distances of the partition-averaged pattern differences."""
    c = _check_contrast(dataset, c)
    delta_bar = c.c @ dataset.stacked().mean(axis=0)
    d = np.einsum("dp,dp->d", delta_bar, delta_bar) / dataset.p
    return RDMEstimate(d, "biased", metric, dataset.k, dataset.m)


def _cross_sum_direct(deltas: np.ndarray) -> np.ndarray:
    # deltas: (M, D, P); fixed loop order keeps the reduction reproducible
    m = deltas.shape[0]
    acc = np.zeros(deltas.shape[1])
    for a in range(m):
        for b in range(m):
            if a != b:
                acc += np.einsum("dp,dp->d", deltas[a], deltas[b])
    return acc


def _cross_sum_identity(deltas: np.ndarray) -> np.ndarray:
    total = deltas.sum(axis=0)
    return np.einsum("dp,dp->d", total, total) - np.einsum("mdp,mdp->d", deltas, deltas)


def unbiased_distances(dataset: ActivityDataset, c: ContrastMatrix | None = None,
                       metric: str = "euclidean", method: str = "auto") -> RDMEstimate:
    """Crossvalidated squared distances using only cross-partition products.

    Parameters
    ----------
    method : {"auto", "direct", "identity"}
        ``direct`` sums the M(M-1) partition pairs explicitly; ``identity``
        uses ``(sum_m delta_m)^2 - sum_m delta_m^2``. ``auto`` picks direct for
        M <= 32.
    """
    if dataset.m < 2:
        raise CrossvalidationError(
            f"crossvalidated distances need at least 2 partitions, got {dataset.m}")
    c = _check_contrast(dataset, c)
    deltas = np.einsum("dk,mkp->mdp", c.c, dataset.stacked())
    if method == "auto":
        method = "direct" if dataset.m <= DIRECT_SUM_MAX_M else "identity"
    if method == "direct":
        s = _cross_sum_direct(deltas)
    elif method == "identity":
        s = _cross_sum_identity(deltas)
    else:
        raise InvalidArgumentError(f"unknown method {method!r}")
    m = dataset.m
    return RDMEstimate(s / (m * (m - 1) * dataset.p), "unbiased", metric, dataset.k, m)


def biased_second_moment(dataset: ActivityDataset, centered: bool = True) -> SecondMoment:
    b = dataset.stacked().mean(axis=0)
    g = b @ b.T / dataset.p
    if centered:
        h = centering_matrix(dataset.k)
        g = h @ g @ h
    return SecondMoment((g + g.T) / 2, "biased", centered)


def unbiased_second_moment(dataset: ActivityDataset, centered: bool = True) -> SecondMoment:
    """Crossvalidated second-moment matrix, averaged over all partition pairs m != n."""
    m = dataset.m
    if m < 2:
        raise CrossvalidationError(
            f"crossvalidated second moment needs at least 2 partitions, got {m}")
    y = dataset.stacked()
    s = y.sum(axis=0)
    g = (s @ s.T - np.einsum("mkp,mlp->kl", y, y)) / (m * (m - 1) * dataset.p)
    if centered:
        h = centering_matrix(dataset.k)
        g = h @ g @ h
    return SecondMoment((g + g.T) / 2, "unbiased", centered)


def stacked_distance_estimates(y: np.ndarray) -> tuple:
    """Biased and crossvalidated Euclidean distances for many datasets at once.

    Parameters
    ----------
    y : ndarray, shape (..., M, K, P)
        Leading axes index independent datasets.

    Returns
    -------
    biased, unbiased : ndarray, shape (..., D)
    """
    y = np.asarray(y, dtype=np.float64)
    m, p = y.shape[-3], y.shape[-1]
    if m < 2:
        raise CrossvalidationError(f"need at least 2 partitions, got {m}")
    total = y.sum(axis=-3)
    g_total = total @ np.swapaxes(total, -1, -2)
    g_within = np.einsum("...mkp,...mlp->...kl", y, y)
    g_biased = g_total / (m * m * p)
    g_unbiased = (g_total - g_within) / (m * (m - 1) * p)
    return distances_from_second_moment(g_biased), distances_from_second_moment(g_unbiased)


def pooled_unbiased_distances(dataset: ActivityDataset, c: ContrastMatrix | None,
                              sigma_k_per_partition: Sequence[np.ndarray],
                              sigma_p: np.ndarray, metric: str = "euclidean",
                              return_covariance: bool = False):
    """Precision-weighted crossvalidated distances for unbalanced designs.

    Each partition pair (m, n), m != n, gives ``d_mn = diag(C B_m B_n' C') / P``.
    Under zero signal these are uncorrelated across pairs with covariance
    proportional to ``tr(S_P S_P) * Xi_m o Xi_n``, ``Xi_m = C S_K^m C'``.
    They are combined by generalised least squares.

    Returns the pooled RDMEstimate, and its covariance matrix (same units as
    ``d``) when ``return_covariance`` is true.
    """
    if dataset.m < 2:
        raise CrossvalidationError(
            f"crossvalidated distances need at least 2 partitions, got {dataset.m}")
    c = _check_contrast(dataset, c)
    if len(sigma_k_per_partition) != dataset.m:
        raise InvalidArgumentError(
            f"{len(sigma_k_per_partition)} condition covariances for {dataset.m} partitions")
    sigma_p = np.asarray(sigma_p, dtype=float)
    if sigma_p.shape != (dataset.p, dataset.p):
        raise InvalidArgumentError(f"sigma_p must be {dataset.p}x{dataset.p}")
    p = dataset.p
    noise_scale = np.sum(sigma_p * sigma_p.T) / p ** 2
    xis = []
    for m, sk in enumerate(sigma_k_per_partition):
        sk = np.asarray(sk, dtype=float)
        if sk.shape != (dataset.k, dataset.k):
            raise InvalidArgumentError(f"condition covariance {m} must be {dataset.k}x{dataset.k}")
        xis.append(c.c @ sk @ c.c.T)
    deltas = np.einsum("dk,mkp->mdp", c.c, dataset.stacked())

    precision = np.zeros((c.d, c.d))
    weighted = np.zeros(c.d)
    # d_mn == d_nm, so only unordered pairs are independent pieces of evidence
    for a in range(dataset.m):
        for b in range(a + 1, dataset.m):
            var = noise_scale * xis[a] * xis[b]
            w, u = np.linalg.eigh(var)
            if w[-1] <= 0 or w[0] <= 1e-10 * w[-1]:
                raise RegularizationError(
                    f"variance of the estimate from partitions ({a}, {b}) is singular")
            inv = (u / w) @ u.T
            d_ab = np.einsum("dp,dp->d", deltas[a], deltas[b]) / p
            precision += inv
            weighted += inv @ d_ab
    cov = np.linalg.inv(precision)
    cov = (cov + cov.T) / 2
    est = RDMEstimate(cov @ weighted, "unbiased", metric, dataset.k, dataset.m)
    if return_covariance:
        return est, cov
    return est


# ---------------------------------------------------------------------------
# serialisation


def write_rdm_json(path, rdm: RDMEstimate) -> None:
    text = json.dumps(rdm.to_dict(), indent=2) + "\n"
    if str(path) == "-":
        import sys
        sys.stdout.write(text)
        return
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_rdm_csv(path, rdm: RDMEstimate) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("i,j,d\n")
        for (i, j), v in zip(rdm.pairs, rdm.d):
            fh.write(f"{i},{j},{float(v)!r}\n")
    os.replace(tmp, path)


def read_rdm_json(path) -> RDMEstimate:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IngestionError(f"{path}: cannot read RDM file ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise IngestionError(f"{path}: invalid JSON ({exc.msg})") from exc
    try:
        return RDMEstimate.from_dict(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise IngestionError(f"{path}: malformed RDM ({exc})") from exc
