"""RDM similarity criteria: plain and whitened cosine/Pearson, rank correlations, CKA.

The row-wise helpers (``*_rows``) evaluate a criterion for many data RDMs at
once and return NaN where the value is undefined; the public scalar functions
raise ``UndefinedSimilarityError`` instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .covariance import DistanceCovariance, null_covariance, whitener
from .errors import DegenerateModelError, InvalidArgumentError, UndefinedSimilarityError

CRITERIA = ("cosine", "pearson", "whitened_cosine", "whitened_pearson",
            "spearman", "kendall_tau_a", "cka")
ALIASES = {"wuc": "whitened_cosine"}
TIE_TOL = 1e-12


def canonical_criterion(name: str) -> str:
    name = ALIASES.get(name, name)
    if name not in CRITERIA:
        raise InvalidArgumentError(
            f"unknown criterion {name!r}; choose from {', '.join(CRITERIA + tuple(ALIASES))}")
    return name


@dataclass(frozen=True)
class ModelRDM:
    name: str
    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=np.float64).ravel()
        if not np.any(m):
            raise InvalidArgumentError(f"model {self.name!r} predicts all-zero distances")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)


@dataclass(frozen=True)
class ComparisonResult:
    criterion: str
    per_model: dict
    winner: str

    def to_dict(self) -> dict:
        return {"criterion": self.criterion,
                "per_model": {k: float(v) for k, v in self.per_model.items()},
                "winner": self.winner}


# ---------------------------------------------------------------------------
# row-wise kernels


def _norm_rows(x):
    return np.sqrt(np.einsum("...i,...i->...", x, x))


def cosine_rows(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    y = np.asarray(y, dtype=float)
    nx = _norm_rows(x)
    ny = np.sqrt(y @ y)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (x @ y) / (nx * ny)
    out[(nx == 0) | (ny == 0)] = np.nan
    return np.clip(out, -1.0, 1.0)


def pearson_rows(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    y = np.asarray(y, dtype=float)
    xc = x - x.mean(axis=1, keepdims=True)
    yc = y - y.mean()
    # a constant vector centres to round-off, not exact zeros
    out = cosine_rows(xc, yc)
    scale = np.abs(x).max(axis=1)
    out[np.abs(xc).max(axis=1) <= 1e-14 * scale] = np.nan
    if np.abs(yc).max() <= 1e-14 * np.abs(y).max():
        out[:] = np.nan
    return out


def _annihilated(wx, x, w_norm):
    return _norm_rows(wx) <= 1e-12 * w_norm * _norm_rows(x)


def whitened_cosine_rows(x: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Cosine in whitened space, ``W`` being the symmetric ``V^{-1/2}``."""
    x = np.atleast_2d(x)
    wn = np.linalg.norm(w, 2)
    wx = x @ w  # W symmetric
    wy = w @ y
    out = cosine_rows(wx, wy)
    out[_annihilated(wx, x, wn)] = np.nan
    if _annihilated(wy[None], np.asarray(y)[None], wn)[0]:
        out[:] = np.nan
    return out


def whitened_pearson_rows(x: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    y = np.asarray(y, dtype=float)
    xc = x - x.mean(axis=1, keepdims=True)
    yc = y - y.mean()
    out = whitened_cosine_rows(xc, yc, w)
    out[np.abs(xc).max(axis=1) <= 1e-14 * np.abs(x).max(axis=1)] = np.nan
    if np.abs(yc).max() <= 1e-14 * np.abs(y).max():
        out[:] = np.nan
    return out


def spearman_rows(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    return pearson_rows(rankdata(x, axis=1), rankdata(y))


def kendall_tau_a_rows(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    y = np.asarray(y, dtype=float)
    n = y.size
    i, j = np.triu_indices(n, 1)
    sy = np.sign(y[i] - y[j])
    out = np.empty(x.shape[0])
    for r, row in enumerate(x):
        out[r] = np.sign(row[i] - row[j]) @ sy
    return out / (n * (n - 1) / 2)


# ---------------------------------------------------------------------------
# scalar criteria


def _vec(a, name):
    a = np.asarray(a, dtype=float).ravel()
    if a.ndim != 1 or a.size == 0:
        raise InvalidArgumentError(f"{name} must be a non-empty vector")
    return a


def _pair(d, m):
    d, m = _vec(d, "d"), _vec(m, "m")
    if d.shape != m.shape:
        raise InvalidArgumentError(f"length mismatch: d has {d.size}, m has {m.size}")
    return d, m


def _finite(value, what):
    if not np.isfinite(value):
        raise UndefinedSimilarityError(f"{what} is undefined for these inputs")
    return float(value)


def _whitener_of(v, w):
    if w is not None:
        return np.asarray(w)
    if v is None:
        raise InvalidArgumentError("a distance covariance (or its whitener) is required")
    return whitener(v)


def cosine_similarity(d, m) -> float:
    """``d'm / sqrt((d'd)(m'm))``."""
    d, m = _pair(d, m)
    return _finite(cosine_rows(d, m)[0], "cosine similarity")


def pearson_correlation(d, m) -> float:
    d, m = _pair(d, m)
    return _finite(pearson_rows(d, m)[0], "Pearson correlation")


def whitened_cosine(d, m, v: DistanceCovariance | np.ndarray | None = None, *,
                    w: np.ndarray | None = None) -> float:
    """Whitened RDM cosine similarity (WUC when ``d`` is crossvalidated).

    ``d' V^-1 m / sqrt((d' V^-1 d)(m' V^-1 m))``, evaluated as a plain cosine
    after multiplying both vectors by ``W = V^{-1/2}``. Pass ``w`` to reuse a
    whitener across calls.
    """
    d, m = _pair(d, m)
    return _finite(whitened_cosine_rows(d, m, _whitener_of(v, w))[0], "whitened cosine")


def whitened_pearson(d, m, v: DistanceCovariance | np.ndarray | None = None, *,
                     w: np.ndarray | None = None) -> float:
    """Whitened cosine of the mean-centred vectors."""
    d, m = _pair(d, m)
    return _finite(whitened_pearson_rows(d, m, _whitener_of(v, w))[0], "whitened Pearson")


def rank_correlations(d, m) -> tuple:
    """Spearman correlation (average ranks for ties) and Kendall's tau-a."""
    d, m = _pair(d, m)
    if d.size < 2:
        raise InvalidArgumentError("rank correlations need at least 2 entries")
    rho = _finite(spearman_rows(d, m)[0], "Spearman correlation")
    tau = float(kendall_tau_a_rows(d, m)[0])
    return rho, tau


def linear_cka(a: np.ndarray, b: np.ndarray) -> float:
    """Linear centred kernel alignment of two pattern matrices with equal row counts."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise InvalidArgumentError(f"need matrices with equal row counts, got {a.shape}, {b.shape}")
    if a.shape[0] < 2:
        raise InvalidArgumentError("CKA needs at least 2 rows")
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    ga = ac @ ac.T / a.shape[1]
    gb = bc @ bc.T / b.shape[1]
    hab, haa, hbb = np.sum(ga * gb), np.sum(ga * ga), np.sum(gb * gb)
    if haa == 0 or hbb == 0:
        raise UndefinedSimilarityError("CKA undefined for a constant pattern matrix")
    return float(hab / np.sqrt(haa * hbb))


def criterion_value(criterion: str, d, m, v=None, *, w=None) -> float:
    criterion = canonical_criterion(criterion)
    if criterion == "cosine":
        return cosine_similarity(d, m)
    if criterion == "pearson":
        return pearson_correlation(d, m)
    if criterion == "whitened_cosine":
        return whitened_cosine(d, m, v, w=w)
    if criterion == "whitened_pearson":
        return whitened_pearson(d, m, v, w=w)
    if criterion == "spearman":
        return rank_correlations(d, m)[0]
    if criterion == "kendall_tau_a":
        return rank_correlations(d, m)[1]
    # cka: whitened cosine under i.i.d. condition noise
    k = int(round((1 + np.sqrt(1 + 8 * np.size(d))) / 2))
    return whitened_cosine(d, m, null_covariance(np.eye(k)))


def select_winner(values, order=None, tol: float = TIE_TOL) -> int:
    """Index of the best model; near-ties go to the earliest model in ``order``.

    Values within ``tol`` of the maximum count as tied. NaN never wins;
    returns -1 when every value is NaN.
    """
    values = np.asarray(values, dtype=float)
    if order is None:
        order = np.arange(values.size)
    if np.all(np.isnan(values)):
        return -1
    best = np.nanmax(values)
    for idx in order:
        if values[idx] >= best - tol:
            return int(idx)
    raise AssertionError("unreachable")


def compare_models(d, models: Sequence[ModelRDM], criterion: str,
                   v: DistanceCovariance | np.ndarray | None = None) -> ComparisonResult:
    """Evaluate one criterion for every model and pick the winner.

    For the whitened criteria ``v`` defaults to the i.i.d. null covariance.
    """
    criterion = canonical_criterion(criterion)
    d = _vec(d, "d")
    if not models:
        raise InvalidArgumentError("need at least one model")
    w = None
    if criterion in ("whitened_cosine", "whitened_pearson"):
        if v is None:
            k = int(round((1 + np.sqrt(1 + 8 * d.size)) / 2))
            v = null_covariance(np.eye(k))
        w = whitener(v)
    values = {}
    for model in models:
        if model.m.size != d.size:
            raise InvalidArgumentError(
                f"model {model.name!r} has {model.m.size} distances, data has {d.size}")
        values[model.name] = criterion_value(criterion, d, model.m, w=w)
    names = list(values)
    win = select_winner([values[n] for n in names])
    return ComparisonResult(criterion, values, names[win])


def fit_weighted_model(d, components: Sequence, v: DistanceCovariance | np.ndarray | None = None,
                       nonneg: bool = False, *, tol: float = 1e-10, max_iter: int = 100_000):
    """Fit ``m(theta) = sum_i theta_i m_i`` by generalised least squares.

    Minimises ``J(theta) = (d - m(theta))' V^-1 (d - m(theta))``. With
    ``nonneg`` the weights are constrained to be >= 0 and solved by projected
    coordinate descent, stopping when no coordinate moves more than ``tol``.

    Returns
    -------
    theta : ndarray
    loss : float
        ``J`` at the returned weights.
    """
    d = _vec(d, "d")
    cols = [c.m if isinstance(c, ModelRDM) else _vec(c, "component") for c in components]
    if not cols:
        raise InvalidArgumentError("need at least one model component")
    x = np.column_stack(cols)
    if x.shape[0] != d.size:
        raise InvalidArgumentError(f"components have {x.shape[0]} entries, data has {d.size}")
    w = np.eye(d.size) if v is None else whitener(v)
    xw = w @ x
    dw = w @ d
    if np.linalg.matrix_rank(xw) < x.shape[1]:
        raise DegenerateModelError("model components are linearly dependent on the range of V")
    if not nonneg:
        theta = np.linalg.lstsq(xw, dw, rcond=None)[0]
    else:
        q = xw.T @ xw
        b = xw.T @ dw
        theta = np.zeros(x.shape[1])
        for _ in range(max_iter):
            biggest = 0.0
            for i in range(theta.size):
                new = max(0.0, theta[i] - (q[i] @ theta - b[i]) / q[i, i])
                biggest = max(biggest, abs(new - theta[i]))
                theta[i] = new
            if biggest < tol:
                break
    r = dw - xw @ theta
    return theta, float(r @ r)
