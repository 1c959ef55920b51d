"""Simulation scenarios: candidate models, noise structure and design dimensions."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from ..compare import ModelRDM
from ..dataset import pair_indices
from ..errors import IngestionError, InvalidArgumentError
from ..estimators import centering_matrix, distances_from_second_moment
from .generators import NOISE_DISTRIBUTIONS, gaussian_spatial_covariance

# fixed seed for the synthetic stand-in model features
_MODEL_SEED = 20200515


@dataclass(frozen=True)
class Scenario:
    """Everything needed to simulate datasets and score model selection.

    Data are generated with ``k`` conditions, ``p`` channels and ``m``
    partitions. With ``condition_splits = s > 0`` each dataset is reanalysed
    after ``s`` rounds of merging pairs of partitions into one partition with
    twice as many conditions, so the analysis sees ``k * 2**s`` conditions and
    ``m / 2**s`` partitions; ``candidate_models`` are given at that analysis
    size.

    ``signal_models[i]`` is the second-moment matrix that generates data for
    ``candidate_models[i]``. ``analysis_sigma_k`` is the condition covariance
    assumed when whitening (defaults to ``sigma_k``).
    """

    name: str
    k: int
    p: int
    m: int
    signal_models: tuple
    signal_strength: float
    sigma_k: np.ndarray
    sigma_p: np.ndarray
    candidate_models: tuple
    n_sims: int = 1000
    seed: int = 0
    noise_distribution: str = "gaussian"
    condition_splits: int = 0
    analysis_sigma_k: np.ndarray | None = None
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.k < 2 or self.p < 1 or self.m < 1:
            raise InvalidArgumentError(f"invalid dimensions k={self.k}, p={self.p}, m={self.m}")
        if self.n_sims < 1:
            raise InvalidArgumentError(f"n_sims must be positive, got {self.n_sims}")
        if self.signal_strength < 0:
            raise InvalidArgumentError("signal strength must be >= 0")
        if self.noise_distribution not in NOISE_DISTRIBUTIONS:
            raise InvalidArgumentError(f"unknown noise distribution {self.noise_distribution!r}")
        factor = 2 ** self.condition_splits
        if self.condition_splits < 0 or self.m % factor or self.m // factor < 2:
            raise InvalidArgumentError(
                f"cannot split {self.m} partitions {self.condition_splits} times")
        sk = _psd(self.sigma_k, (self.k, self.k), "sigma_k")
        sp = _psd(self.sigma_p, (self.p, self.p), "sigma_p")
        gs = tuple(_psd(g, (self.k, self.k), "signal model") for g in self.signal_models)
        models = tuple(m if isinstance(m, ModelRDM) else ModelRDM(*m)
                       for m in self.candidate_models)
        if len(gs) != len(models) or len(models) < 1:
            raise InvalidArgumentError("need one signal model per candidate model")
        d = self.analysis_k * (self.analysis_k - 1) // 2
        for mod in models:
            if mod.m.size != d:
                raise InvalidArgumentError(
                    f"candidate model {mod.name!r} has {mod.m.size} entries, expected {d}")
        ask = None
        if self.analysis_sigma_k is not None:
            ask = _psd(self.analysis_sigma_k, (self.k, self.k), "analysis_sigma_k")
        for name, val in (("sigma_k", sk), ("sigma_p", sp), ("signal_models", gs),
                          ("candidate_models", models), ("analysis_sigma_k", ask)):
            object.__setattr__(self, name, val)

    @property
    def analysis_k(self) -> int:
        return self.k * 2 ** self.condition_splits

    @property
    def analysis_m(self) -> int:
        return self.m // 2 ** self.condition_splits

    def model_names(self) -> list:
        return [m.name for m in self.candidate_models]

    def to_dict(self) -> dict:
        return {
            "name": self.name, "k": self.k, "p": self.p, "m": self.m,
            "signal_models": [g.tolist() for g in self.signal_models],
            "signal_strength": self.signal_strength,
            "sigma_k": self.sigma_k.tolist(), "sigma_p": self.sigma_p.tolist(),
            "candidate_models": [{"name": m.name, "m": m.m.tolist()} for m in self.candidate_models],
            "n_sims": self.n_sims, "seed": self.seed,
            "noise_distribution": self.noise_distribution,
            "condition_splits": self.condition_splits,
            "analysis_sigma_k": None if self.analysis_sigma_k is None else self.analysis_sigma_k.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Scenario":
        obj = dict(obj)
        obj["candidate_models"] = tuple(ModelRDM(c["name"], c["m"]) for c in obj["candidate_models"])
        obj["signal_models"] = tuple(np.asarray(g, dtype=float) for g in obj["signal_models"])
        for key in ("sigma_k", "sigma_p"):
            obj[key] = np.asarray(obj[key], dtype=float)
        if obj.get("analysis_sigma_k") is not None:
            obj["analysis_sigma_k"] = np.asarray(obj["analysis_sigma_k"], dtype=float)
        return cls(**obj)


def _psd(a, shape, name):
    a = np.array(a, dtype=np.float64)
    if a.shape != shape:
        raise InvalidArgumentError(f"{name} must have shape {shape}, got {a.shape}")
    if np.abs(a - a.T).max(initial=0.0) > 1e-12 * max(np.abs(a).max(initial=0.0), 1e-300):
        raise InvalidArgumentError(f"{name} is not symmetric")
    w = np.linalg.eigvalsh(a)
    if w[0] < -1e-10 * max(w[-1], 0.0):
        raise InvalidArgumentError(f"{name} is not positive semidefinite")
    a.setflags(write=False)
    return a


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        return Scenario.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except OSError as exc:
        raise IngestionError(f"{path}: cannot read scenario ({exc.strerror})") from exc
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise IngestionError(f"{path}: malformed scenario ({exc})") from exc


# ---------------------------------------------------------------------------
# model construction


def second_moment_from_rdm(m: np.ndarray, k: int) -> np.ndarray:
    """Centred second moment ``-H D H / 2`` whose distances reproduce ``m``."""
    dmat = np.zeros((k, k))
    i, j = np.triu_indices(k, 1)
    dmat[i, j] = dmat[j, i] = m
    h = centering_matrix(k)
    return -0.5 * h @ dmat @ h


def category_rdm(groups, within: float, between: float) -> np.ndarray:
    k = len(groups)
    return np.array([within if groups[i] == groups[j] else between
                     for i, j in pair_indices(k)], dtype=float)


def _unit(m):
    return m / np.linalg.norm(m)


def _models_from_rdms(rdms, k, names=None):
    rdms = [_unit(np.asarray(r, dtype=float)) for r in rdms]
    gs = tuple(second_moment_from_rdm(r, k) for r in rdms)
    names = names or [f"model{i + 1}" for i in range(len(rdms))]
    return gs, tuple(ModelRDM(n, r) for n, r in zip(names, rdms))


def _rdm_corr(g1, g2):
    return np.corrcoef(distances_from_second_moment(g1), distances_from_second_moment(g2))[0, 1]


def chord_design(n_fingers: int = 5) -> np.ndarray:
    """Indicator matrix of all non-empty finger combinations (31 x 5 for five fingers)."""
    rows = []
    for size in range(1, n_fingers + 1):
        for combo in combinations(range(n_fingers), size):
            r = np.zeros(n_fingers)
            r[list(combo)] = 1.0
            rows.append(r)
    return np.array(rows)


def correlated_model_pair(design: np.ndarray, target_r: float = 0.85, seed: int = _MODEL_SEED):
    """Two second-moment matrices ``X F F' X'`` whose RDMs correlate at ``target_r``.

    The second feature set is a rotation of the first towards an independent
    random set; the rotation angle is found by bisection.
    """
    rng = np.random.default_rng(seed)
    n = design.shape[1]
    f1 = rng.standard_normal((n, n))
    f_other = rng.standard_normal((n, n))
    k = design.shape[0]
    h = centering_matrix(k)

    def pair(theta):
        f2 = np.cos(theta) * f1 + np.sin(theta) * f_other
        g1 = h @ design @ f1 @ f1.T @ design.T @ h
        g2 = h @ design @ f2 @ f2.T @ design.T @ h
        return g1, g2

    lo, hi = 0.0, np.pi / 2
    if _rdm_corr(*pair(hi)) > target_r:
        raise AssertionError("random features already too similar")
    for _ in range(80):
        mid = (lo + hi) / 2
        if _rdm_corr(*pair(mid)) > target_r:
            lo = mid
        else:
            hi = mid
    g1, g2 = pair(lo)
    out = []
    for g in (g1, g2):
        out.append(g / np.linalg.norm(distances_from_second_moment(g)))
    return tuple(out)


def _split_models(gs, splits):
    f = 2 ** splits
    block = np.ones((f, f))
    names = ("muscle", "natural_stats")
    expanded = [np.kron(block, g) for g in gs]
    return tuple(ModelRDM(n, distances_from_second_moment(g)) for n, g in zip(names, expanded))


def _neighbour_correlation(k, r):
    a = np.eye(k)
    idx = np.arange(k - 1)
    a[idx, idx + 1] = a[idx + 1, idx] = r
    return a


# ---------------------------------------------------------------------------
# library

FIG4_PARTITIONS = (2, 4, 6, 8, 10, 12)
SIGNAL_LEVELS = {
    "fig4a": (0.0, 0.2, 0.4, 0.8, 1.6, 3.2),
    "fig4b": (0.0, 0.2, 0.4, 0.8, 1.6, 3.2),
    "fig4c": (0.0, 0.2, 0.4, 0.8, 1.6, 3.2),
    "fig4d": (0.0, 0.2, 0.4, 0.8, 1.6, 3.2),
    "exp1_like": (0.02, 0.04, 0.08, 0.16),
    "exp2_like": (0.02, 0.04, 0.08, 0.16),
    "cond_split_fig7": (0.05,),
    "spatial_noise_appendix": (0.16,),
}
SWEEPS = {
    "fig4a": ("m", FIG4_PARTITIONS),
    "fig4b": ("m", FIG4_PARTITIONS),
    "fig4c": ("m", FIG4_PARTITIONS),
    "fig4d": ("m", FIG4_PARTITIONS),
    "exp1_like": ("signal_strength", SIGNAL_LEVELS["exp1_like"]),
    "exp2_like": ("signal_strength", SIGNAL_LEVELS["exp2_like"]),
    "cond_split_fig7": ("condition_splits", (0, 1, 2, 3)),
    "spatial_noise_appendix": ("s2", (0.0, 1.0, 2.0, 3.0, 4.0, 5.0)),
}
SCENARIO_NAMES = tuple(SWEEPS)

_DEFAULT_SIGNAL = {
    "fig4a": 0.8, "fig4b": 0.8, "fig4c": 0.8, "fig4d": 0.8,
    "exp1_like": 0.08, "exp2_like": 0.08,
    "cond_split_fig7": 0.05, "spatial_noise_appendix": 0.16,
}


def _fig4(name, m, signal_strength, **common):
    k, p = 4, 50
    if name == "fig4c":
        rdms = [category_rdm([0, 0, 1, 1], 1.0, 2.0), category_rdm([0, 0, 1, 1], 1.0, 4.0)]
    elif name == "fig4d":
        rdms = [category_rdm([0, 0, 1, 1], 0.5, 1.0), category_rdm([0, 1, 0, 1], 0.2, 1.0)]
    else:
        rdms = [category_rdm([0, 0, 1, 1], 0.5, 1.0), category_rdm([0, 1, 0, 1], 0.5, 1.0)]
    gs, models = _models_from_rdms(rdms, k)
    corr = _neighbour_correlation(k, 0.15) if name == "fig4a" else np.eye(k)
    # per-partition noise variance grows with M so the partition average has fixed noise
    return Scenario(name=name, k=k, p=p, m=m, signal_models=gs, signal_strength=signal_strength,
                    sigma_k=m * corr, sigma_p=np.eye(p), candidate_models=models, **common)


def scenario_library(name: str, **params) -> Scenario:
    """Build a named scenario.

    Parameters
    ----------
    name : str
        One of ``fig4a``, ``fig4b``, ``fig4c``, ``fig4d``, ``exp1_like``,
        ``exp2_like``, ``cond_split_fig7``, ``spatial_noise_appendix``.
    **params
        Overrides: ``m``, ``p``, ``signal_strength``, ``n_sims``, ``seed``,
        ``noise_distribution``, ``condition_splits`` (cond_split_fig7) and
        ``s2`` (spatial_noise_appendix).
    """
    if name not in SWEEPS:
        raise InvalidArgumentError(
            f"unknown scenario {name!r}; choose from {', '.join(SCENARIO_NAMES)}")
    params = dict(params)
    signal = float(params.pop("signal_strength", _DEFAULT_SIGNAL[name]))
    common = {key: params.pop(key) for key in ("n_sims", "seed", "noise_distribution")
              if key in params}
    if "n_sims" in common:
        common["n_sims"] = int(common["n_sims"])
    if "seed" in common:
        common["seed"] = int(common["seed"])

    if name.startswith("fig4"):
        m = int(params.pop("m", 4))
        scen = _fig4(name, m, signal, **common)
    elif name in ("exp1_like", "exp2_like", "spatial_noise_appendix"):
        design = np.eye(5) if name == "exp1_like" else chord_design(5)
        k = design.shape[0]
        gs = correlated_model_pair(design)
        models = tuple(ModelRDM(n, distances_from_second_moment(g))
                       for n, g in zip(("muscle", "natural_stats"), gs))
        m = int(params.pop("m", 8))
        if name == "spatial_noise_appendix":
            s2 = float(params.pop("s2", 5.0))
            sigma_p = gaussian_spatial_covariance((6, 6, 6), s2)
            params_out = {"s2": s2}
        else:
            sigma_p = np.eye(int(params.pop("p", 160)))
            params_out = {}
        scen = Scenario(name=name, k=k, p=sigma_p.shape[0], m=m, signal_models=gs,
                        signal_strength=signal, sigma_k=np.eye(k), sigma_p=sigma_p,
                        candidate_models=models, params=params_out, **common)
    else:  # cond_split_fig7
        splits = int(params.pop("condition_splits", 0))
        gs = correlated_model_pair(np.eye(5))
        p = int(params.pop("p", 160))
        scen = Scenario(name=name, k=5, p=p, m=int(params.pop("m", 32)), signal_models=gs,
                        signal_strength=signal, sigma_k=np.eye(5), sigma_p=np.eye(p),
                        candidate_models=_split_models(gs, splits), condition_splits=splits,
                        **common)
    if params:
        raise InvalidArgumentError(f"unknown parameter(s) for {name}: {', '.join(params)}")
    return scen


def sweep(name: str, values=None, **params) -> list:
    """``(value, Scenario)`` for each operating point of a named scenario's sweep."""
    key, default = SWEEPS[name]
    return [(v, scenario_library(name, **{**params, key: v}))
            for v in (default if values is None else values)]

