"""Monte Carlo model-selection harness.

Every trial draws one dataset per data-generating model from its own RNG
substream, estimates distances, scores each candidate model under every
requested criterion and records the winner. Counts are integers, so results
do not depend on how trials are spread over workers.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..compare import (CRITERIA, TIE_TOL, canonical_criterion, cosine_rows, kendall_tau_a_rows,
                       pearson_rows, spearman_rows, whitened_cosine_rows, whitened_pearson_rows)
from ..covariance import null_covariance, whitener
from ..errors import InvalidArgumentError
from ..estimators import distances_from_second_moment, stacked_distance_estimates
from ..noise import sqrt_psd
from .generators import exact_signal, noise_from_roots, standard_draws, trial_rng
from .scenarios import Scenario

log = logging.getLogger(__name__)

# distance estimator each criterion is applied to by default; rank and
# Pearson-type criteria discard the zero point, so they use biased distances
DEFAULT_ESTIMATOR = {
    "cosine": "unbiased",
    "whitened_cosine": "unbiased",
    "pearson": "biased",
    "whitened_pearson": "biased",
    "spearman": "biased",
    "kendall_tau_a": "biased",
    "cka": "biased",
}
CHUNK_TRIALS = 200


def parse_criterion(spec: str) -> tuple:
    """``"pearson"`` or ``"pearson:unbiased"`` -> ``(criterion, estimator)``."""
    name, _, est = spec.strip().partition(":")
    crit = canonical_criterion(name)
    est = est or DEFAULT_ESTIMATOR[crit]
    if est not in ("biased", "unbiased"):
        raise InvalidArgumentError(f"unknown estimator {est!r} in criterion {spec!r}")
    return crit, est


def criterion_label(crit: str, est: str) -> str:
    return crit if est == DEFAULT_ESTIMATOR[crit] else f"{crit}:{est}"


@dataclass(frozen=True)
class CriterionResult:
    correct: int
    undefined: int
    wins: tuple  # decisions won by each candidate model, undefined draws excluded
    n: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.n

    @property
    def se(self) -> float:
        a = self.accuracy
        return float(np.sqrt(a * (1.0 - a) / self.n))

    @property
    def split(self) -> tuple:
        total = sum(self.wins)
        if total == 0:
            return tuple(float("nan") for _ in self.wins)
        return tuple(w / total for w in self.wins)

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "se": self.se, "split": list(self.split),
                "wins": list(self.wins), "correct": self.correct, "undefined": self.undefined,
                "n_decisions": self.n}


@dataclass(frozen=True)
class AccuracyReport:
    """Per-criterion selection accuracy.

    ``n_sims`` counts trials; each trial contributes one decision per
    data-generating model. ``runtime`` is informational only and is excluded
    from equality comparisons.
    """

    scenario: str
    n_sims: int
    seed: int
    model_names: tuple
    results: dict
    runtime: float = field(default=0.0, compare=False)

    def accuracy(self, criterion: str) -> float:
        return self.results[criterion].accuracy

    def se(self, criterion: str) -> float:
        return self.results[criterion].se

    def split(self, criterion: str) -> tuple:
        return self.results[criterion].split

    def to_dict(self, timing: bool = False) -> dict:
        out = {
            "scenario": self.scenario,
            "n_sims": self.n_sims,
            "seed": self.seed,
            "models": list(self.model_names),
            "criteria": {name: r.to_dict() for name, r in self.results.items()},
        }
        if timing:
            out["runtime_seconds"] = self.runtime
        return out


# ---------------------------------------------------------------------------
# data generation


def _draw_trials(scenario: Scenario, trials, roots):
    """Stacked datasets (T, n_models, M, K, P) and per-trial candidate orders."""
    root_gs, root_k, root_p = roots
    n_mod = len(scenario.signal_models)
    k, p, m = scenario.k, scenario.p, scenario.m
    signal = np.zeros((len(trials), n_mod, 1, k, p))
    z = np.empty((len(trials), n_mod, m, k, p))
    orders = np.empty((len(trials), n_mod), dtype=np.int64)
    for t, trial in enumerate(trials):
        rng = trial_rng(scenario.seed, trial)
        orders[t] = rng.permutation(n_mod)
        for i in range(n_mod):
            if root_gs[i] is not None:
                signal[t, i, 0] = exact_signal(root_gs[i], p, rng)
            z[t, i] = standard_draws(rng, (m, k, p), scenario.noise_distribution)
    return signal + noise_from_roots(root_k, root_p, z), orders


def _roots(scenario: Scenario):
    s = scenario.signal_strength
    root_gs = [None if s == 0 else sqrt_psd(g * s) for g in scenario.signal_models]
    return root_gs, sqrt_psd(scenario.sigma_k), sqrt_psd(scenario.sigma_p)


def split_conditions(y: np.ndarray, splits: int) -> np.ndarray:
    """Merge groups of ``2**splits`` consecutive partitions into one partition.

    ``y`` has shape (..., M, K, P). Partition ``a * f + b`` (``f = 2**splits``)
    becomes conditions ``b*K .. b*K + K - 1`` of new partition ``a``.
    """
    if splits == 0:
        return y
    f = 2 ** splits
    *lead, m, k, p = y.shape
    return y.reshape(*lead, m // f, f * k, p)


# ---------------------------------------------------------------------------
# scoring


def _criterion_values(crit, x, models, w_null, w_cka):
    cols = []
    for mod in models:
        if crit == "cosine":
            cols.append(cosine_rows(x, mod))
        elif crit == "pearson":
            cols.append(pearson_rows(x, mod))
        elif crit == "whitened_cosine":
            cols.append(whitened_cosine_rows(x, mod, w_null))
        elif crit == "whitened_pearson":
            cols.append(whitened_pearson_rows(x, mod, w_null))
        elif crit == "spearman":
            cols.append(spearman_rows(x, mod))
        elif crit == "kendall_tau_a":
            cols.append(kendall_tau_a_rows(x, mod))
        elif crit == "cka":
            cols.append(whitened_cosine_rows(x, mod, w_cka))
        else:
            raise InvalidArgumentError(f"unknown criterion {crit!r}")
    return np.stack(cols, axis=1)


def select_winners(values: np.ndarray, orders: np.ndarray, tol: float = TIE_TOL) -> np.ndarray:
    """Row-wise winner; near-ties go to the model listed first in that row's order.

    Rows where every value is NaN get -1.
    """
    n, n_mod = values.shape
    undefined = np.all(np.isnan(values), axis=1)
    best = np.nanmax(np.where(undefined[:, None], 0.0, values), axis=1)
    tied = values >= best[:, None] - tol
    rank = np.empty_like(orders)
    rank[np.arange(n)[:, None], orders] = np.arange(n_mod)
    winner = np.argmin(np.where(tied, rank, n_mod), axis=1)
    winner[undefined] = -1
    return winner


@dataclass
class _Analysis:
    splits: int
    models: list
    w_null: np.ndarray
    w_cka: np.ndarray


def _analysis_for(scenario: Scenario, splits: int, models) -> _Analysis:
    f = 2 ** splits
    base = scenario.analysis_sigma_k if scenario.analysis_sigma_k is not None else scenario.sigma_k
    sk = np.kron(np.eye(f), base)
    k = sk.shape[0]
    return _Analysis(splits, [mod.m for mod in models], whitener(null_covariance(sk)),
                     whitener(null_covariance(np.eye(k))))


def _count(y, orders, analyses, criteria):
    """Integer tallies ``{(level, label): (correct, undefined, wins)}`` for one chunk."""
    n_trials, n_gen = y.shape[:2]
    truth = np.tile(np.arange(n_gen), n_trials)
    rep_orders = np.repeat(orders, n_gen, axis=0)
    out = {}
    for level, an in enumerate(analyses):
        d_b, d_u = stacked_distance_estimates(split_conditions(y, an.splits))
        d_b = d_b.reshape(n_trials * n_gen, -1)
        d_u = d_u.reshape(n_trials * n_gen, -1)
        for crit, est in criteria:
            x = d_b if est == "biased" else d_u
            with np.errstate(invalid="ignore", divide="ignore"):
                vals = _criterion_values(crit, x, an.models, an.w_null, an.w_cka)
            win = select_winners(vals, rep_orders)
            wins = np.bincount(win[win >= 0], minlength=len(an.models))
            out[level, criterion_label(crit, est)] = np.concatenate(
                [[np.sum(win == truth), np.sum(win < 0)], wins]).astype(np.int64)
    return out


def _run_chunk(args):
    scenario, trials, analyses, criteria = args
    y, orders = _draw_trials(scenario, trials, _roots(scenario))
    return _count(y, orders, analyses, criteria)


def _default_threads():
    env = os.environ.get("RDMKIT_THREADS")
    if env:
        return int(env)
    return os.cpu_count() or 1


def _run(scenario, criteria, analyses, threads, chunk):
    parsed = [parse_criterion(c) for c in criteria]
    if not parsed:
        raise InvalidArgumentError("at least one criterion is required")
    parsed = list(dict.fromkeys(parsed))
    n = scenario.n_sims
    chunks = [range(a, min(a + chunk, n)) for a in range(0, n, chunk)]
    jobs = [(scenario, tr, analyses, parsed) for tr in chunks]
    threads = _default_threads() if threads is None else int(threads)
    if threads < 1:
        raise InvalidArgumentError(f"threads must be >= 1, got {threads}")
    totals = {}
    t0 = time.perf_counter()
    if threads == 1 or len(jobs) == 1:
        results = map(_run_chunk, jobs)
    else:
        pool = ProcessPoolExecutor(max_workers=min(threads, len(jobs)))
        results = pool.map(_run_chunk, jobs)
    try:
        for i, res in enumerate(results):
            for key, counts in res.items():
                totals[key] = totals.get(key, 0) + counts
            log.info("%s: %d/%d trials", scenario.name, chunks[i].stop, n)
    finally:
        if not (threads == 1 or len(jobs) == 1):
            pool.shutdown()
    runtime = time.perf_counter() - t0
    n_dec = n * len(scenario.signal_models)
    reports = []
    for level, an in enumerate(analyses):
        res = {}
        for crit, est in parsed:
            label = criterion_label(crit, est)
            c = totals[level, label]
            res[label] = CriterionResult(int(c[0]), int(c[1]), tuple(int(v) for v in c[2:]), n_dec)
        reports.append(res)
    return reports, runtime


def run_scenario(scenario: Scenario, criteria=CRITERIA, threads: int | None = 1,
                 chunk: int = CHUNK_TRIALS) -> AccuracyReport:
    """Model-selection accuracy of each criterion over ``scenario.n_sims`` trials.

    Parameters
    ----------
    criteria : iterable of str
        Criterion names (``wuc`` accepted). A suffix ``:biased`` or
        ``:unbiased`` overrides the distance estimator the criterion is
        applied to; see ``DEFAULT_ESTIMATOR``.
    threads : int or None
        Worker processes; None uses ``RDMKIT_THREADS`` or the CPU count.
        The report does not depend on this value.
    """
    an = _analysis_for(scenario, scenario.condition_splits, scenario.candidate_models)
    (res,), runtime = _run(scenario, criteria, [an], threads, chunk)
    return AccuracyReport(scenario.name, scenario.n_sims, scenario.seed,
                          tuple(scenario.model_names()), res, runtime)


def run_condition_split_sweep(scenario: Scenario, levels=(0, 1, 2, 3), criteria=CRITERIA,
                              threads: int | None = 1, chunk: int = CHUNK_TRIALS) -> dict:
    """Evaluate several condition-split levels on the same simulated datasets.

    ``scenario`` must have ``condition_splits == 0``; its signal models are
    repeated across merged partitions to form the candidate models at each
    level. Returns ``{level: AccuracyReport}``; each report equals what
    ``run_scenario`` gives for the scenario built at that level with the same
    seed.
    """
    if scenario.condition_splits != 0:
        raise InvalidArgumentError("sweep base scenario must have condition_splits=0")
    from ..compare import ModelRDM

    analyses = []
    for lev in levels:
        f = 2 ** lev
        if scenario.m % f or scenario.m // f < 2:
            raise InvalidArgumentError(f"cannot split {scenario.m} partitions {lev} times")
        models = [ModelRDM(mod.name, distances_from_second_moment(np.kron(np.ones((f, f)), g)))
                  for mod, g in zip(scenario.candidate_models, scenario.signal_models)]
        analyses.append(_analysis_for(scenario, lev, models))
    reports, runtime = _run(scenario, criteria, analyses, threads, chunk)
    return {lev: AccuracyReport(scenario.name, scenario.n_sims, scenario.seed,
                                tuple(scenario.model_names()), res, runtime)
            for lev, res in zip(levels, reports)}
