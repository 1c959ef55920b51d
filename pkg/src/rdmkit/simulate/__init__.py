"""Simulated datasets and the Monte Carlo model-selection harness."""

from .generators import (NOISE_DISTRIBUTIONS, gaussian_spatial_covariance, generate_noise,
                         generate_signal, standard_draws, trial_rng, voxel_grid)
from .harness import (DEFAULT_ESTIMATOR, AccuracyReport, CriterionResult, parse_criterion,
                      run_condition_split_sweep, run_scenario, select_winners, split_conditions)
from .scenarios import (SCENARIO_NAMES, SIGNAL_LEVELS, SWEEPS, Scenario, category_rdm, chord_design,
                        correlated_model_pair, load_scenario, scenario_library,
                        second_moment_from_rdm, sweep)

__all__ = [
    "NOISE_DISTRIBUTIONS", "gaussian_spatial_covariance", "generate_noise", "generate_signal",
    "standard_draws", "trial_rng", "voxel_grid",
    "DEFAULT_ESTIMATOR", "AccuracyReport", "CriterionResult", "parse_criterion",
    "run_condition_split_sweep", "run_scenario", "select_winners", "split_conditions",
    "SCENARIO_NAMES", "SIGNAL_LEVELS", "SWEEPS", "Scenario", "category_rdm", "chord_design",
    "correlated_model_pair", "load_scenario", "scenario_library", "second_moment_from_rdm",
    "sweep",
]
