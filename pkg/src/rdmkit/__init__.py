"""Estimation and comparison of representational dissimilarity matrices.

Biased and crossvalidated distance estimators for partitioned activity data,
their analytical covariance, whitened model-comparison criteria and a Monte
Carlo model-selection harness.
"""

from .compare import (CRITERIA, ComparisonResult, ModelRDM, compare_models, cosine_similarity,
                      criterion_value, fit_weighted_model, linear_cka, pearson_correlation,
                      rank_correlations, select_winner, whitened_cosine, whitened_pearson)
from .covariance import (DistanceCovariance, build_t_d, full_covariance, null_covariance,
                         whitener, xi_matrix)
from .dataset import (ActivityDataset, ContrastMatrix, build_contrast_matrix, load_dataset,
                      pair_indices, write_dataset)
from .errors import (ConditioningError, CrossvalidationError, DegreesOfFreedomError, DomainError,
                     IngestionError, InvalidArgumentError, MissingResidualsError, NumericalError,
                     RDMKitError, RegularizationError, UndefinedSimilarityError)
from .estimators import (RDMEstimate, SecondMoment, biased_distances, biased_second_moment,
                         pooled_unbiased_distances, unbiased_distances, unbiased_second_moment)
from .noise import (NoiseSpec, effective_channel_count, estimate_sigma_p, prewhiten,
                    shrink_sigma_p)

__version__ = "0.1.0"

__all__ = [
    "CRITERIA", "ComparisonResult", "ModelRDM", "compare_models", "cosine_similarity",
    "criterion_value", "fit_weighted_model", "linear_cka", "pearson_correlation",
    "rank_correlations", "select_winner", "whitened_cosine", "whitened_pearson",
    "DistanceCovariance", "build_t_d", "full_covariance", "null_covariance", "whitener",
    "xi_matrix", "ActivityDataset", "ContrastMatrix", "build_contrast_matrix", "load_dataset",
    "pair_indices", "write_dataset", "ConditioningError", "CrossvalidationError",
    "DegreesOfFreedomError", "DomainError", "IngestionError", "InvalidArgumentError",
    "MissingResidualsError", "NumericalError", "RDMKitError", "RegularizationError",
    "UndefinedSimilarityError", "RDMEstimate", "SecondMoment", "biased_distances",
    "biased_second_moment", "pooled_unbiased_distances", "unbiased_distances",
    "unbiased_second_moment", "NoiseSpec", "effective_channel_count", "estimate_sigma_p",
    "prewhiten", "shrink_sigma_p",
]
