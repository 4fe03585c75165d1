"""Metabolic distance graphs from regional intensity distributions, and
multi-output kernel regression of cognitive scores on them.

Pipeline: ``ingest`` (volumes, atlas, scores) -> ``density`` (ISJ KDE per
region) -> ``dtw`` (pairwise curve distances) -> ``graph`` (features, group
statistics) -> ``model`` (epsilon-SVR, tuning, LOOCV) -> ``importance``.
``synth`` generates cohorts with known structure.
"""

__version__ = "0.1.0"

from .density import DensityCurve, RegionDensityEstimator, isj_bandwidth, kde_curve, silverman_bandwidth
from .dtw import DtwConfig, dtw_distance, pairwise_distances
from .graph import (
    DistanceGraph,
    GraphFlattener,
    GroupGraph,
    MetabolicGraphBuilder,
    count_edges_above,
    flatten,
    group_graph,
    mean_distance,
    unflatten,
)
from .model import EpsilonSVR, MultiOutputSVR, Standardizer, SvrHyperParams, grid_search_5fold, loocv_evaluate
from .importance import holdout_permutation_importance, permutation_importance
from .synth import SynthSpec, default_spec, generate_cohort

__all__ = [
    "DensityCurve",
    "DistanceGraph",
    "DtwConfig",
    "EpsilonSVR",
    "GraphFlattener",
    "GroupGraph",
    "MetabolicGraphBuilder",
    "MultiOutputSVR",
    "RegionDensityEstimator",
    "Standardizer",
    "SvrHyperParams",
    "SynthSpec",
    "count_edges_above",
    "default_spec",
    "dtw_distance",
    "flatten",
    "generate_cohort",
    "grid_search_5fold",
    "group_graph",
    "holdout_permutation_importance",
    "isj_bandwidth",
    "kde_curve",
    "loocv_evaluate",
    "mean_distance",
    "pairwise_distances",
    "permutation_importance",
    "silverman_bandwidth",
    "unflatten",
]
