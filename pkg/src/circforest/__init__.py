"""Circular regression trees and forests for von Mises responses."""

from .circular import (
    VonMisesParams,
    a1,
    a1inv,
    angular_distance,
    bessel_i,
    cdf,
    circular_mean,
    density,
    fit_mle,
    fit_moments,
    log_likelihood,
    mean_resultant_length,
    sample,
    score,
    wrap_angle,
)
from .baselines import climatology_fit, climatology_predict, persistence_fit, persistence_predict
from .dataset import Dataset
from .errors import (
    CircForestError,
    DataError,
    EstimationError,
    InsufficientDataError,
    ModelFormatError,
    RoutingError,
)
from .evaluation import (
    EvalConfig,
    ScoreRecord,
    aggregate,
    crps_circular,
    crps_vonmises,
    crpss,
    cross_validate,
)
from .forest import Forest, ForestControl, forest_weights, grow_forest, predict_forest
from .io import FeatureSpec, Schema, derive_features, export_csv, ingest, load_model, preprocess, save_model
from .partition import (
    Covariate,
    SplitPoint,
    SplitTestResult,
    linear_statistic,
    permutation_moments,
    score_matrix,
    select_split_point,
    select_variable,
    test_statistic,
)
from .tree import Node, Tree, TreeControl, grow

__version__ = "0.1.0"
