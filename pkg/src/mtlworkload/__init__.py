"""Multi-task and cluster-based regression for per-facility workload prediction."""

from .clustering import ClusterAssignment, GapResult, assign_clusters, gap_statistic, kmeans, nearest_cluster
from .data import MultiTaskDataset, PreprocessSpec, RecordTable, Schema, apply_preprocess, load_csv, preprocess
from .errors import DataError, MetricError, NumericError, ParameterError, SchemaError, UnknownTaskError
from .linear import LinearModel, lasso_fit, ridge_fit
from .mtl import FitTrace, MtlFitConfig, WeightMatrix, mtl_fit, mtl_lambda_max, mtl_predict, mtl_prox
from .pipeline import (
    BenchmarkReport,
    ClusterBasedModel,
    RegressorSpec,
    cross_validate,
    fit_cluster_based,
    mse,
    predict_cluster_based,
    r2,
    select_best_method,
)
from .simgen import GroundTruth, SimConfig, scarcity_suite, simulate
from .trees import RandomForest, RegressionTree, forest_fit, tree_fit

__version__ = "0.1.0"
