"""Counterfactual explanations guided by diffusion distance and directional coherence."""

from .coherence import CoherenceReport, directional_coherence, marginal_pred_sign
from .data import Dataset, Feature, FeatureSchema, Preprocessor, load_csv, make_s_curve, make_swiss_roll, train_test_split
from .diffusion import DiffusionMap, diffusion_distance
from .diffusion import fit as fit_diffusion
from .errors import AlreadyDesiredError, CodiceError, ConfigurationError, EigenSolverError, RowError, SchemaError
from .model import LinearRegressionModel, LogisticModel, KNNProbabilityModel, Predictor
from .objective import DesiredOutcome, ObjectiveWeights
from .search import CounterfactualResult, GAConfig, find_counterfactual

__version__ = "0.1.0"

__all__ = [
    "AlreadyDesiredError", "CodiceError", "CoherenceReport", "ConfigurationError", "CounterfactualResult",
    "Dataset", "DesiredOutcome", "DiffusionMap", "EigenSolverError", "Feature", "FeatureSchema", "GAConfig",
    "KNNProbabilityModel", "LinearRegressionModel", "LogisticModel", "ObjectiveWeights", "Predictor",
    "Preprocessor", "RowError", "SchemaError", "diffusion_distance", "directional_coherence",
    "find_counterfactual", "fit_diffusion", "load_csv", "make_s_curve", "make_swiss_roll",
    "marginal_pred_sign", "train_test_split",
]
