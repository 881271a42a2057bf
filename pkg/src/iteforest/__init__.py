"""Random-forest estimators of individual treatment effects."""

__version__ = "0.1.0"

from .data import Dataset
from .exceptions import (ConfigurationError, InferenceError, IngestionError,
                         IteForestError, NoOOBTreesError, SchemaError)
from .forest import (Forest, ForestSpec, Tree, best_split, bootstrap_sample,
                     get_threads, grow_forest, predict, predict_oob, set_threads)
from .synthetic import SyntheticForest, SyntheticSpec, grow_synthetic, predict_synthetic
from .bivariate import BivariateState, impute_bivariate, impute_counterfactuals
from .estimators import (ESTIMATORS, IteResult, Method, PredictedPair, estimate_bivariate,
                         estimate_cf, estimate_honest, estimate_syncf, estimate_vt,
                         estimate_vt_interaction, export_ite, import_external_ite)
from .simbench import (ExperimentConfig, SimModel, SimulatedData, StratifiedMetrics,
                       conditional_metrics, run_experiment, simulate,
                       stratify_by_propensity)
from .inference import (CoefficientTable, InferenceConfig, Schema, coplot_export,
                        export_dataset, load_dataset, subsample_inference)
