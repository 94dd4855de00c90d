"""Transfer learning for data-scarce regression targets.

Per-source conditional generative models (distributional regression
networks trained with the energy score) produce synthetic responses at
target covariates; conditional quantile matching calibrates them to the
target law; kernel mean matching reweights source covariates toward the
target design. The augmented sample then feeds weighted downstream
learners.
"""

from .data import DomainDataset, RngStream, Scaler, load_csv, save_csv, standardize
from .density_ratio import (DensityRatioWeights, KmmConfig, estimate_weights,
                            median_heuristic_bandwidth, rbf_gram)
from .engression import (EngressionConfig, EngressionModel, energy_loss,
                         load_model, sample, save_model, train_engression)
from .errors import (EmptyInputError, NumericalError, ParseError, SchemaError,
                     TrainingDivergenceError)
from .learners import (CvReport, KrrModel, MlpRegressor, WeightedTrainingSet,
                       cross_validate, default_krr_grid, default_mlp_grid,
                       evaluate_mse, fit_learner, fit_weighted_krr,
                       fit_weighted_mlp)
from .pipeline import (AugmentedDataset, PipelineConfig, build_synthetic_design,
                       predict_source_features, run_augmentation)
from .quantile_match import (QuantileMatchFit, SyntheticDesign,
                             empirical_objective, estimate_population_objective,
                             fit, load_fit, save_fit)
from .simbench import BenchResult, SimScenario, generate_scenario, run_benchmark

__version__ = "0.1.0"

__all__ = [
    "AugmentedDataset",
    "BenchResult",
    "CvReport",
    "DensityRatioWeights",
    "DomainDataset",
    "EmptyInputError",
    "EngressionConfig",
    "EngressionModel",
    "KmmConfig",
    "KrrModel",
    "MlpRegressor",
    "NumericalError",
    "ParseError",
    "PipelineConfig",
    "QuantileMatchFit",
    "RngStream",
    "Scaler",
    "SchemaError",
    "SimScenario",
    "SyntheticDesign",
    "TrainingDivergenceError",
    "WeightedTrainingSet",
    "build_synthetic_design",
    "cross_validate",
    "default_krr_grid",
    "default_mlp_grid",
    "empirical_objective",
    "energy_loss",
    "estimate_population_objective",
    "estimate_weights",
    "evaluate_mse",
    "fit",
    "fit_learner",
    "fit_weighted_krr",
    "fit_weighted_mlp",
    "generate_scenario",
    "load_csv",
    "load_fit",
    "load_model",
    "median_heuristic_bandwidth",
    "predict_source_features",
    "rbf_gram",
    "run_augmentation",
    "run_benchmark",
    "sample",
    "save_csv",
    "save_fit",
    "save_model",
    "standardize",
    "train_engression",
]
