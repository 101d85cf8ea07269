"""Targeted estimation of mean community outcomes under community-level stochastic interventions."""
from .data import Community, HierarchicalDataset, IndividualRecord, load_dataset, write_dataset
from .density import ConditionalDensityModel, DensityConfig, fit_density
from .features import SummarySpec
from .individual import IndividualGConfig, fit_individual_density
from .inference import EstimateReport, estimate_contrast, variance_and_ci
from .interventions import InterventionSpec
from .outcome import OutcomeConfig, fit_initial_outcome
from .pipeline import EstimatorConfig, estimate, estimate_all, fit_nuisances
from .simulate import DGPSpec, generate, oracle_psi, preset
from .tmle import TargetingConfig

__version__ = "0.1.0"

__all__ = [
    "Community", "HierarchicalDataset", "IndividualRecord", "load_dataset", "write_dataset",
    "ConditionalDensityModel", "DensityConfig", "fit_density", "SummarySpec",
    "IndividualGConfig", "fit_individual_density", "EstimateReport", "estimate_contrast", "variance_and_ci",
    "InterventionSpec", "OutcomeConfig", "fit_initial_outcome", "EstimatorConfig", "estimate", "estimate_all",
    "fit_nuisances", "DGPSpec", "generate", "oracle_psi", "preset", "TargetingConfig",
]
