"""Disclosure risk assessment for synthetic microdata."""

from importlib.metadata import PackageNotFoundError, version

from .attribute import AttributeRiskEstimator, AttributeScenario, build_guess_set
from .data import Dataset, Schema, categorical, continuous, load_dataset, load_schema
from .identification import IdentificationRiskEstimator, MatchConfig
from .synthesis import CartSynthesizer, MixtureSynthesizer, SyntheticRelease

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"

__all__ = [
    "AttributeRiskEstimator", "AttributeScenario", "build_guess_set", "Dataset", "Schema",
    "categorical", "continuous", "load_dataset", "load_schema", "IdentificationRiskEstimator",
    "MatchConfig", "CartSynthesizer", "MixtureSynthesizer", "SyntheticRelease", "__version__",
]
