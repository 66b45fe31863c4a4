"""Federated autoencoder representations for outlier detection."""

from .autoencoder import Autoencoder, AutoencoderSpec, ColumnLayout
from .detection import MLPDetector, RandomForestDetector
from .evaluation import EvaluationReport, PowerPCA
from .exceptions import ConfigError, ContractViolation, DataFormatError, FedODError
from .federation import FederationConfig, run_federation

__version__ = "0.1.0"

__all__ = [
    "Autoencoder",
    "AutoencoderSpec",
    "ColumnLayout",
    "ConfigError",
    "ContractViolation",
    "DataFormatError",
    "EvaluationReport",
    "FedODError",
    "FederationConfig",
    "MLPDetector",
    "PowerPCA",
    "RandomForestDetector",
    "run_federation",
]
