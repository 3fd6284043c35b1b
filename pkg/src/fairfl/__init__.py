"""Fair federated learning simulator with a fairness-targeted poisoning attack."""

__version__ = "0.1.0"

from .config import ExperimentConfig, load_config, parse_config
from .data import Dataset, SynthConfig, generate_synthetic, load_csv, write_csv
from .errors import ConfigError, FairFLError
from .metrics import FairnessReport, evaluate, global_fairness
from .model import Family, ModelSpec, SgdConfig
from .simulator import RoundRecord, prepare_data, run_attack_protocol, run_experiment

__all__ = [
    "__version__",
    "ConfigError",
    "Dataset",
    "ExperimentConfig",
    "FairFLError",
    "FairnessReport",
    "Family",
    "ModelSpec",
    "RoundRecord",
    "SgdConfig",
    "SynthConfig",
    "evaluate",
    "generate_synthetic",
    "global_fairness",
    "load_config",
    "load_csv",
    "parse_config",
    "prepare_data",
    "run_attack_protocol",
    "run_experiment",
    "write_csv",
]
