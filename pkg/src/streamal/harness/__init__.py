from .config import ConfigError, ExperimentConfig, load_config
from .datasets import DatasetFormatError, load_cifar10, load_idx, load_named, synthetic_dataset
from .experiment import ExperimentRecord, ExperimentResult, run_experiment
from .oracle import Oracle, UnknownSampleError, oracle_label
from .resources import MemoryModel, account_memory, estimate_mcu_time, measure_decision_time
from .results import read_csv, write_results

__all__ = [
    "ConfigError", "ExperimentConfig", "load_config",
    "DatasetFormatError", "load_cifar10", "load_idx", "load_named", "synthetic_dataset",
    "ExperimentRecord", "ExperimentResult", "run_experiment",
    "Oracle", "UnknownSampleError", "oracle_label",
    "MemoryModel", "account_memory", "estimate_mcu_time", "measure_decision_time",
    "read_csv", "write_results",
]
