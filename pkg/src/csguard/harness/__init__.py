from .config import ConfigError, ExperimentConfig, load_config, validate
from .experiment import calibrate_fpr, run_ablation, run_experiment, run_trial
from .report import ExperimentReport, load_report, save_report

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentReport",
    "calibrate_fpr",
    "load_config",
    "load_report",
    "run_ablation",
    "run_experiment",
    "run_trial",
    "save_report",
    "validate",
]
