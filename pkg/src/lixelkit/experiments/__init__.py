"""Synthetic data, training loops, and the comparison studies."""

from .template import ToyTemplate, forward_kinematics, make_template, params_to_pose
from .dataset import DataConfig, Sample, generate_dataset, load_dataset, save_dataset
from .config import ExperimentConfig, TrainConfig, dump_config, load_config, parse_config
from .training import (
    TrainOutcome,
    TrainingDiverged,
    load_model_checkpoint,
    measure_noise_floor,
    run_training,
)
from .report import ResultRow, read_metrics_csv, write_metrics_csv, write_summary_json
from .ablations import (
    ABLATIONS,
    run_cascade_ablation,
    run_layout_ablation,
    run_marginalization_ablation,
    run_representation_ablation,
)

__all__ = [
    "ABLATIONS",
    "DataConfig",
    "ExperimentConfig",
    "ResultRow",
    "Sample",
    "ToyTemplate",
    "TrainConfig",
    "TrainOutcome",
    "TrainingDiverged",
    "dump_config",
    "forward_kinematics",
    "generate_dataset",
    "load_config",
    "load_model_checkpoint",
    "load_dataset",
    "make_template",
    "measure_noise_floor",
    "params_to_pose",
    "parse_config",
    "read_metrics_csv",
    "run_cascade_ablation",
    "run_layout_ablation",
    "run_marginalization_ablation",
    "run_representation_ablation",
    "run_training",
    "save_dataset",
    "write_metrics_csv",
    "write_summary_json",
]
