"""Experiment orchestration: config, checkpoints, monitors, run dispatch and CLI."""

from .checkpoint import Checkpoint, checkpoint_load, checkpoint_save
from .config import ExperimentConfig, load_config
from .monitors import MomentMonitor, moment_monitor, super_lyapunov_V
from .run import RunRecord, run

__all__ = ["Checkpoint", "checkpoint_load", "checkpoint_save", "ExperimentConfig", "load_config",
           "MomentMonitor", "moment_monitor", "super_lyapunov_V", "RunRecord", "run"]
