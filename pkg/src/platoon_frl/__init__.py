"""Federated DDPG for cooperative adaptive cruise control platoons."""
from platoon_frl.config import ExperimentConfig, preset
from platoon_frl.kernels import BACKEND as KERNEL_BACKEND
from platoon_frl.orchestrator import aggregate_seeds, evaluate, run_training

__version__ = "0.1.0"

__all__ = ["ExperimentConfig", "KERNEL_BACKEND", "aggregate_seeds", "evaluate", "preset", "run_training", "__version__"]
