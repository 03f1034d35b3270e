"""Config-driven experiment pipelines and their CLI."""

from .config import ExperimentConfig, load_config
from .runner import (
    cmd_compare_modes,
    cmd_eval,
    cmd_gen_data,
    cmd_train,
    cmd_transfer,
    reduction_factor,
)
