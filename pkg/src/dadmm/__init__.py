"""Distributed ADMM over colored agent graphs, with trainable unrolled schedules.

The package splits into: graph generation and coloring (:mod:`dadmm.graphs`),
the color-scheduled optimizer engine (:mod:`dadmm.engine`), the two shipped
problem families (:mod:`dadmm.lasso`, :mod:`dadmm.linreg`), exact gradients
through the unrolled iterations (:mod:`dadmm.unfolding`), schedule training
(:mod:`dadmm.training`), and the experiment pipelines with their CLI
(:mod:`dadmm.experiments`).
"""

from .engine import (
    AGENT_SPECIFIC,
    SHARED,
    AgentState,
    DivergenceError,
    HyperparameterSchedule,
    ProblemInstance,
    RunTrace,
    disagreement,
    run_dadmm,
)
from .graphs import (
    AgentGraph,
    ProperColoring,
    generate_erdos_renyi,
    graph_from_json,
    graph_to_json,
    greedy_color,
    validate_coloring,
)
from .lasso import LassoDataset, LassoProblem, generate_lasso_dataset
from .linreg import LinRegDataset, LinRegProblem, generate_linreg_dataset
from .training import (
    TrainResult,
    grid_search_baseline,
    init_baseline_hyperparameters,
    load_schedule,
    save_schedule,
    train,
    train_sequential,
)
from .unfolding import GradientReport, final_iterates, loss_gradient, mse_loss, unrolled_trajectories

__version__ = "0.1.0"
