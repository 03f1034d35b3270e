"""Training the unrolled optimizer's hyperparameter schedule.

Mini-batch Adam on the exact unrolled-loss gradients, either end to end
at full depth or segment by segment against intermediate-depth losses
(earlier segments frozen at their trained values). Parameters are raw
unconstrained reals; no positivity projection is applied, and negative
learned step sizes are reported rather than clipped.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .engine import (
    AGENT_SPECIFIC,
    SHARED,
    DivergenceError,
    HyperparameterSchedule,
    ProblemInstance,
    run_dadmm,
)
from .graphs import AgentGraph, ProperColoring
from .lasso import LASSO_HP_NAMES
from .linreg import LINREG_HP_NAMES
from .unfolding import GradientDivergenceError, SampleSet, depth_losses, loss_gradient

__all__ = [
    "Adam",
    "TrainableParameters",
    "TrainResult",
    "GridSearchResult",
    "train",
    "train_sequential",
    "init_baseline_hyperparameters",
    "grid_search_baseline",
    "save_schedule",
    "load_schedule",
    "DEFAULT_BASELINE_TUPLES",
    "HP_NAMES_BY_PROBLEM",
]

logger = logging.getLogger(__name__)

HP_NAMES_BY_PROBLEM = {"lasso": LASSO_HP_NAMES, "linreg": LINREG_HP_NAMES}

# Fixed tuples with which the un-trained optimizer converges at desk scale;
# found with grid_search_baseline on held-out instances (see its docstring).
DEFAULT_BASELINE_TUPLES: dict[str, dict[str, float]] = {
    "lasso": {"rho": 1.0, "alpha": 0.05, "eta": 0.2, "tau": 0.005},
    "linreg": {"alpha": 0.1, "rho": 0.1, "delta": 0.1, "beta": 0.1, "eta": 0.03, "gamma": 0.03},
}


class Adam(object):
    """Adaptive-moment gradient descent with bias correction."""

    def __init__(self, shape: tuple[int, ...], learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return theta - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainableParameters:
    """A schedule under optimization, with its optimizer state and tags."""

    schedule: HyperparameterSchedule
    problem: str
    optimizer: Adam

    @property
    def num_parameters(self) -> int:
        return self.schedule.num_parameters


@dataclass
class TrainResult:
    """Outcome of a training run.

    ``history`` holds one ``(epoch, batch, loss)`` record per optimizer
    update; ``epoch_losses[e]`` is the full-training-set loss after epoch
    ``e`` (index 0 is the initial schedule). The returned schedule is the
    best checkpoint by full training loss.
    """

    schedule: HyperparameterSchedule
    problem: str
    history: list[tuple[int, int, float]] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    best_loss: float = math.inf
    best_epoch: int = 0
    diverged: bool = False

    @property
    def initial_loss(self) -> float:
        return self.epoch_losses[0]


def train(
    schedule: HyperparameterSchedule,
    dataset: SampleSet,
    graph: AgentGraph,
    coloring: ProperColoring,
    *,
    epochs: int,
    batch_size: int,
    learning_rate: float,
    seed: int,
    problem: str = "",
) -> TrainResult:
    """Mini-batch Adam on the full-depth loss, best checkpoint returned.

    Shuffling is deterministic per ``(seed, epoch)``. A divergent forward
    or gradient pass stops training and returns the last good checkpoint
    with ``diverged`` set.
    """
    if len(dataset) < batch_size:
        raise ValueError("dataset smaller than batch_size")
    return _fit(
        schedule, dataset, graph, coloring,
        depth=schedule.num_iterations, trainable=None,
        epochs=epochs, batch_size=batch_size, learning_rate=learning_rate,
        seed=seed, problem=problem,
    )


def train_sequential(
    schedule: HyperparameterSchedule,
    dataset: SampleSet,
    graph: AgentGraph,
    coloring: ProperColoring,
    *,
    segment_length: int,
    epochs_per_segment: int,
    batch_size: int,
    learning_rate: float,
    seed: int,
    problem: str = "",
) -> TrainResult:
    """Segment-wise training against intermediate-depth losses.

    Segment ``s`` covers iterations ``(s-1)*segment_length + 1`` through
    ``min(s*segment_length, T)`` and is optimized against the loss at the
    segment's final iteration, with every other iteration's parameters
    frozen (earlier segments keep their trained values, later ones their
    initialization). Forward passes always replay from iteration 1. With
    ``segment_length == T`` this is exactly :func:`train`.
    """
    T = schedule.num_iterations
    if not 1 <= segment_length <= T:
        raise ValueError("segment_length must lie in [1, T]")
    current = schedule
    result = TrainResult(schedule=current, problem=problem)
    num_segments = math.ceil(T / segment_length)
    for s in range(num_segments):
        start = s * segment_length
        end = min((s + 1) * segment_length, T)
        seg = _fit(
            current, dataset, graph, coloring,
            depth=end, trainable=range(start, end),
            epochs=epochs_per_segment, batch_size=batch_size,
            learning_rate=learning_rate, seed=seed, problem=problem,
        )
        current = seg.schedule
        result.history.extend((e + s * epochs_per_segment, b, l) for e, b, l in seg.history)
        result.epoch_losses.extend(seg.epoch_losses if s == 0 else seg.epoch_losses[1:])
        result.best_loss = seg.best_loss
        result.best_epoch = seg.best_epoch + s * epochs_per_segment
        if seg.diverged:
            result.diverged = True
            break
    result.schedule = current
    return result


def _fit(
    schedule: HyperparameterSchedule,
    dataset: SampleSet,
    graph: AgentGraph,
    coloring: ProperColoring,
    *,
    depth: int,
    trainable: Sequence[int] | None,
    epochs: int,
    batch_size: int,
    learning_rate: float,
    seed: int,
    problem: str,
) -> TrainResult:
    mask = np.zeros_like(schedule.values)
    if trainable is None:
        mask[:depth] = 1.0
    else:
        mask[list(trainable)] = 1.0

    params = TrainableParameters(
        schedule=schedule,
        problem=problem,
        optimizer=Adam(schedule.values.shape, learning_rate),
    )
    theta = schedule.values.copy()
    result = TrainResult(schedule=schedule, problem=problem)

    def full_loss(values: np.ndarray) -> float:
        sched = HyperparameterSchedule(schedule.mode, schedule.hp_names, values)
        return float(depth_losses(dataset, graph, coloring, sched, depth)[-1])

    best = theta.copy()
    result.best_loss = full_loss(theta)
    result.epoch_losses.append(result.best_loss)
    result.best_epoch = 0

    num_batches = math.ceil(len(dataset) / batch_size)
    try:
        for epoch in range(1, epochs + 1):
            order = np.random.default_rng([seed, epoch]).permutation(len(dataset))
            for b in range(num_batches):
                batch = dataset.subset(order[b * batch_size:(b + 1) * batch_size])
                sched = HyperparameterSchedule(schedule.mode, schedule.hp_names, theta)
                report = loss_gradient(sched, batch, graph, coloring, depth=depth)
                theta = params.optimizer.step(theta, report.gradient * mask)
                result.history.append((epoch, b + 1, report.loss))
            epoch_loss = full_loss(theta)
            result.epoch_losses.append(epoch_loss)
            if math.isfinite(epoch_loss) and epoch_loss < result.best_loss:
                result.best_loss = epoch_loss
                result.best_epoch = epoch
                best = theta.copy()
    except (DivergenceError, GradientDivergenceError) as err:
        logger.warning("training diverged (%s); returning last good checkpoint", err)
        result.diverged = True

    result.schedule = HyperparameterSchedule(schedule.mode, schedule.hp_names, best)
    _warn_on_negative_steps(result.schedule, problem)
    return result


def _warn_on_negative_steps(schedule: HyperparameterSchedule, problem: str) -> None:
    step_names = {"alpha", "eta", "delta", "gamma"}
    for h, name in enumerate(schedule.hp_names):
        if name in step_names and np.any(schedule.values[..., h] < 0):
            logger.info("trained %s schedule has negative %s entries (legal layer weights)",
                        problem or "hyperparameter", name)
            break


def init_baseline_hyperparameters(
    problem: str,
    mode: str,
    num_iterations: int,
    num_agents: int | None = None,
    tuple_values: Mapping[str, float] | None = None,
) -> HyperparameterSchedule:
    """Constant schedule from a convergent fixed tuple.

    ``tuple_values`` defaults to the shipped grid-search winners in
    :data:`DEFAULT_BASELINE_TUPLES`.
    """
    names = HP_NAMES_BY_PROBLEM[problem]
    values = dict(DEFAULT_BASELINE_TUPLES[problem]) if tuple_values is None else dict(tuple_values)
    return HyperparameterSchedule.constant(values, names, num_iterations, num_agents, mode)


@dataclass(frozen=True)
class GridSearchResult:
    """Winner of a baseline grid search plus the full score table."""

    best: dict[str, float]
    best_score: float
    table: tuple[tuple[dict[str, float], float], ...]


def grid_search_baseline(
    problems: Sequence[ProblemInstance],
    graph: AgentGraph,
    coloring: ProperColoring,
    grids: Mapping[str, Sequence[float]],
    *,
    max_iterations: int,
    problem_tag: str,
    tolerance: float = 1e-3,
) -> GridSearchResult:
    """Pick the fixed tuple minimizing the final objective on held-out data.

    Scores every point of the (logarithmic) grid by the mean, over the
    held-out instances, of the global objective evaluated at the network
    average of the final iterates. Divergent runs and runs whose final
    neighbor disagreement stays at or above ``tolerance`` (the optimizer
    never actually reached consensus) score infinity. Intended for small
    validation sets: cost is ``prod(len(grid))`` full runs per instance.
    """
    names = HP_NAMES_BY_PROBLEM[problem_tag]
    if set(grids) != set(names):
        raise ValueError(f"grids must cover exactly {names}")
    table = []
    best: dict[str, float] | None = None
    best_score = math.inf
    for point in itertools.product(*(grids[n] for n in names)):
        tup = dict(zip(names, point))
        schedule = HyperparameterSchedule.constant(tup, names, max_iterations)
        score = 0.0
        for prob in problems:
            try:
                trace = run_dadmm(prob, graph, coloring, schedule, max_iterations=max_iterations)
            except DivergenceError:
                score = math.inf
                break
            if trace.disagreement[-1] >= tolerance:
                score = math.inf
                break
            consensus = trace.final_primal.mean(axis=0)
            score += prob.global_objective(consensus) / len(problems)
        table.append((tup, score))
        if math.isfinite(score) and score < best_score:
            best_score = score
            best = tup
    if best is None:
        raise RuntimeError("every grid point diverged or missed the consensus tolerance")
    return GridSearchResult(best, best_score, tuple(table))


SCHEDULE_SCHEMA_VERSION = 1


def save_schedule(path: str | Path, schedule: HyperparameterSchedule, problem: str) -> None:
    """Write a schedule as JSON with a flat, iteration-major parameter array."""
    doc = {
        "schema_version": SCHEDULE_SCHEMA_VERSION,
        "problem": problem,
        "mode": schedule.mode,
        "num_iterations": schedule.num_iterations,
        "hp_names": list(schedule.hp_names),
        "values": schedule.values.ravel().tolist(),
    }
    if schedule.mode == AGENT_SPECIFIC:
        doc["num_agents"] = schedule.num_agents
    Path(path).write_text(json.dumps(doc))


def load_schedule(path: str | Path) -> tuple[HyperparameterSchedule, str]:
    """Read a schedule written by :func:`save_schedule`; returns it with its problem tag."""
    doc = json.loads(Path(path).read_text())
    names = tuple(doc["hp_names"])
    T = int(doc["num_iterations"])
    flat = np.asarray(doc["values"], dtype=float)
    if doc["mode"] == AGENT_SPECIFIC:
        P = int(doc["num_agents"])
        values = flat.reshape(T, P, len(names))
    else:
        values = flat.reshape(T, len(names))
    return HyperparameterSchedule(doc["mode"], names, values), str(doc["problem"])
