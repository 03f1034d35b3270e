"""Unrolled D-ADMM: fixed-depth forward passes and exact loss gradients.

A depth-``T`` run is treated as a ``T``-layer pipeline whose weights are
the per-iteration hyperparameters. The forward pass replays the engine's
color schedule exactly (bit-identical iterates); the backward pass
accumulates adjoints through the recurrence in reverse, yielding the exact
derivative of the squared-error loss with respect to every schedule entry.
The kinked ``sign`` term of l1 problems is treated as piecewise constant
in the iterate (derivative zero away from the kinks), while its
coefficient keeps the exact ``sign(y)`` sensitivity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .engine import (
    AGENT_SPECIFIC,
    SHARED,
    DivergenceError,
    HyperparameterSchedule,
    ProblemInstance,
)
from .graphs import AgentGraph, ProperColoring

__all__ = [
    "SampleSet",
    "GradientReport",
    "GradientDivergenceError",
    "mse_loss",
    "unrolled_trajectories",
    "iteration_metrics",
    "final_iterates",
    "loss_gradient",
    "depth_losses",
]


class SampleSet(Protocol):
    """Indexed collection of problem instances with target outcomes."""

    def __len__(self) -> int: ...

    def problem(self, i: int) -> ProblemInstance: ...

    def target(self, i: int) -> np.ndarray: ...


class GradientDivergenceError(RuntimeError):
    """Non-finite adjoint; carries the iteration and offending parameter."""

    def __init__(self, iteration: int, parameter: str):
        self.iteration = iteration
        self.parameter = parameter
        super().__init__(f"non-finite gradient at iteration {iteration}, parameter {parameter}")


@dataclass(frozen=True)
class GradientReport:
    """Batch loss with its exact per-parameter derivatives."""

    gradient: np.ndarray  # same shape as the schedule's values
    loss: float

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.gradient))

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.gradient))) if self.gradient.size else 0.0


def mse_loss(final_iterates: np.ndarray | Sequence[np.ndarray], targets: np.ndarray) -> float:
    """Mean over samples and agents of the squared distance to the target.

    ``final_iterates`` is ``(L, P, ny)``; ``targets`` is ``(L, ny)``.
    """
    finals = np.asarray(final_iterates, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if finals.ndim != 3 or targets.ndim != 2 or finals.shape[0] != targets.shape[0] \
            or finals.shape[2] != targets.shape[1]:
        raise ValueError("expected finals (L, P, ny) and targets (L, ny)")
    diff = finals - targets[:, None, :]
    num_samples, num_agents = finals.shape[0], finals.shape[1]
    return float(np.sum(diff * diff) / (num_samples * num_agents))


class _Layout:
    """Graph quantities precomputed for the unrolled passes (0-based)."""

    def __init__(self, graph: AgentGraph, coloring: ProperColoring):
        self.num_agents = graph.num_agents
        self.order = [p - 1 for members in coloring.classes for p in members]
        self.neighbors = [
            np.array([j - 1 for j in graph.neighbors(p)], dtype=int)
            for p in range(1, graph.num_agents + 1)
        ]
        self.degree = [len(nb) for nb in self.neighbors]
        self.edge_index = np.array([(i - 1, j - 1) for i, j in graph.edges], dtype=int).reshape(-1, 2)
        color = coloring.color_of
        # per agent: mask over its (sorted) neighbors that were updated
        # earlier in the same iteration, i.e. hold this-iteration values
        self.earlier = [
            np.array([color[j - 1] < color[p - 1] for j in graph.neighbors(p)], dtype=bool)
            for p in range(1, graph.num_agents + 1)
        ]


class _Expanded:
    """Schedule rows pre-expanded to per-component vectors, shared per call.

    Produces exactly the floats of the ``ProblemInstance`` expansion
    methods, so iterates stay bit-identical to the engine's.
    """

    def __init__(self, schedule: HyperparameterSchedule, problem: ProblemInstance, depth: int):
        ny = problem.primal_dimension
        shape = schedule.values.shape[:-1] + (ny,)
        step = np.empty(shape)
        pen = np.empty(shape)
        ds = np.empty(shape)
        for blk in problem.blocks:
            step[..., blk.sl] = schedule.values[..., blk.step, None]
            pen[..., blk.sl] = schedule.values[..., blk.penalty, None]
            ds[..., blk.sl] = schedule.values[..., blk.dual_step, None]
        self._shared = schedule.mode == SHARED
        self._hp = schedule.values
        self._step, self._pen, self._ds = step, pen, ds

    def hp(self, t: int, p0: int) -> np.ndarray:
        return self._hp[t - 1] if self._shared else self._hp[t - 1, p0]

    def primal_step(self, t: int, p0: int) -> np.ndarray:
        return self._step[t - 1] if self._shared else self._step[t - 1, p0]

    def penalty(self, t: int, p0: int) -> np.ndarray:
        return self._pen[t - 1] if self._shared else self._pen[t - 1, p0]

    def dual_step(self, t: int, p0: int) -> np.ndarray:
        return self._ds[t - 1] if self._shared else self._ds[t - 1, p0]


def _forward_step(problem, lay, exp, t, y, d):
    """One in-place engine iteration on the evolving ``(P, ny)`` buffers."""
    for p0 in lay.order:
        g = problem.data_gradient(p0 + 1, y[p0], exp.hp(t, p0))
        deg = lay.degree[p0]
        if deg:
            copies_sum = y[lay.neighbors[p0]].sum(axis=0)
            g = g + deg * d[p0] + exp.penalty(t, p0) * (deg * y[p0] - copies_sum)
        y[p0] = y[p0] - exp.primal_step(t, p0) * g
    for p0 in range(lay.num_agents):
        deg = lay.degree[p0]
        if deg:
            copies_sum = y[lay.neighbors[p0]].sum(axis=0)
            d[p0] = d[p0] + exp.dual_step(t, p0) * (deg * y[p0] - copies_sum)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(d))):
        bad = next(p0 for p0 in range(lay.num_agents)
                   if not (np.all(np.isfinite(y[p0])) and np.all(np.isfinite(d[p0]))))
        raise DivergenceError(t, bad + 1)


def unrolled_trajectories(
    problem: ProblemInstance,
    graph: AgentGraph,
    coloring: ProperColoring,
    schedule: HyperparameterSchedule,
    depth: int,
    _layout: _Layout | None = None,
    _expanded: _Expanded | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Primal and dual trajectories of a depth-``depth`` run from zeros.

    Returns arrays of shape ``(depth + 1, P, ny)`` whose row ``t`` is the
    state after iteration ``t``; iterates match :func:`dadmm.engine.run_dadmm`
    bit for bit.
    """
    if schedule.num_iterations < depth:
        raise ValueError("schedule is shorter than the requested depth")
    lay = _layout if _layout is not None else _Layout(graph, coloring)
    exp = _expanded if _expanded is not None else _Expanded(schedule, problem, depth)
    P, ny = lay.num_agents, problem.primal_dimension
    Y = np.zeros((depth + 1, P, ny))
    D = np.zeros((depth + 1, P, ny))
    y = np.zeros((P, ny))
    d = np.zeros((P, ny))
    for t in range(1, depth + 1):
        _forward_step(problem, lay, exp, t, y, d)
        Y[t] = y
        D[t] = d
    return Y, D


def iteration_metrics(
    problem: ProblemInstance,
    graph: AgentGraph,
    coloring: ProperColoring,
    schedule: HyperparameterSchedule,
    depth: int,
    target: np.ndarray,
    _layout: _Layout | None = None,
    _expanded: _Expanded | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-iteration mean squared error and max edge disagreement, streamed.

    Same iterates as :func:`unrolled_trajectories` without storing them;
    suitable for long fixed-schedule runs.
    """
    if schedule.num_iterations < depth:
        raise ValueError("schedule is shorter than the requested depth")
    lay = _layout if _layout is not None else _Layout(graph, coloring)
    exp = _expanded if _expanded is not None else _Expanded(schedule, problem, depth)
    P, ny = lay.num_agents, problem.primal_dimension
    y = np.zeros((P, ny))
    d = np.zeros((P, ny))
    losses = np.zeros(depth)
    gaps = np.zeros(depth)
    for t in range(1, depth + 1):
        _forward_step(problem, lay, exp, t, y, d)
        diff = y - target[None, :]
        losses[t - 1] = np.sum(diff * diff) / P
        if lay.edge_index.size:
            gaps[t - 1] = np.max(np.abs(y[lay.edge_index[:, 0]] - y[lay.edge_index[:, 1]]))
    return losses, gaps


def final_iterates(
    problems: Sequence[ProblemInstance] | SampleSet,
    graph: AgentGraph,
    coloring: ProperColoring,
    schedule: HyperparameterSchedule,
    depth: int,
) -> np.ndarray:
    """Stacked final primal iterates ``(L, P, ny)`` over a sample collection."""
    lay = _Layout(graph, coloring)
    probs = _as_problem_list(problems)
    finals = [unrolled_trajectories(pr, graph, coloring, schedule, depth, _layout=lay)[0][depth]
              for pr in probs]
    return np.stack(finals)


def depth_losses(
    dataset: SampleSet,
    graph: AgentGraph,
    coloring: ProperColoring,
    schedule: HyperparameterSchedule,
    depth: int,
) -> np.ndarray:
    """Mean squared-error loss after each iteration ``1..depth`` over a dataset."""
    if len(dataset) == 0:
        raise ValueError("dataset must be non-empty")
    lay = _Layout(graph, coloring)
    exp = _Expanded(schedule, dataset.problem(0), depth)
    totals = np.zeros(depth)
    for i in range(len(dataset)):
        losses, _ = iteration_metrics(
            dataset.problem(i), graph, coloring, schedule, depth, dataset.target(i),
            _layout=lay, _expanded=exp,
        )
        totals += losses
    return totals / len(dataset)


def loss_gradient(
    schedule: HyperparameterSchedule,
    dataset: SampleSet,
    graph: AgentGraph,
    coloring: ProperColoring,
    depth: int | None = None,
) -> GradientReport:
    """Exact reverse-mode gradient of the batch loss at ``depth``.

    The loss is the squared-error mean over the batch and agents of the
    depth-``depth`` iterates against the targets. Schedule entries of
    iterations beyond ``depth`` receive exactly zero gradient.
    """
    if len(dataset) == 0:
        raise ValueError("batch must be non-empty")
    if depth is None:
        depth = schedule.num_iterations
    lay = _Layout(graph, coloring)
    exp = _Expanded(schedule, dataset.problem(0), depth)
    grad_total = np.zeros((schedule.num_iterations, lay.num_agents, len(schedule.hp_names)))
    loss_total = 0.0
    for i in range(len(dataset)):
        sample_loss, sample_grad = _sample_gradient(
            dataset.problem(i), dataset.target(i), graph, coloring, schedule, depth, lay, exp
        )
        loss_total += sample_loss
        grad_total += sample_grad
    loss = loss_total / len(dataset)
    grad_total /= len(dataset)
    if schedule.mode == SHARED:
        gradient = grad_total.sum(axis=1)
    else:
        gradient = grad_total
    if not np.all(np.isfinite(gradient)):
        t, *rest = np.argwhere(~np.isfinite(gradient))[0]
        name = schedule.hp_names[int(rest[-1])]
        raise GradientDivergenceError(int(t) + 1, name)
    return GradientReport(gradient=gradient, loss=loss)


def _sample_gradient(
    problem: ProblemInstance,
    target: np.ndarray,
    graph: AgentGraph,
    coloring: ProperColoring,
    schedule: HyperparameterSchedule,
    depth: int,
    lay: _Layout,
    exp: _Expanded,
) -> tuple[float, np.ndarray]:
    """Per-sample loss and agent-resolved gradient of shape ``(T, P, H)``."""
    P, ny = lay.num_agents, problem.primal_dimension
    Y, D = unrolled_trajectories(problem, graph, coloring, schedule, depth,
                                 _layout=lay, _expanded=exp)

    diff = Y[depth] - target[None, :]
    loss = float(np.sum(diff * diff) / P)
    grad = np.zeros((schedule.num_iterations, P, len(schedule.hp_names)))

    y_hat = (2.0 / P) * diff  # adjoint of Y[depth]
    d_hat = np.zeros((P, ny))
    for t in range(depth, 0, -1):
        y_old, y_new = Y[t - 1], Y[t]
        d_old = D[t - 1]

        # dual ascent: D[t] = D[t-1] + ds * (deg * Y[t][p] - sum_j Y[t][j])
        for p0 in range(P):
            deg = lay.degree[p0]
            if not deg:
                continue
            nbrs = lay.neighbors[p0]
            residual = deg * y_new[p0] - y_new[nbrs].sum(axis=0)
            dh = d_hat[p0]
            for blk in problem.blocks:
                grad[t - 1, p0, blk.dual_step] += dh[blk.sl] @ residual[blk.sl]
            ds = exp.dual_step(t, p0)
            y_hat[p0] += deg * ds * dh
            for j0 in nbrs:
                y_hat[j0] -= ds * dh
            # d_hat[p0] passes through unchanged to D[t-1]

        # primal sweep, reverse color order
        y_hat_prev = np.zeros((P, ny))
        for p0 in reversed(lay.order):
            p = p0 + 1
            hp = exp.hp(t, p0)
            v = y_hat[p0]
            deg = lay.degree[p0]
            av = exp.primal_step(t, p0) * v

            if deg:
                nbrs = lay.neighbors[p0]
                earlier = lay.earlier[p0]
                mixed = np.where(earlier[:, None], y_new[nbrs], y_old[nbrs])
                copies_sum = mixed.sum(axis=0)
                pen = exp.penalty(t, p0)
                pull = deg * y_old[p0] - copies_sum
                g = problem.data_gradient(p, y_old[p0], hp) + deg * d_old[p0] + pen * pull
            else:
                g = problem.data_gradient(p, y_old[p0], hp)

            for blk in problem.blocks:
                grad[t - 1, p0, blk.step] -= v[blk.sl] @ g[blk.sl]
                if deg:
                    grad[t - 1, p0, blk.penalty] -= av[blk.sl] @ pull[blk.sl]
            for h, val in problem.data_gradient_hp_adjoint(p, y_old[p0], av).items():
                grad[t - 1, p0, h] -= val

            back = v - problem.data_hessian_vp(p, y_old[p0], av)
            if deg:
                back = back - deg * pen * av
                d_hat[p0] -= deg * av
                spill = pen * av
                for j0, early in zip(nbrs, earlier):
                    if early:
                        y_hat[j0] += spill
                    else:
                        y_hat_prev[j0] += spill
            y_hat_prev[p0] += back
        y_hat = y_hat_prev
    return loss, grad


def _as_problem_list(problems) -> list[ProblemInstance]:
    if hasattr(problems, "problem"):
        return [problems.problem(i) for i in range(len(problems))]
    return list(problems)
