"""Color-scheduled distributed ADMM engine.

One iteration sweeps the color classes in order: every agent of the
current class takes a primal gradient step on its augmented Lagrangian
using the neighbor values it has received so far, then transmits its new
iterate; receivers refresh their copies once the class completes
(Gauss-Seidel across colors, Jacobi within a color). After all classes,
every agent ascends its dual variable on the consensus residual.

Problems plug in through :class:`ProblemInstance`, which splits the primal
gradient into a data term and generic consensus terms; the per-iteration
hyperparameters (step sizes, penalty, and any objective coefficients) come
from a :class:`HyperparameterSchedule` that may vary per iteration and per
agent.
"""

from __future__ import annotations

import csv
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .graphs import AgentGraph, ProperColoring

__all__ = [
    "AGENT_SPECIFIC",
    "SHARED",
    "Block",
    "ProblemInstance",
    "HyperparameterSchedule",
    "AgentState",
    "RunTrace",
    "DivergenceError",
    "run_dadmm",
    "disagreement",
]

AGENT_SPECIFIC = "agent-specific"
SHARED = "shared"


class Block(NamedTuple):
    """Contiguous primal components governed by one (step, penalty, dual-step) triple.

    Fields index into a problem's hyperparameter tuple.
    """

    sl: slice
    step: int
    penalty: int
    dual_step: int


class DivergenceError(RuntimeError):
    """Non-finite iterate encountered; carries the iteration and agent."""

    def __init__(self, iteration: int, agent: int, what: str = "iterate"):
        self.iteration = iteration
        self.agent = agent
        super().__init__(f"non-finite {what} at iteration {iteration}, agent {agent}")


class ProblemInstance(ABC):
    """One multi-agent problem instance: local data plus its update rules.

    Subclasses fix the primal layout and provide the data-dependent parts;
    the consensus terms (dual coupling and quadratic penalty) are assembled
    here so the engine and the unrolled differentiation share one template:

        gradient_p = data_gradient(p, y_p)
                     + deg_p * dual_p + penalty * (deg_p * y_p - sum_j y_{j,p})
        y_p   <- y_p - step * gradient_p
        dual_p <- dual_p + dual_step * (deg_p * y_p - sum_j y_{j,p})

    with ``step``, ``penalty`` and ``dual_step`` expanded per component from
    the hyperparameter tuple via :attr:`blocks`.
    """

    #: ordered hyperparameter names; a schedule row follows this order
    hp_names: tuple[str, ...]
    #: component blocks mapping primal slices to hyperparameter indices
    blocks: tuple[Block, ...]

    @property
    @abstractmethod
    def num_agents(self) -> int: ...

    @property
    @abstractmethod
    def primal_dimension(self) -> int: ...

    @abstractmethod
    def data_gradient(self, p: int, y: np.ndarray, hp: np.ndarray) -> np.ndarray:
        """Gradient of the local objective (data term only) at ``y`` for agent ``p``."""

    @abstractmethod
    def data_hessian_vp(self, p: int, y: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Hessian-vector product of the data term, taking kink terms as constant."""

    def data_gradient_hp_adjoint(self, p: int, y: np.ndarray, w: np.ndarray) -> dict[int, float]:
        """Per-hyperparameter inner products ``w . d(data_gradient)/d(hp_h)``.

        Empty unless the data gradient itself depends on a hyperparameter
        (e.g. a trainable regularization coefficient).
        """
        return {}

    @abstractmethod
    def local_objective(self, p: int, y: np.ndarray) -> float:
        """Local objective of agent ``p`` at ``y``."""

    def global_objective(self, y: np.ndarray) -> float:
        """Sum of all local objectives at a common point ``y``."""
        return float(sum(self.local_objective(p, y) for p in range(1, self.num_agents + 1)))

    def mse_to_target(self, y: np.ndarray, target: np.ndarray) -> float:
        """Squared distance to the desired optimization outcome."""
        d = np.asarray(y, dtype=float) - np.asarray(target, dtype=float)
        return float(d @ d)

    # -- per-component expansions of one hyperparameter row ------------------

    def _expand(self, hp: np.ndarray, which: str) -> np.ndarray:
        out = np.empty(self.primal_dimension)
        for blk in self.blocks:
            out[blk.sl] = hp[getattr(blk, which)]
        return out

    def primal_step_sizes(self, hp: np.ndarray) -> np.ndarray:
        return self._expand(hp, "step")

    def penalty_weights(self, hp: np.ndarray) -> np.ndarray:
        return self._expand(hp, "penalty")

    def dual_step_sizes(self, hp: np.ndarray) -> np.ndarray:
        return self._expand(hp, "dual_step")

    # -- spec operations used by the engine ----------------------------------

    def primal_gradient(
        self,
        p: int,
        y: np.ndarray,
        neighbor_copies: Mapping[int, np.ndarray],
        duals: np.ndarray,
        hp: np.ndarray,
    ) -> np.ndarray:
        """Full bracketed gradient of the augmented Lagrangian at ``y``."""
        g = self.data_gradient(p, y, hp)
        deg = len(neighbor_copies)
        if deg:
            copies_sum = _sum_copies(neighbor_copies)
            g = g + deg * duals + self.penalty_weights(hp) * (deg * y - copies_sum)
        return g

    def dual_updates(
        self,
        p: int,
        y_new: np.ndarray,
        neighbor_copies: Mapping[int, np.ndarray],
        duals: np.ndarray,
        hp: np.ndarray,
    ) -> np.ndarray:
        """Dual ascent on the consensus residual after the primal sweep."""
        deg = len(neighbor_copies)
        if not deg:
            return duals
        copies_sum = _sum_copies(neighbor_copies)
        return duals + self.dual_step_sizes(hp) * (deg * y_new - copies_sum)


def _sum_copies(neighbor_copies: Mapping[int, np.ndarray]) -> np.ndarray:
    # Fixed ascending-index reduction so results never depend on scheduling.
    return np.stack([neighbor_copies[j] for j in sorted(neighbor_copies)]).sum(axis=0)


@dataclass(frozen=True)
class HyperparameterSchedule:
    """Per-iteration (optionally per-agent) hyperparameter tuples.

    ``values`` has shape ``(T, H)`` in shared mode or ``(T, P, H)`` in
    agent-specific mode, where ``H = len(hp_names)``. Iterations are
    1-based to match agent indexing.
    """

    mode: str
    hp_names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if self.mode == SHARED:
            if v.ndim != 2:
                raise ValueError("shared schedule expects values of shape (T, H)")
        elif self.mode == AGENT_SPECIFIC:
            if v.ndim != 3:
                raise ValueError("agent-specific schedule expects values of shape (T, P, H)")
        else:
            raise ValueError(f"unknown mode {self.mode!r}")
        if v.shape[-1] != len(self.hp_names):
            raise ValueError("last axis must match hp_names")

    @property
    def num_iterations(self) -> int:
        return self.values.shape[0]

    @property
    def num_agents(self) -> int | None:
        return self.values.shape[1] if self.mode == AGENT_SPECIFIC else None

    @property
    def num_parameters(self) -> int:
        return self.values.size

    def lookup(self, k: int, p: int) -> np.ndarray:
        """Hyperparameter tuple for iteration ``k`` (1-based) and agent ``p``."""
        if not 1 <= k <= self.num_iterations:
            raise IndexError(f"iteration {k} outside schedule of length {self.num_iterations}")
        if self.mode == SHARED:
            return self.values[k - 1]
        return self.values[k - 1, p - 1]

    @classmethod
    def constant(
        cls,
        tuple_values: Mapping[str, float] | Sequence[float],
        hp_names: Sequence[str],
        num_iterations: int,
        num_agents: int | None = None,
        mode: str = SHARED,
    ) -> "HyperparameterSchedule":
        """Schedule repeating one fixed tuple for every iteration (and agent)."""
        names = tuple(hp_names)
        if isinstance(tuple_values, Mapping):
            row = np.array([float(tuple_values[n]) for n in names])
        else:
            row = np.asarray(tuple_values, dtype=float)
            if row.shape != (len(names),):
                raise ValueError("tuple length must match hp_names")
        if mode == SHARED:
            values = np.tile(row, (num_iterations, 1))
        else:
            if num_agents is None:
                raise ValueError("agent-specific mode needs num_agents")
            values = np.tile(row, (num_iterations, num_agents, 1))
        return cls(mode, names, values)


@dataclass
class AgentState:
    """Mutable per-agent state: primal iterate, stacked duals, neighbor copies."""

    primal: np.ndarray
    duals: np.ndarray
    neighbor_copies: dict[int, np.ndarray]

    @classmethod
    def zeros(cls, dimension: int, neighbors: Sequence[int]) -> "AgentState":
        return cls(
            primal=np.zeros(dimension),
            duals=np.zeros(dimension),
            neighbor_copies={j: np.zeros(dimension) for j in neighbors},
        )


@dataclass
class RunTrace:
    """Per-iteration record of a D-ADMM run.

    Arrays are aligned: entry ``k`` describes the state after iteration
    ``iterations[k]``. ``messages`` counts directed sends, ``2*|E|`` per
    full iteration. ``iterates`` is populated only when requested.
    """

    iterations: list[int] = field(default_factory=list)
    objective: list[float] = field(default_factory=list)
    mse: list[float] = field(default_factory=list)
    disagreement: list[float] = field(default_factory=list)
    messages: list[int] = field(default_factory=list)
    iterates: list[np.ndarray] | None = None
    final_primal: np.ndarray | None = None
    final_duals: np.ndarray | None = None
    stop_reason: str = ""

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "objective", "mse", "disagreement", "messages"])
            for row in zip(self.iterations, self.objective, self.mse, self.disagreement, self.messages):
                writer.writerow(row)


def disagreement(states: Sequence[AgentState] | np.ndarray, graph: AgentGraph) -> float:
    """Max over edges of the infinity-norm difference between endpoint primals."""
    if isinstance(states, np.ndarray):
        primals = states
    else:
        primals = np.stack([s.primal for s in states])
    return _max_edge_disagreement(primals, graph.edges)


def _max_edge_disagreement(primals: np.ndarray, edges: Sequence[tuple[int, int]]) -> float:
    worst = 0.0
    for i, j in edges:
        d = float(np.max(np.abs(primals[i - 1] - primals[j - 1])))
        if d > worst:
            worst = d
    return worst


def run_dadmm(
    problem: ProblemInstance,
    graph: AgentGraph,
    coloring: ProperColoring,
    schedule: HyperparameterSchedule,
    *,
    max_iterations: int,
    tolerance: float | None = None,
    ground_truth: np.ndarray | None = None,
    record_iterates: bool = False,
) -> RunTrace:
    """Run color-scheduled D-ADMM from the all-zeros state.

    Stops after ``max_iterations`` iterations or as soon as the max neighbor
    disagreement drops below ``tolerance``, whichever comes first. ``mse``
    entries are the mean over agents of the squared distance to
    ``ground_truth`` (NaN when no ground truth is supplied).

    Raises:
        DivergenceError: on the first non-finite iterate, naming the
            iteration and agent.
    """
    if graph.num_agents != problem.num_agents:
        raise ValueError("graph and problem disagree on the number of agents")
    if schedule.num_iterations < max_iterations:
        raise ValueError("schedule is shorter than max_iterations")
    report = _validate_for_run(graph, coloring)
    if not report:
        raise ValueError(f"coloring invalid for graph: {report}")

    states = [AgentState.zeros(problem.primal_dimension, graph.neighbors(p)) for p in range(1, graph.num_agents + 1)]
    trace = RunTrace(iterates=[] if record_iterates else None)
    trace.stop_reason = "max_iterations"

    for k in range(1, max_iterations + 1):
        # primal sweep, one color class at a time
        for members in coloring.classes:
            updated: dict[int, np.ndarray] = {}
            for p in members:
                st = states[p - 1]
                hp = schedule.lookup(k, p)
                g = problem.primal_gradient(p, st.primal, st.neighbor_copies, st.duals, hp)
                updated[p] = st.primal - problem.primal_step_sizes(hp) * g
            # class done: deliver the new iterates to all neighbors
            for p, y_new in updated.items():
                states[p - 1].primal = y_new
                for j in graph.neighbors(p):
                    states[j - 1].neighbor_copies[p] = y_new
        # dual sweep
        for p in range(1, graph.num_agents + 1):
            st = states[p - 1]
            hp = schedule.lookup(k, p)
            st.duals = problem.dual_updates(p, st.primal, st.neighbor_copies, st.duals, hp)

        for p, st in enumerate(states, start=1):
            if not (np.all(np.isfinite(st.primal)) and np.all(np.isfinite(st.duals))):
                raise DivergenceError(k, p)

        primals = np.stack([st.primal for st in states])
        trace.iterations.append(k)
        trace.objective.append(
            float(np.mean([problem.local_objective(p, states[p - 1].primal) for p in range(1, graph.num_agents + 1)]))
        )
        if ground_truth is None:
            trace.mse.append(float("nan"))
        else:
            trace.mse.append(
                float(np.mean([problem.mse_to_target(st.primal, ground_truth) for st in states]))
            )
        gap = _max_edge_disagreement(primals, graph.edges)
        trace.disagreement.append(gap)
        trace.messages.append(2 * graph.num_edges * k)
        if trace.iterates is not None:
            trace.iterates.append(primals)

        if tolerance is not None and gap < tolerance:
            trace.stop_reason = "tolerance"
            break

    trace.final_primal = np.stack([st.primal for st in states])
    trace.final_duals = np.stack([st.duals for st in states])
    return trace


def _validate_for_run(graph: AgentGraph, coloring: ProperColoring):
    from .graphs import validate_coloring

    return validate_coloring(graph, coloring)
