"""Agent communication graphs and their color schedules.

Agents are indexed ``1..P``. The communication network is an undirected,
connected graph; a proper coloring partitions the agents into classes with
no internal edges, so all agents of one color can update in parallel
within an optimizer iteration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

__all__ = [
    "AgentGraph",
    "ProperColoring",
    "ColoringReport",
    "GraphSamplingError",
    "generate_erdos_renyi",
    "greedy_color",
    "validate_coloring",
    "graph_to_json",
    "graph_from_json",
]

MAX_SAMPLING_ATTEMPTS = 1000


class GraphSamplingError(RuntimeError):
    """Raised when rejection sampling fails to produce a connected graph."""


@dataclass(frozen=True)
class AgentGraph:
    """Undirected connected graph over agents ``1..num_agents``.

    ``edges`` holds unordered pairs ``(i, j)`` with ``i < j``, sorted.
    """

    num_agents: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        if self.num_agents < 1:
            raise ValueError("num_agents must be >= 1")
        for i, j in self.edges:
            if i == j:
                raise ValueError(f"self-loop on agent {i}")
            if not (1 <= i < j <= self.num_agents):
                raise ValueError(f"edge ({i}, {j}) out of range for P={self.num_agents}")
        if len(set(self.edges)) != len(self.edges):
            raise ValueError("duplicate edges")
        if not self._connected():
            raise ValueError("graph is not connected")

    @cached_property
    def adjacency(self) -> dict[int, tuple[int, ...]]:
        """Sorted neighbor list per agent."""
        nbrs: dict[int, list[int]] = {p: [] for p in range(1, self.num_agents + 1)}
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        return {p: tuple(sorted(v)) for p, v in nbrs.items()}

    def neighbors(self, p: int) -> tuple[int, ...]:
        return self.adjacency[p]

    def degree(self, p: int) -> int:
        return len(self.adjacency[p])

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def _connected(self) -> bool:
        if self.num_agents == 1:
            return True
        nbrs: dict[int, list[int]] = {p: [] for p in range(1, self.num_agents + 1)}
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        seen = {1}
        stack = [1]
        while stack:
            u = stack.pop()
            for v in nbrs[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == self.num_agents


@dataclass(frozen=True)
class ProperColoring:
    """Partition of agents into color classes with no internal edges.

    ``classes[c-1]`` lists the agents of color ``c`` (colors ``1..num_colors``);
    ``color_of[p-1]`` is the color of agent ``p``. Class member order is the
    processing order used by the optimizer engine, which is free to permute
    it: same-color agents never share an edge.
    """

    num_colors: int
    classes: tuple[tuple[int, ...], ...]
    color_of: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.num_colors != len(self.classes):
            raise ValueError("num_colors does not match the class list")
        flat = [p for cls in self.classes for p in cls]
        if sorted(flat) != list(range(1, len(self.color_of) + 1)):
            raise ValueError("classes do not partition the agent set")
        for c, cls in enumerate(self.classes, start=1):
            for p in cls:
                if self.color_of[p - 1] != c:
                    raise ValueError(f"color_of[{p}] inconsistent with class {c}")

    @property
    def num_agents(self) -> int:
        return len(self.color_of)


@dataclass(frozen=True)
class ColoringReport:
    """Outcome of a coloring validity check."""

    ok: bool
    offending_edges: tuple[tuple[int, int], ...]
    partition_errors: tuple[str, ...]

    def __bool__(self) -> bool:
        return self.ok


def generate_erdos_renyi(num_agents: int, edge_prob: float, seed: int) -> AgentGraph:
    """Sample a connected Erdos-Renyi graph, rejecting disconnected draws.

    Each candidate draws every unordered pair independently with probability
    ``edge_prob``; candidates are resampled until one is connected. Sampling
    is bit-reproducible given ``seed``.

    Raises:
        GraphSamplingError: after 1000 rejected candidates, which signals
            that ``edge_prob`` is too small for ``num_agents``.
    """
    if num_agents < 1:
        raise ValueError("num_agents must be >= 1")
    if not 0.0 <= edge_prob <= 1.0:
        raise ValueError("edge_prob must lie in [0, 1]")

    rng = np.random.default_rng(seed)
    pairs = [(i, j) for i in range(1, num_agents + 1) for j in range(i + 1, num_agents + 1)]
    for _ in range(MAX_SAMPLING_ATTEMPTS):
        draws = rng.random(len(pairs))
        edges = tuple(pair for pair, u in zip(pairs, draws) if u < edge_prob)
        try:
            return AgentGraph(num_agents, edges)
        except ValueError:
            continue
    raise GraphSamplingError(
        f"no connected graph after {MAX_SAMPLING_ATTEMPTS} attempts "
        f"(P={num_agents}, edge_prob={edge_prob})"
    )


def greedy_color(graph: AgentGraph) -> ProperColoring:
    """First-fit greedy coloring in ascending agent index.

    Agent ``p`` receives the smallest color not used by an already-colored
    neighbor, so at most (max degree + 1) colors are used. Deterministic.
    """
    color_of = [0] * graph.num_agents
    for p in range(1, graph.num_agents + 1):
        taken = {color_of[j - 1] for j in graph.neighbors(p) if j < p}
        c = 1
        while c in taken:
            c += 1
        color_of[p - 1] = c
    num_colors = max(color_of)
    classes = tuple(
        tuple(p for p in range(1, graph.num_agents + 1) if color_of[p - 1] == c)
        for c in range(1, num_colors + 1)
    )
    return ProperColoring(num_colors, classes, tuple(color_of))


def validate_coloring(graph: AgentGraph, coloring: ProperColoring) -> ColoringReport:
    """Check that a coloring is proper for ``graph`` and partitions its agents."""
    partition_errors = []
    if coloring.num_agents != graph.num_agents:
        partition_errors.append(
            f"coloring covers {coloring.num_agents} agents, graph has {graph.num_agents}"
        )
    flat = sorted(p for cls in coloring.classes for p in cls)
    if flat != list(range(1, graph.num_agents + 1)):
        partition_errors.append("classes do not partition the agent set")

    offending = tuple(
        (i, j)
        for i, j in graph.edges
        if i <= coloring.num_agents
        and j <= coloring.num_agents
        and coloring.color_of[i - 1] == coloring.color_of[j - 1]
    )
    ok = not offending and not partition_errors
    return ColoringReport(ok, offending, tuple(partition_errors))


def graph_to_json(
    graph: AgentGraph, coloring: ProperColoring | None = None, path: str | Path | None = None
) -> str:
    """Serialize a graph (and optional coloring) to the JSON interchange form."""
    doc: dict = {"P": graph.num_agents, "edges": [list(e) for e in graph.edges]}
    if coloring is not None:
        doc["colors"] = list(coloring.color_of)
    text = json.dumps(doc)
    if path is not None:
        Path(path).write_text(text)
    return text


def graph_from_json(source: str | Path) -> tuple[AgentGraph, ProperColoring | None]:
    """Load a graph (and coloring, if present) from JSON text or a file path."""
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        doc = json.loads(Path(source).read_text())
    else:
        doc = json.loads(source)
    graph = AgentGraph(int(doc["P"]), tuple(tuple(int(v) for v in e) for e in doc["edges"]))
    coloring = None
    if "colors" in doc:
        color_of = tuple(int(c) for c in doc["colors"])
        num_colors = max(color_of)
        classes = tuple(
            tuple(p for p in range(1, graph.num_agents + 1) if color_of[p - 1] == c)
            for c in range(1, num_colors + 1)
        )
        coloring = ProperColoring(num_colors, classes, color_of)
    return graph, coloring
