import json

import numpy as np
import pytest

from dadmm.graphs import (
    AgentGraph,
    GraphSamplingError,
    ProperColoring,
    generate_erdos_renyi,
    graph_from_json,
    graph_to_json,
    greedy_color,
    validate_coloring,
)


def path_graph(n):
    return AgentGraph(n, tuple((i, i + 1) for i in range(1, n)))


def complete_graph(n):
    return AgentGraph(n, tuple((i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1)))


class TestAgentGraph:
    def test_rejects_self_loop(self):
        with pytest.raises(ValueError, match="self-loop"):
            AgentGraph(3, ((1, 1),))

    def test_rejects_disconnected(self):
        with pytest.raises(ValueError, match="connected"):
            AgentGraph(4, ((1, 2), (3, 4)))

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            AgentGraph(2, ((1, 3),))

    def test_adjacency_mirrors_edges(self):
        g = path_graph(3)
        assert g.adjacency == {1: (2,), 2: (1, 3), 3: (2,)}
        assert g.degree(2) == 2
        assert g.num_edges == 2

    def test_single_agent(self):
        g = AgentGraph(1, ())
        assert g.neighbors(1) == ()


class TestGenerateErdosRenyi:
    def test_two_agents_full_probability(self):
        g = generate_erdos_renyi(2, 1.0, seed=0)
        assert g.edges == ((1, 2),)

    def test_single_agent_trivially_connected(self):
        g = generate_erdos_renyi(1, 0.5, seed=7)
        assert g.num_agents == 1
        assert g.edges == ()

    def test_deterministic_per_seed(self):
        a = generate_erdos_renyi(5, 0.6, seed=42)
        b = generate_erdos_renyi(5, 0.6, seed=42)
        assert a.edges == b.edges
        assert a.num_agents == 5

    def test_different_seeds_differ(self):
        draws = {generate_erdos_renyi(8, 0.4, seed=s).edges for s in range(6)}
        assert len(draws) > 1

    def test_fails_when_probability_too_small(self):
        with pytest.raises(GraphSamplingError):
            generate_erdos_renyi(40, 0.001, seed=3)

    def test_validates_inputs(self):
        with pytest.raises(ValueError):
            generate_erdos_renyi(0, 0.5, seed=1)
        with pytest.raises(ValueError):
            generate_erdos_renyi(3, 1.5, seed=1)


class TestGreedyColor:
    def test_path_graph_alternates(self):
        coloring = greedy_color(path_graph(3))
        assert coloring.color_of == (1, 2, 1)
        assert coloring.num_colors == 2
        assert coloring.classes == ((1, 3), (2,))

    def test_triangle_needs_three(self):
        coloring = greedy_color(complete_graph(3))
        assert coloring.color_of == (1, 2, 3)
        assert coloring.num_colors == 3

    def test_edgeless_single_color(self):
        coloring = greedy_color(AgentGraph(1, ()))
        assert coloring.num_colors == 1
        assert coloring.color_of == (1,)

    @pytest.mark.parametrize("seed", range(20))
    def test_random_graphs_properly_colored(self, seed):
        g = generate_erdos_renyi(12, 0.3, seed=seed)
        coloring = greedy_color(g)
        assert validate_coloring(g, coloring).ok
        max_degree = max(g.degree(p) for p in range(1, 13))
        assert coloring.num_colors <= max_degree + 1


class TestValidateColoring:
    def test_triangle_distinct_passes(self):
        g = complete_graph(3)
        report = validate_coloring(g, ProperColoring(3, ((1,), (2,), (3,)), (1, 2, 3)))
        assert report.ok
        assert bool(report)

    def test_equal_endpoint_colors_fail(self):
        g = AgentGraph(2, ((1, 2),))
        bad = ProperColoring(1, ((1, 2),), (1, 1))
        report = validate_coloring(g, bad)
        assert not report.ok
        assert report.offending_edges == ((1, 2),)

    def test_path_coloring_matches_greedy(self):
        g = path_graph(3)
        report = validate_coloring(g, ProperColoring(2, ((1, 3), (2,)), (1, 2, 1)))
        assert report.ok

    def test_partition_mismatch_reported(self):
        g = path_graph(3)
        small = ProperColoring(2, ((1,), (2,)), (1, 2))
        report = validate_coloring(g, small)
        assert not report.ok
        assert report.partition_errors


class TestJsonRoundTrip:
    def test_graph_and_colors(self, tmp_path):
        g = generate_erdos_renyi(6, 0.5, seed=9)
        coloring = greedy_color(g)
        text = graph_to_json(g, coloring)
        doc = json.loads(text)
        assert doc["P"] == 6
        assert doc["colors"] == list(coloring.color_of)

        path = tmp_path / "graph.json"
        graph_to_json(g, coloring, path)
        g2, c2 = graph_from_json(path)
        assert g2 == g
        assert c2 == coloring

    def test_graph_without_colors(self):
        g = path_graph(4)
        g2, c2 = graph_from_json(graph_to_json(g))
        assert g2 == g
        assert c2 is None
