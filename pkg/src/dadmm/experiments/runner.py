"""Experiment pipelines: data generation, training, evaluation, transfer.

Every command is a pure function of an :class:`ExperimentConfig`; artifacts
land under the config's output directory at paths derived from the config
alone, so reruns overwrite identically (summaries carry the only
non-reproducible field, wall-clock time).
"""

from __future__ import annotations

import csv
import json
import time
from pathlib import Path

import numpy as np

from ..engine import AGENT_SPECIFIC, SHARED, HyperparameterSchedule
from ..graphs import AgentGraph, ProperColoring, generate_erdos_renyi, greedy_color
from ..lasso import LassoDataset, generate_lasso_dataset
from ..linreg import LinRegDataset, generate_linreg_dataset
from ..training import (
    HP_NAMES_BY_PROBLEM,
    TrainResult,
    init_baseline_hyperparameters,
    load_schedule,
    save_schedule,
    train,
    train_sequential,
)
from ..unfolding import SampleSet, iteration_metrics, _Expanded, _Layout
from .config import ExperimentConfig

SUMMARY_SCHEMA_VERSION = 1

__all__ = [
    "cmd_gen_data",
    "cmd_train",
    "cmd_eval",
    "cmd_transfer",
    "cmd_compare_modes",
    "build_graph",
    "load_dataset",
    "evaluate_curves",
    "reduction_factor",
]


def build_graph(config: ExperimentConfig, num_agents: int | None = None,
                seed: int | None = None) -> tuple[AgentGraph, ProperColoring]:
    graph = generate_erdos_renyi(
        num_agents or config.graph.num_agents,
        config.graph.edge_prob,
        seed if seed is not None else config.graph.seed,
    )
    return graph, greedy_color(graph)


def load_dataset(config: ExperimentConfig, snr_db: float | None = None):
    path = config.dataset_path(snr_db)
    if not path.exists():
        raise FileNotFoundError(f"dataset missing at {path}; run gen-data first")
    if config.problem == "lasso":
        return LassoDataset.from_json(path)
    return LinRegDataset.from_json(path)


def _generate(config: ExperimentConfig, snr_db: float):
    if config.problem == "lasso":
        d = config.lasso_data
        return generate_lasso_dataset(
            config.graph.num_agents, d.dim, d.measurements, d.sparsity, snr_db,
            d.num_train + d.num_test, d.seed, num_train=d.num_train,
        )
    d = config.linreg_data
    return generate_linreg_dataset(
        config.graph.num_agents, d.dim, d.samples_per_agent, d.noise_std,
        d.num_train + d.num_test, d.seed, num_train=d.num_train,
    )


def cmd_gen_data(config: ExperimentConfig) -> list[Path]:
    """Write the dataset file(s); byte-identical on rerun with the same config."""
    config.output_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for snr_db in config.snr_values():
        ds = _generate(config, snr_db)
        path = config.dataset_path(snr_db)
        ds.to_json(path)
        paths.append(path)
    return paths


def _dataset_problems(config: ExperimentConfig, dataset) -> SampleSet:
    # bind the reporting tau for lasso traces to the baseline tuple
    if config.problem == "lasso":
        tau = config.baseline_tuple["tau"]

        class _View:
            def __len__(self) -> int:
                return len(dataset)

            def problem(self, i: int):
                return dataset.problem(i, tau_eval=tau)

            def target(self, i: int) -> np.ndarray:
                return dataset.target(i)

            def subset(self, indices):
                return _dataset_problems(config, dataset.subset(indices))

        return _View()
    return dataset


def cmd_train(config: ExperimentConfig, mode: str | None = None) -> list[Path]:
    """Train the unrolled schedule per config; writes theta JSON + history CSV."""
    mode = mode or config.unfolding.mode
    graph, coloring = build_graph(config)
    written = []
    for snr_db in config.snr_values():
        dataset = load_dataset(config, snr_db)
        train_view = _dataset_problems(config, dataset.train_set())
        schedule = init_baseline_hyperparameters(
            config.problem, mode, config.unfolding.num_iterations,
            num_agents=config.graph.num_agents if mode == AGENT_SPECIFIC else None,
            tuple_values=config.baseline_tuple,
        )
        t = config.training
        if t.sequential_segment > 0:
            result = train_sequential(
                schedule, train_view, graph, coloring,
                segment_length=t.sequential_segment,
                epochs_per_segment=t.sequential_epochs,
                batch_size=t.batch_size, learning_rate=t.learning_rate,
                seed=t.seed, problem=config.problem,
            )
        else:
            result = train(
                schedule, train_view, graph, coloring,
                epochs=t.epochs, batch_size=t.batch_size,
                learning_rate=t.learning_rate, seed=t.seed, problem=config.problem,
            )
        if result.diverged:
            raise RuntimeError("training diverged; last good checkpoint discarded")
        theta_path = config.schedule_path(mode, snr_db)
        save_schedule(theta_path, result.schedule, config.problem)
        history_path = config.history_path(mode, snr_db)
        _write_history(history_path, result)
        written += [theta_path, history_path]
    return written


def _write_history(path: Path, result: TrainResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "batch", "loss"])
        for epoch, batch, loss in result.history:
            writer.writerow([epoch, batch, f"{loss:.10g}"])


def evaluate_curves(
    dataset: SampleSet,
    graph: AgentGraph,
    coloring: ProperColoring,
    schedule: HyperparameterSchedule,
    depth: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Mean test loss and mean max-edge disagreement after each iteration."""
    lay = _Layout(graph, coloring)
    exp = _Expanded(schedule, dataset.problem(0), depth)
    losses = np.zeros(depth)
    gaps = np.zeros(depth)
    n = len(dataset)
    for i in range(n):
        sample_losses, sample_gaps = iteration_metrics(
            dataset.problem(i), graph, coloring, schedule, depth, dataset.target(i),
            _layout=lay, _expanded=exp,
        )
        losses += sample_losses
        gaps += sample_gaps
    return losses / n, gaps / n


def _write_curve(path: Path, losses: np.ndarray, gaps: np.ndarray, num_edges: int) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss", "disagreement", "messages"])
        for k, (loss, gap) in enumerate(zip(losses, gaps), start=1):
            writer.writerow([k, f"{loss:.10g}", f"{gap:.10g}", 2 * num_edges * k])


def reduction_factor(baseline_losses: np.ndarray, unfolded_final: float, depth: int) -> float | None:
    """Smallest baseline iteration matching the unfolded final loss, over depth.

    ``None`` when the baseline never reaches the unfolded loss.
    """
    hits = np.nonzero(np.asarray(baseline_losses) <= unfolded_final)[0]
    if hits.size == 0:
        return None
    return float((hits[0] + 1) / depth)


def cmd_eval(config: ExperimentConfig, theta_path: str | Path | None = None,
             mode: str | None = None) -> list[Path]:
    """Evaluate trained vs fixed-tuple optimization on the test set."""
    mode = mode or config.unfolding.mode
    graph, coloring = build_graph(config)
    T = config.unfolding.num_iterations
    written = []
    for snr_db in config.snr_values():
        start = time.perf_counter()
        dataset = load_dataset(config, snr_db)
        test_view = _dataset_problems(config, dataset.test_set())
        path = Path(theta_path) if theta_path is not None else config.schedule_path(mode, snr_db)
        if not path.exists():
            raise FileNotFoundError(f"schedule missing at {path}; run train first")
        schedule, problem_tag = load_schedule(path)
        if problem_tag != config.problem:
            raise ValueError(f"schedule was trained for {problem_tag!r}, config wants {config.problem!r}")

        unfolded_losses, unfolded_gaps = evaluate_curves(test_view, graph, coloring, schedule, T)
        baseline_schedule = init_baseline_hyperparameters(
            config.problem, SHARED, config.baseline.max_iterations,
            tuple_values=config.baseline_tuple,
        )
        baseline_losses, baseline_gaps = evaluate_curves(
            test_view, graph, coloring, baseline_schedule, config.baseline.max_iterations
        )

        unfolded_curve = config.curve_path("unfolded", snr_db)
        baseline_curve = config.curve_path("baseline", snr_db)
        _write_curve(unfolded_curve, unfolded_losses, unfolded_gaps, graph.num_edges)
        _write_curve(baseline_curve, baseline_losses, baseline_gaps, graph.num_edges)

        factor = reduction_factor(baseline_losses, float(unfolded_losses[-1]), T)
        matching = None if factor is None else int(round(factor * T))
        summary = {
            "schema_version": SUMMARY_SCHEMA_VERSION,
            "problem": config.problem,
            "mode": schedule.mode,
            "num_iterations": T,
            "snr_db": snr_db if config.problem == "lasso" else None,
            "final_mse_unfolded": float(unfolded_losses[-1]),
            "final_mse_baseline_at_depth": float(baseline_losses[T - 1]),
            "final_mse_baseline_converged": float(baseline_losses[-1]),
            "reduction_factor": factor,
            "messages_unfolded": 2 * graph.num_edges * T,
            "messages_baseline_to_match": None if matching is None else 2 * graph.num_edges * matching,
            "wall_clock_seconds": time.perf_counter() - start,
            "curves": {"unfolded": str(unfolded_curve), "baseline": str(baseline_curve)},
        }
        summary_path = config.summary_path(snr_db)
        summary_path.write_text(json.dumps(summary, indent=2))
        written += [unfolded_curve, baseline_curve, summary_path]
    return written


def cmd_transfer(config: ExperimentConfig, theta_path: str | Path | None = None) -> list[Path]:
    """Apply a shared-mode schedule to fresh, larger graphs.

    Agent-specific schedules are rejected: their parameters are bound to
    the graph they were trained on.
    """
    if config.problem != "linreg":
        raise ValueError("transfer experiments are defined for the linreg problem")
    path = Path(theta_path) if theta_path is not None else config.schedule_path(SHARED)
    if not path.exists():
        raise FileNotFoundError(f"schedule missing at {path}; run train first")
    schedule, problem_tag = load_schedule(path)
    if problem_tag != config.problem:
        raise ValueError(f"schedule was trained for {problem_tag!r}, config wants {config.problem!r}")
    if schedule.mode != SHARED:
        raise ValueError("transfer requires a shared-mode schedule; agent-specific "
                         "parameters are bound to their training graph")
    if not config.transfer_targets:
        raise ValueError("config lists no transfer targets")

    T = config.unfolding.num_iterations
    d = config.linreg_data
    baseline_schedule = init_baseline_hyperparameters(
        config.problem, SHARED, T, tuple_values=config.baseline_tuple,
    )
    written = []
    results = []
    for target in config.transfer_targets:
        start = time.perf_counter()
        graph, coloring = build_graph(config, num_agents=target, seed=config.graph.seed + target)
        dataset = generate_linreg_dataset(
            target, d.dim, d.samples_per_agent, d.noise_std,
            d.num_test, d.seed + target, num_train=0,
        )
        unfolded_losses, unfolded_gaps = evaluate_curves(dataset, graph, coloring, schedule, T)
        baseline_losses, baseline_gaps = evaluate_curves(dataset, graph, coloring, baseline_schedule, T)
        u_path = config.transfer_curve_path(target, "unfolded")
        b_path = config.transfer_curve_path(target, "baseline")
        _write_curve(u_path, unfolded_losses, unfolded_gaps, graph.num_edges)
        _write_curve(b_path, baseline_losses, baseline_gaps, graph.num_edges)
        written += [u_path, b_path]
        results.append({
            "num_agents": target,
            "final_mse_unfolded": float(unfolded_losses[-1]),
            "final_mse_baseline_at_depth": float(baseline_losses[-1]),
            "wall_clock_seconds": time.perf_counter() - start,
            "curves": {"unfolded": str(u_path), "baseline": str(b_path)},
        })
    summary_path = config.transfer_summary_path()
    summary_path.write_text(json.dumps({
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "problem": config.problem,
        "trained_on_agents": config.graph.num_agents,
        "num_iterations": T,
        "targets": results,
    }, indent=2))
    written.append(summary_path)
    return written


def cmd_compare_modes(config: ExperimentConfig) -> Path:
    """Side-by-side evaluation of agent-specific vs shared schedules."""
    graph, coloring = build_graph(config)
    T = config.unfolding.num_iterations
    snr_db = config.snr_values()[0]
    dataset = load_dataset(config, snr_db)
    test_view = _dataset_problems(config, dataset.test_set())

    curves = {}
    finals = {}
    for mode in (AGENT_SPECIFIC, SHARED):
        path = config.schedule_path(mode, snr_db)
        if not path.exists():
            raise FileNotFoundError(f"schedule missing at {path}; train both modes first")
        schedule, _ = load_schedule(path)
        if schedule.mode != mode:
            raise ValueError(f"{path} holds a {schedule.mode} schedule, expected {mode}")
        losses, gaps = evaluate_curves(test_view, graph, coloring, schedule, T)
        tag = "agent" if mode == AGENT_SPECIFIC else "shared"
        curve_path = config.curve_path(f"compare_{tag}", snr_db)
        _write_curve(curve_path, losses, gaps, graph.num_edges)
        curves[tag] = str(curve_path)
        finals[tag] = float(losses[-1])

    out = config.compare_modes_path()
    out.write_text(json.dumps({
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "problem": config.problem,
        "num_iterations": T,
        "final_mse_agent_specific": finals["agent"],
        "final_mse_shared": finals["shared"],
        "loss_ratio_shared_over_agent": finals["shared"] / finals["agent"],
        "curves": curves,
    }, indent=2))
    return out
