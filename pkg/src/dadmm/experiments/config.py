"""TOML-backed experiment configuration.

A config file fully determines every artifact an experiment writes: all
seeds are explicit and output paths derive from the config alone, so
reruns reproduce files byte for byte (modulo wall-clock fields in
summaries). See ``configs/`` at the repository root for ready-made
desk-scale and full-scale presets.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..engine import AGENT_SPECIFIC, SHARED
from ..training import DEFAULT_BASELINE_TUPLES, HP_NAMES_BY_PROBLEM

__all__ = [
    "GraphConfig",
    "LassoDataConfig",
    "LinRegDataConfig",
    "UnfoldingConfig",
    "TrainingConfig",
    "BaselineConfig",
    "ExperimentConfig",
    "load_config",
]


@dataclass(frozen=True)
class GraphConfig:
    num_agents: int = 5
    edge_prob: float = 0.5
    seed: int = 1


@dataclass(frozen=True)
class LassoDataConfig:
    dim: int = 100
    measurements: int = 20
    sparsity: float = 0.25
    snr_db: tuple[float, ...] = (2.0,)
    num_train: int = 200
    num_test: int = 20
    seed: int = 11


@dataclass(frozen=True)
class LinRegDataConfig:
    dim: int = 8
    samples_per_agent: int = 50
    noise_std: float = 0.1
    num_train: int = 200
    num_test: int = 20
    seed: int = 11


@dataclass(frozen=True)
class UnfoldingConfig:
    num_iterations: int = 20
    mode: str = AGENT_SPECIFIC


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 60
    batch_size: int = 50
    learning_rate: float = 0.01
    seed: int = 3
    sequential_segment: int = 0  # 0 = end-to-end
    sequential_epochs: int = 20


@dataclass(frozen=True)
class BaselineConfig:
    max_iterations: int = 2000
    tolerance: float = 1e-3
    tuple_values: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str
    graph: GraphConfig
    lasso_data: LassoDataConfig
    linreg_data: LinRegDataConfig
    unfolding: UnfoldingConfig
    training: TrainingConfig
    baseline: BaselineConfig
    output_dir: Path
    transfer_targets: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.problem not in ("lasso", "linreg"):
            raise ValueError(f"problem must be 'lasso' or 'linreg', got {self.problem!r}")
        if self.unfolding.mode not in (AGENT_SPECIFIC, SHARED):
            raise ValueError(f"unknown unfolding mode {self.unfolding.mode!r}")
        extra = set(self.baseline.tuple_values) - set(HP_NAMES_BY_PROBLEM[self.problem])
        if extra:
            raise ValueError(f"baseline tuple has unknown entries {sorted(extra)}")

    @property
    def baseline_tuple(self) -> dict[str, float]:
        values = dict(DEFAULT_BASELINE_TUPLES[self.problem])
        values.update(self.baseline.tuple_values)
        return values

    # -- derived paths; every artifact location is a pure function of config --

    def dataset_path(self, snr_db: float | None = None) -> Path:
        return self.output_dir / f"dataset{self._snr_suffix(snr_db)}.json"

    def schedule_path(self, mode: str | None = None, snr_db: float | None = None) -> Path:
        mode = mode or self.unfolding.mode
        tag = "agent" if mode == AGENT_SPECIFIC else "shared"
        return self.output_dir / f"theta_{tag}{self._snr_suffix(snr_db)}.json"

    def history_path(self, mode: str | None = None, snr_db: float | None = None) -> Path:
        mode = mode or self.unfolding.mode
        tag = "agent" if mode == AGENT_SPECIFIC else "shared"
        return self.output_dir / f"history_{tag}{self._snr_suffix(snr_db)}.csv"

    def curve_path(self, which: str, snr_db: float | None = None) -> Path:
        return self.output_dir / f"curve_{which}{self._snr_suffix(snr_db)}.csv"

    def summary_path(self, snr_db: float | None = None) -> Path:
        return self.output_dir / f"summary{self._snr_suffix(snr_db)}.json"

    def transfer_curve_path(self, target: int, which: str) -> Path:
        return self.output_dir / f"transfer_P{target}_curve_{which}.csv"

    def transfer_summary_path(self) -> Path:
        return self.output_dir / "transfer_summary.json"

    def compare_modes_path(self) -> Path:
        return self.output_dir / "compare_modes.json"

    def snr_values(self) -> tuple[float, ...]:
        if self.problem == "lasso":
            return self.lasso_data.snr_db
        return (0.0,)

    def _snr_suffix(self, snr_db: float | None) -> str:
        if self.problem != "lasso" or len(self.lasso_data.snr_db) <= 1 or snr_db is None:
            return ""
        return f"_snr{snr_db:g}dB"


def load_config(
    path: str | Path,
    *,
    out_override: str | Path | None = None,
    seed_override: int | None = None,
) -> ExperimentConfig:
    """Parse a TOML experiment config.

    ``seed_override`` replaces the graph seed and offsets the data and
    training seeds, so one flag reseeds a whole pipeline deterministically.
    """
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)

    problem = doc.get("problem", {}).get("kind", "lasso")
    graph = GraphConfig(**doc.get("graph", {}))
    data = doc.get("data", {})
    if problem == "lasso":
        snr = data.get("snr_db", [2.0])
        if isinstance(snr, (int, float)):
            snr = [snr]
        lasso_data = LassoDataConfig(
            dim=data.get("n", 100),
            measurements=data.get("m", 20),
            sparsity=data.get("sparsity", 0.25),
            snr_db=tuple(float(v) for v in snr),
            num_train=data.get("num_train", 200),
            num_test=data.get("num_test", 20),
            seed=data.get("seed", 11),
        )
        linreg_data = LinRegDataConfig()
    else:
        lasso_data = LassoDataConfig()
        linreg_data = LinRegDataConfig(
            dim=data.get("d", 8),
            samples_per_agent=data.get("L_p", 50),
            noise_std=data.get("noise_std", 0.1),
            num_train=data.get("num_train", 200),
            num_test=data.get("num_test", 20),
            seed=data.get("seed", 11),
        )

    unfolding = UnfoldingConfig(**doc.get("unfolding", {}))
    training = TrainingConfig(**doc.get("training", {}))
    base = dict(doc.get("baseline", {}))
    baseline = BaselineConfig(
        max_iterations=base.pop("max_iterations", 2000),
        tolerance=base.pop("tolerance", 1e-3),
        tuple_values={k: float(v) for k, v in base.items()},
    )
    out_dir = Path(out_override) if out_override is not None else Path(doc.get("output", {}).get("dir", "results"))
    transfer = tuple(int(v) for v in doc.get("transfer", {}).get("targets", ()))

    if seed_override is not None:
        graph = GraphConfig(graph.num_agents, graph.edge_prob, seed_override)
        if problem == "lasso":
            lasso_data = LassoDataConfig(
                lasso_data.dim, lasso_data.measurements, lasso_data.sparsity,
                lasso_data.snr_db, lasso_data.num_train, lasso_data.num_test,
                seed_override + 1,
            )
        else:
            linreg_data = LinRegDataConfig(
                linreg_data.dim, linreg_data.samples_per_agent, linreg_data.noise_std,
                linreg_data.num_train, linreg_data.num_test, seed_override + 1,
            )
        training = TrainingConfig(
            training.epochs, training.batch_size, training.learning_rate,
            seed_override + 2, training.sequential_segment, training.sequential_epochs,
        )

    return ExperimentConfig(
        problem=problem,
        graph=graph,
        lasso_data=lasso_data,
        linreg_data=linreg_data,
        unfolding=unfolding,
        training=training,
        baseline=baseline,
        output_dir=out_dir,
        transfer_targets=transfer,
    )
