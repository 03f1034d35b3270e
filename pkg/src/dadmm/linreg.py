"""Distributed linear regression: learning a shared affine model.

Each agent holds labeled pairs ``(x_i, s_i)`` and fits weights ``a`` and
bias ``omega`` of the least-squares objective

    1 / (2 * L_p) * sum_i (a @ x_i + omega - s_i)^2

under consensus on both components. ``a`` and ``omega`` carry separate
step sizes and penalties, giving the hyperparameter tuple
``(alpha, rho, delta, beta, eta, gamma)``: a-step, a-penalty, omega-step,
omega-penalty, a-dual step, omega-dual step. The engine state stacks the
model as ``y = [a, omega]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .engine import Block, ProblemInstance, _sum_copies

__all__ = [
    "LINREG_HP_NAMES",
    "LinRegLocalData",
    "LinRegModel",
    "LinRegDuals",
    "LinRegProblem",
    "LinRegDataset",
    "linreg_objective",
    "linreg_primal_step_a",
    "linreg_primal_step_omega",
    "linreg_dual_update_mu",
    "linreg_dual_update_lambda",
    "generate_linreg_dataset",
]

LINREG_HP_NAMES = ("alpha", "rho", "delta", "beta", "eta", "gamma")
_ALPHA, _RHO, _DELTA, _BETA, _ETA, _GAMMA = range(6)


@dataclass(frozen=True)
class LinRegLocalData:
    """One agent's labeled pairs: features ``(L_p, d)``, labels ``(L_p,)``."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        X = np.asarray(self.features, dtype=float)
        s = np.asarray(self.labels, dtype=float)
        if X.ndim != 2 or s.ndim != 1 or X.shape[0] != s.shape[0]:
            raise ValueError("features must be (L_p, d) with one label per row")
        if X.shape[0] < 1:
            raise ValueError("need at least one sample per agent")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", s)

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class LinRegModel:
    """Affine model: weight vector and scalar bias."""

    weights: np.ndarray
    bias: float

    def stacked(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.weights, dtype=float), [float(self.bias)]])

    @classmethod
    def from_stacked(cls, y: np.ndarray) -> "LinRegModel":
        y = np.asarray(y, dtype=float)
        return cls(y[:-1].copy(), float(y[-1]))


@dataclass(frozen=True)
class LinRegDuals:
    """Dual variables: ``mu`` for the weight constraint, ``lam`` for the bias."""

    mu: np.ndarray
    lam: float


def linreg_objective(data: LinRegLocalData, model: LinRegModel) -> float:
    """Mean squared residual over the agent's samples, halved."""
    a = np.asarray(model.weights, dtype=float)
    if a.shape != (data.dim,):
        raise ValueError(f"weights must have length {data.dim}, got {a.shape}")
    r = data.features @ a + model.bias - data.labels
    return float((r @ r) / (2.0 * data.num_samples))


def linreg_primal_step_a(
    data: LinRegLocalData,
    a: np.ndarray,
    omega: float,
    neighbor_a_copies: Mapping[int, np.ndarray],
    mu: np.ndarray,
    alpha: float,
    rho: float,
) -> np.ndarray:
    """Gradient step on the weight block of the augmented Lagrangian."""
    a = np.asarray(a, dtype=float)
    X, s = data.features, data.labels
    g = X.T @ (X @ a + omega - s) / data.num_samples
    deg = len(neighbor_a_copies)
    if deg:
        copies_sum = _sum_copies(neighbor_a_copies)
        g = g + deg * np.asarray(mu, dtype=float) + rho * (deg * a - copies_sum)
    return a - alpha * g


def linreg_primal_step_omega(
    data: LinRegLocalData,
    a: np.ndarray,
    omega: float,
    neighbor_omega_copies: Mapping[int, float],
    lam: float,
    delta: float,
    beta: float,
) -> float:
    """Gradient step on the bias block of the augmented Lagrangian."""
    X, s = data.features, data.labels
    g = float(np.sum(X @ np.asarray(a, dtype=float) + omega - s) / data.num_samples)
    deg = len(neighbor_omega_copies)
    if deg:
        copies_sum = float(sum(neighbor_omega_copies[j] for j in sorted(neighbor_omega_copies)))
        g = g + deg * lam + beta * (deg * omega - copies_sum)
    return omega - delta * g


def linreg_dual_update_mu(
    mu: np.ndarray,
    a_new: np.ndarray,
    neighbor_a_copies: Mapping[int, np.ndarray],
    eta: float,
) -> np.ndarray:
    """Dual ascent on the weight-consensus residual."""
    mu = np.asarray(mu, dtype=float)
    deg = len(neighbor_a_copies)
    if not deg:
        return mu
    copies_sum = _sum_copies(neighbor_a_copies)
    return mu + eta * (deg * np.asarray(a_new, dtype=float) - copies_sum)


def linreg_dual_update_lambda(
    lam: float,
    omega_new: float,
    neighbor_omega_copies: Mapping[int, float],
    gamma: float,
) -> float:
    """Dual ascent on the bias-consensus residual."""
    deg = len(neighbor_omega_copies)
    if not deg:
        return lam
    copies_sum = float(sum(neighbor_omega_copies[j] for j in sorted(neighbor_omega_copies)))
    return lam + gamma * (deg * omega_new - copies_sum)


class LinRegProblem(ProblemInstance):
    """One sample of the distributed regression problem, stats precomputed.

    The data gradient only needs the per-agent second moments, so they are
    cached: ``gram = X^T X / L``, ``mean_x``, ``xs = X^T s / L``, ``mean_s``.
    """

    hp_names = LINREG_HP_NAMES
    blocks: tuple[Block, ...]

    def __init__(self, data: Sequence[LinRegLocalData]):
        if not data:
            raise ValueError("need at least one agent")
        d = data[0].dim
        if any(a.dim != d for a in data):
            raise ValueError("all agents must share the feature dimension")
        self.data = tuple(data)
        self._d = d
        self.blocks = (
            Block(slice(0, d), step=_ALPHA, penalty=_RHO, dual_step=_ETA),
            Block(slice(d, d + 1), step=_DELTA, penalty=_BETA, dual_step=_GAMMA),
        )
        self._gram = [a.features.T @ a.features / a.num_samples for a in data]
        self._mean_x = [a.features.mean(axis=0) for a in data]
        self._xs = [a.features.T @ a.labels / a.num_samples for a in data]
        self._mean_s = [float(a.labels.mean()) for a in data]

    @property
    def num_agents(self) -> int:
        return len(self.data)

    @property
    def primal_dimension(self) -> int:
        return self._d + 1

    def data_gradient(self, p: int, y: np.ndarray, hp: np.ndarray) -> np.ndarray:
        a, omega = y[: self._d], y[self._d]
        i = p - 1
        ga = self._gram[i] @ a + self._mean_x[i] * omega - self._xs[i]
        gw = self._mean_x[i] @ a + omega - self._mean_s[i]
        return np.concatenate([ga, [gw]])

    def data_hessian_vp(self, p: int, y: np.ndarray, v: np.ndarray) -> np.ndarray:
        va, vw = v[: self._d], v[self._d]
        i = p - 1
        ha = self._gram[i] @ va + self._mean_x[i] * vw
        hw = self._mean_x[i] @ va + vw
        return np.concatenate([ha, [hw]])

    def local_objective(self, p: int, y: np.ndarray) -> float:
        return linreg_objective(self.data[p - 1], LinRegModel.from_stacked(y))

    def split_duals(self, duals: np.ndarray) -> LinRegDuals:
        return LinRegDuals(duals[: self._d].copy(), float(duals[self._d]))


@dataclass
class LinRegDataset:
    """Regression samples: per sample, fresh model and per-agent labeled data."""

    num_agents: int
    dim: int
    samples_per_agent: int
    noise_std: float
    seed: int
    num_train: int
    features: np.ndarray  # (L, P, L_p, d)
    labels: np.ndarray  # (L, P, L_p)
    targets: np.ndarray  # (L, d + 1), stacked [a_bar, omega_bar]

    def __len__(self) -> int:
        return self.features.shape[0]

    def problem(self, i: int) -> LinRegProblem:
        data = [LinRegLocalData(self.features[i, p], self.labels[i, p]) for p in range(self.num_agents)]
        return LinRegProblem(data)

    def target(self, i: int) -> np.ndarray:
        return self.targets[i]

    def target_model(self, i: int) -> LinRegModel:
        return LinRegModel.from_stacked(self.targets[i])

    def subset(self, indices: Sequence[int]) -> "LinRegDataset":
        idx = np.asarray(indices, dtype=int)
        return LinRegDataset(
            self.num_agents, self.dim, self.samples_per_agent, self.noise_std, self.seed,
            len(idx), self.features[idx], self.labels[idx], self.targets[idx],
        )

    def train_set(self) -> "LinRegDataset":
        return self.subset(range(self.num_train))

    def test_set(self) -> "LinRegDataset":
        return self.subset(range(self.num_train, len(self)))

    def to_json(self, path: str | Path) -> None:
        doc = {
            "schema_version": 1,
            "problem": "linreg",
            "P": self.num_agents,
            "d": self.dim,
            "L_p": self.samples_per_agent,
            "noise_std": self.noise_std,
            "seed": self.seed,
            "num_train": self.num_train,
            "samples": [
                {
                    "agents": [
                        [[self.features[i, p, r].tolist(), float(self.labels[i, p, r])]
                         for r in range(self.samples_per_agent)]
                        for p in range(self.num_agents)
                    ],
                    "y_bar": {"a": self.targets[i, :-1].tolist(), "omega": float(self.targets[i, -1])},
                }
                for i in range(len(self))
            ],
        }
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def from_json(cls, path: str | Path) -> "LinRegDataset":
        doc = json.loads(Path(path).read_text())
        if doc.get("problem") != "linreg":
            raise ValueError(f"not a linreg dataset: {path}")
        P, d, L_p = int(doc["P"]), int(doc["d"]), int(doc["L_p"])
        L = len(doc["samples"])
        features = np.zeros((L, P, L_p, d))
        labels = np.zeros((L, P, L_p))
        targets = np.zeros((L, d + 1))
        for i, sample in enumerate(doc["samples"]):
            for p, pairs in enumerate(sample["agents"]):
                for r, (x, s) in enumerate(pairs):
                    features[i, p, r] = x
                    labels[i, p, r] = s
            targets[i, :-1] = sample["y_bar"]["a"]
            targets[i, -1] = sample["y_bar"]["omega"]
        return cls(
            P, d, L_p, float(doc["noise_std"]), int(doc["seed"]), int(doc["num_train"]),
            features, labels, targets,
        )


def generate_linreg_dataset(
    num_agents: int,
    dim: int,
    samples_per_agent: int,
    noise_std: float,
    num_samples: int,
    seed: int,
    num_train: int | None = None,
) -> LinRegDataset:
    """Sample identifiable regression tasks.

    Per sample: a standard-Gaussian ground-truth model ``(a_bar, omega_bar)``,
    then per agent ``samples_per_agent`` standard-Gaussian feature vectors
    with labels ``a_bar @ x + omega_bar + noise``. Bit-reproducible given
    ``seed``.
    """
    if num_agents < 1 or dim < 1 or samples_per_agent < 1 or num_samples < 0:
        raise ValueError("dimensions must be positive")
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    if num_train is None:
        num_train = num_samples
    if not 0 <= num_train <= num_samples:
        raise ValueError("num_train must lie in [0, num_samples]")

    rng = np.random.default_rng(seed)
    features = np.zeros((num_samples, num_agents, samples_per_agent, dim))
    labels = np.zeros((num_samples, num_agents, samples_per_agent))
    targets = np.zeros((num_samples, dim + 1))
    for i in range(num_samples):
        a_bar = rng.normal(0.0, 1.0, dim)
        omega_bar = float(rng.normal())
        targets[i, :-1] = a_bar
        targets[i, -1] = omega_bar
        for p in range(num_agents):
            X = rng.normal(0.0, 1.0, (samples_per_agent, dim))
            noise = rng.normal(0.0, noise_std, samples_per_agent) if noise_std > 0 else 0.0
            features[i, p] = X
            labels[i, p] = X @ a_bar + omega_bar + noise
    return LinRegDataset(
        num_agents, dim, samples_per_agent, float(noise_std), int(seed), int(num_train),
        features, labels, targets,
    )
