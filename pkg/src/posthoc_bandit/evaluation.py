"""Regret, cumulative loss, test MSE, and cross-trial aggregation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


@dataclass
class Trajectory:
    """Per-step record of one trial.

    ``incurred[t] = l_t[a_t]``; ``full_losses`` (T, K) when the environment
    reveals them (simulation only). ``mse`` maps a metric name to values
    recorded at ``mse_steps``.
    """

    incurred: np.ndarray
    actions: np.ndarray
    mode: str
    seed: int = 0
    full_losses: Optional[np.ndarray] = None
    mse_steps: Optional[np.ndarray] = None
    mse: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.incurred = np.asarray(self.incurred, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        if self.actions.shape != self.incurred.shape:
            raise ValueError("actions and incurred losses differ in length")
        if self.full_losses is not None:
            self.full_losses = np.asarray(self.full_losses, dtype=np.float64)
            if self.full_losses.shape[0] != self.incurred.shape[0]:
                raise ValueError("full_losses and incurred losses differ in length")

    def __len__(self) -> int:
        return self.incurred.shape[0]

    @property
    def best(self) -> np.ndarray:
        if self.full_losses is None:
            raise ValueError("trajectory has no full losses; use cumulative_loss instead of regret")
        return self.full_losses.min(axis=1)


def cumulative_regret(traj: Trajectory) -> np.ndarray:
    """Running sum of ``l_t[a_t] - min_a l_t[a]``."""
    return np.cumsum(traj.incurred - traj.best)


def best_fixed_arm_regret(traj: Trajectory) -> np.ndarray:
    """Running ``max_a' sum_s (l_s[a_s] - l_s[a'])``: regret against the best single action in hindsight."""
    if traj.full_losses is None:
        raise ValueError("trajectory has no full losses; use cumulative_loss instead of regret")
    incurred = np.cumsum(traj.incurred)
    per_arm = np.cumsum(traj.full_losses, axis=0)
    return incurred - per_arm.min(axis=1)


def cumulative_loss(traj: Trajectory) -> np.ndarray:
    return np.cumsum(traj.incurred)


def test_mse(weights: np.ndarray, inputs: np.ndarray, losses: np.ndarray) -> float:
    """Mean over samples of the squared norm of ``W x - l``; ``weights`` is (K, d)."""
    inputs = np.atleast_2d(inputs)
    if inputs.shape[0] == 0:
        raise ValueError("empty test set")
    resid = inputs @ np.asarray(weights).T - losses
    return float(np.einsum("ij,ij->", resid, resid) / inputs.shape[0])


test_mse.__test__ = False  # not a pytest test


@dataclass
class Curve:
    mean: np.ndarray
    stderr: np.ndarray
    n: int


def aggregate(curves: Sequence[np.ndarray], modes: Optional[Sequence[str]] = None) -> Curve:
    """Pointwise mean and standard error (sample std / sqrt(n)); stderr is 0 for one trial."""
    if not len(curves):
        raise ValueError("nothing to aggregate")
    if modes is not None and len(set(modes)) > 1:
        raise ValueError(f"cannot aggregate mixed learner modes {sorted(set(modes))}")
    lengths = {len(c) for c in curves}
    if len(lengths) > 1:
        raise ValueError(f"curves have different lengths {sorted(lengths)}")
    stack = np.vstack([np.asarray(c, dtype=np.float64) for c in curves])
    n = stack.shape[0]
    mean = stack.mean(axis=0)
    if n == 1:
        return Curve(mean, np.zeros_like(mean), 1)
    return Curve(mean, stack.std(axis=0, ddof=1) / np.sqrt(n), n)


def aggregate_trajectories(trajs: Sequence[Trajectory], metric=cumulative_regret) -> Curve:
    return aggregate([metric(t) for t in trajs], [t.mode for t in trajs])


def bootstrap_ci(values: np.ndarray, rng: np.random.Generator, n_boot: int = 10000,
                 level: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap interval of the mean."""
    values = np.asarray(values, dtype=np.float64)
    idx = rng.integers(0, values.shape[0], size=(n_boot, values.shape[0]))
    means = values[idx].mean(axis=1)
    lo, hi = np.quantile(means, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)
