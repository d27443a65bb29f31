"""Loss-generating processes: synthetic low-dimensional post hoc context,
MNIST-derived contexts with a constructed post hoc channel, and replay of
logged interactions with herded or doubly robust loss imputation."""
from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import seeding
from .core import Interaction


class ConditionError(RuntimeError):
    pass


@dataclass(frozen=True)
class HiddenPostHocModel:
    """Hidden linear map from post hoc context to the full loss vector, ``l = phi_star' p``."""

    phi_star: np.ndarray  # (d_p, K)
    seed: int
    condition_bound: float
    condition: float

    @property
    def posthoc_dim(self) -> int:
        return self.phi_star.shape[0]

    @property
    def num_actions(self) -> int:
        return self.phi_star.shape[1]


def generate_phi_star(posthoc_dim: int, num_actions: int, seed: int,
                      condition_bound: float = 1e6, max_retries: int = 100,
                      trial: Optional[int] = None) -> HiddenPostHocModel:
    """Draw i.i.d. standard normal ``phi_star`` of full rank with bounded condition number.

    Redraws (up to ``max_retries`` times) until the ratio of largest to smallest
    singular value is at most ``condition_bound``.
    """
    if posthoc_dim < 1 or num_actions < 1:
        raise ValueError("posthoc_dim and num_actions must be >= 1")
    keys = (seeding.PHI,) if trial is None else (trial, seeding.PHI)
    rng = seeding.stream(seed, *keys)
    cond = np.inf
    for _ in range(max_retries):
        phi = rng.standard_normal((posthoc_dim, num_actions))
        s = np.linalg.svd(phi, compute_uv=False)
        cond = s[0] / s[-1] if s[-1] > 0 else np.inf
        if cond <= condition_bound:
            return HiddenPostHocModel(phi, seed, condition_bound, float(cond))
    raise ConditionError(f"no draw met condition bound {condition_bound:g} in {max_retries} tries "
                         f"(last condition number {cond:g})")


# --- Experiment 1 ----------------------------------------------------------

@dataclass(frozen=True)
class SyntheticEnvSpec:
    num_actions: int = 10
    context_dim: int = 10
    posthoc_dim: int = 3
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.posthoc_dim > self.context_dim:
            raise ValueError("posthoc_dim must not exceed context_dim")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")


def synthetic_losses(model: HiddenPostHocModel, contexts: np.ndarray, noise_sigma: float = 0.0,
                     rng: Optional[np.random.Generator] = None) -> tuple[np.ndarray, np.ndarray]:
    """Post hoc context (first d_p context components) and full losses for a batch of contexts."""
    contexts = np.atleast_2d(contexts)
    posthoc = contexts[:, : model.posthoc_dim]
    losses = posthoc @ model.phi_star
    if noise_sigma > 0:
        if rng is None:
            raise ValueError("noise requires an rng")
        losses = losses + noise_sigma * rng.standard_normal(losses.shape)
    return posthoc, losses


def synthetic_step(spec: SyntheticEnvSpec, model: HiddenPostHocModel,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One round: context uniform on [0,1)^d_c, its first d_p components, and ``phi_star' p``."""
    if model.posthoc_dim != spec.posthoc_dim or model.num_actions != spec.num_actions:
        raise ValueError("hidden model dimensions do not match the environment spec")
    c = rng.random(spec.context_dim)
    p, loss = synthetic_losses(model, c, spec.noise_sigma, rng)
    return c, p[0], loss[0]


def synthetic_trial(spec: SyntheticEnvSpec, steps: int, trial: int) -> dict:
    """Hidden model and a full pre-drawn sequence for one trial (shared by every learner)."""
    model = generate_phi_star(spec.posthoc_dim, spec.num_actions, spec.seed, trial=trial)
    rng = seeding.stream(spec.seed, trial, seeding.CONTEXTS)
    contexts = rng.random((steps, spec.context_dim))
    noise_rng = seeding.stream(spec.seed, trial, seeding.NOISE)
    posthoc, losses = synthetic_losses(model, contexts, spec.noise_sigma, noise_rng)
    return {"model": model, "contexts": contexts, "posthoc": posthoc, "losses": losses}


# --- PCA / Experiment 2 ----------------------------------------------------

@dataclass(frozen=True)
class PCA:
    components: np.ndarray  # (d, D), orthonormal rows
    mean: np.ndarray  # (D,)
    singular_values: np.ndarray  # all singular values of the centered training data

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x) - self.mean) @ self.components.T

    def inverse_transform(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z) @ self.components + self.mean

    @property
    def explained_variance_ratio(self) -> float:
        s2 = self.singular_values ** 2
        return float(s2[: self.components.shape[0]].sum() / s2.sum())


def pca_fit(data: np.ndarray, n_components: int, rtol: float = 1e-10) -> PCA:
    """Top right singular vectors of the mean-centered data.

    Each component is sign-normalised so its largest-magnitude entry is positive.
    """
    data = np.asarray(data, dtype=np.float64)
    mean = data.mean(axis=0)
    _, s, vt = np.linalg.svd(data - mean, full_matrices=False)
    rank = int((s > rtol * max(s[0], np.finfo(float).tiny)).sum()) if s.size else 0
    if n_components > rank:
        raise ValueError(f"requested {n_components} components but the centered data has rank {rank}")
    comps = vt[:n_components].copy()
    lead = np.argmax(np.abs(comps), axis=1)
    comps *= np.sign(comps[np.arange(n_components), lead])[:, None]
    return PCA(comps, mean, s)


def one_minus_one_hot(labels: np.ndarray, num_actions: int = 10) -> np.ndarray:
    """Loss 1 for every wrong digit and 0 for the right one."""
    return 1.0 - np.eye(num_actions)[np.asarray(labels)]


def posthoc_from_losses(phi_star: np.ndarray, losses: np.ndarray) -> np.ndarray:
    """Solve ``phi_star' p = l`` for each loss row (``phi_star`` square and invertible)."""
    return np.linalg.solve(phi_star.T, np.atleast_2d(losses).T).T


@dataclass
class MnistEnvSpec:
    """One MNIST partition as bandit rounds.

    Contexts are PCA coordinates of the centered images (plus a constant 1 when
    the features were built with an intercept); the full loss is the
    one-minus-one-hot label vector; the post hoc context solves
    ``phi_star' p = l`` exactly.
    """

    contexts: np.ndarray
    labels: np.ndarray
    phi: HiddenPostHocModel
    losses: np.ndarray = field(init=False, repr=False)
    posthoc: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.phi.posthoc_dim != self.phi.num_actions:
            raise ValueError("MNIST post hoc model must be square")
        if self.contexts.shape[0] != self.labels.shape[0]:
            raise ValueError("contexts and labels differ in length")
        self.losses = one_minus_one_hot(self.labels, self.phi.num_actions)
        self.posthoc = posthoc_from_losses(self.phi.phi_star, self.losses)

    @classmethod
    def from_images(cls, pca: PCA, images: np.ndarray, labels: np.ndarray,
                    phi: HiddenPostHocModel, intercept: bool = True) -> "MnistEnvSpec":
        return cls(featurize(pca, images, intercept), np.asarray(labels), phi)

    @property
    def num_actions(self) -> int:
        return self.phi.num_actions

    @property
    def context_dim(self) -> int:
        return self.contexts.shape[1]

    @property
    def posthoc_dim(self) -> int:
        return self.phi.posthoc_dim

    def __len__(self) -> int:
        return self.labels.shape[0]


def featurize(pca: PCA, images: np.ndarray, intercept: bool = True) -> np.ndarray:
    z = pca.transform(images)
    if intercept:
        z = np.hstack([z, np.ones((z.shape[0], 1))])
    return np.ascontiguousarray(z)


def mnist_step(spec: MnistEnvSpec, index: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return spec.contexts[index], spec.posthoc[index], spec.losses[index]


# --- offline replay ----------------------------------------------------------

class Imputation(str, enum.Enum):
    HERDED = "herded"
    DOUBLY_ROBUST = "dr"


def herded_table(log: Sequence[Interaction], num_actions: int) -> tuple[dict, np.ndarray]:
    """Per-group per-action mean observed loss, and the global per-action fallback.

    Group/action pairs never observed in the log take the global per-action mean.
    """
    sums: dict = defaultdict(lambda: np.zeros(num_actions))
    counts: dict = defaultdict(lambda: np.zeros(num_actions))
    gsum = np.zeros(num_actions)
    gcount = np.zeros(num_actions)
    for i, x in enumerate(log):
        if x.group_key is None:
            raise ValueError(f"interaction {i} has no group_key (required for herded imputation)")
        if x.action >= num_actions:
            raise ValueError(f"interaction {i}: action {x.action} out of range")
        sums[x.group_key][x.action] += x.loss
        counts[x.group_key][x.action] += 1
        gsum[x.action] += x.loss
        gcount[x.action] += 1
    if np.any(gcount == 0):
        missing = np.flatnonzero(gcount == 0).tolist()
        raise ValueError(f"action(s) {missing} never observed; no herded fallback available")
    global_mean = gsum / gcount
    table = {}
    for g in sums:
        seen = counts[g] > 0
        table[g] = np.where(seen, sums[g] / np.maximum(counts[g], 1), global_mean)
    return table, global_mean


def doubly_robust(imputed: np.ndarray, action: int, loss: float, propensity: float) -> np.ndarray:
    """Correct an imputed loss vector with the logged outcome, weighted by inverse propensity."""
    if not propensity > 0:
        raise ValueError(f"propensity must be > 0, got {propensity}")
    out = np.array(imputed, dtype=np.float64, copy=True)
    out[action] += (loss - out[action]) / propensity
    return out


def replay_env(log: Sequence[Interaction], imputation: Imputation | str,
               num_actions: Optional[int] = None) -> np.ndarray:
    """Full-feedback loss matrix (one row per logged interaction)."""
    imputation = Imputation(imputation)
    if not log:
        raise ValueError("empty log")
    if num_actions is None:
        num_actions = max(x.action for x in log) + 1
        fl = [x.full_loss.shape[0] for x in log if x.full_loss is not None]
        if fl:
            num_actions = max(num_actions, *fl)
    table, _ = herded_table(log, num_actions)
    herded = np.array([table[x.group_key] for x in log])
    if imputation is Imputation.HERDED:
        return herded
    out = np.empty_like(herded)
    for i, x in enumerate(log):
        if x.propensity is None:
            raise ValueError(f"interaction {i} has no propensity (required for doubly robust imputation)")
        out[i] = doubly_robust(herded[i], x.action, x.loss, x.propensity)
    return out
