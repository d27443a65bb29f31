"""Experiment runners: synthetic low-dimension post hoc context, MNIST learning
speed and regret, and offline evaluation of a logged interaction set.

Each runner returns a plain dict of arrays and, when ``out_dir`` is given,
writes CSV curves plus a JSON summary. Outputs depend only on the config and
the input files.
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import seeding
from .core import BanditConfig, Interaction, Learner, Mode, fit_model, select_uniform
from .dataio import load_mnist, read_interaction_log, write_csv
from .environments import (
    Imputation,
    MnistEnvSpec,
    SyntheticEnvSpec,
    featurize,
    generate_phi_star,
    one_minus_one_hot,
    pca_fit,
    replay_env,
    synthetic_trial,
)
from .evaluation import (
    Trajectory,
    aggregate,
    best_fixed_arm_regret,
    bootstrap_ci,
    cumulative_loss,
    cumulative_regret,
    test_mse,
)

log = logging.getLogger(__name__)

MODES = (Mode.CONTEXT_ONLY, Mode.POSTHOC_AUGMENTED)
DATA_ENV = "POSTHOC_BANDIT_DATA"


@dataclass
class RunConfig:
    seed: int = 0
    trials: int = 40
    steps: int = 1000
    alpha: float = 0.1
    ridge_lambda: float = 1.0
    context_dims: tuple = (10, 100)
    posthoc_dim: int = 3
    num_actions: int = 10
    noise_sigma: float = 0.0
    learners: tuple = ("context-only", "posthoc")
    jobs: int = 1
    data_dir: Optional[str] = None
    out_dir: Optional[str] = None
    eval_every: int = 10
    test_subset: int = 2000
    pca_components: int = 200
    intercept: bool = True
    n_boot: int = 10000
    alpha_grid: tuple = (0.0, 0.001, 0.01, 0.1, 1.0)
    train_fraction: float = 0.7
    imputation: str = "dr"

    def modes(self) -> list[Mode]:
        return [Mode(m) for m in self.learners]

    def echo(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def _map(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def run_learner(mode: Mode, config: BanditConfig, contexts: np.ndarray, posthoc: np.ndarray,
                losses: np.ndarray, policy: str = "linucb", rng: Optional[np.random.Generator] = None,
                seed: int = 0, on_step: Optional[Callable[[int, Learner], None]] = None) -> Trajectory:
    """Play one learner through a fixed sequence of rounds.

    ``policy`` is ``"linucb"`` (lowest lower confidence bound) or ``"uniform"``
    (actions drawn from ``rng``). ``on_step(t, learner)`` is called before round
    ``t`` and once more after the last round.
    """
    mode = Mode(mode)
    learner = Learner(config, mode)
    T = contexts.shape[0]
    actions = np.empty(T, dtype=np.int64)
    incurred = np.empty(T)
    keep_posthoc = mode is Mode.POSTHOC_AUGMENTED
    for t in range(T):
        if on_step is not None:
            on_step(t, learner)
        c = contexts[t]
        if policy == "linucb":
            a = learner.select(c)
        elif policy == "uniform":
            a = select_uniform(rng, config.num_actions)
        else:
            raise ValueError(f"unknown policy {policy!r}")
        loss = losses[t, a]
        learner.update(Interaction(c, a, loss, posthoc[t] if keep_posthoc else None))
        actions[t] = a
        incurred[t] = loss
    if on_step is not None:
        on_step(T, learner)
    return Trajectory(incurred, actions, mode.value, seed, full_losses=losses,
                      diagnostics=dict(learner.diagnostics))


def _paired_bootstrap(diffs: np.ndarray, rng: np.random.Generator, n_boot: int, level: float = 0.95):
    """Per-step percentile CI of the mean paired difference; ``diffs`` is (trials, steps)."""
    n = diffs.shape[0]
    weights = rng.multinomial(n, np.full(n, 1.0 / n), size=n_boot) / n
    means = weights @ diffs
    return np.quantile(means, [(1 - level) / 2, (1 + level) / 2], axis=0)


def _curve_rows(steps: np.ndarray, curves: dict) -> tuple[list, list]:
    header = ["step"]
    cols = [steps]
    for name, curve in curves.items():
        header += [f"{name}_mean", f"{name}_stderr"]
        cols += [curve.mean, curve.stderr]
    rows = [[int(cols[0][i])] + [float(c[i]) for c in cols[1:]] for i in range(len(steps))]
    return header, rows


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --- Experiment 1 ------------------------------------------------------------

def _exp1_trial(args) -> dict:
    cfg, dc, trial = args
    spec = SyntheticEnvSpec(cfg.num_actions, dc, cfg.posthoc_dim, cfg.noise_sigma, cfg.seed)
    data = synthetic_trial(spec, cfg.steps, trial)
    bc = BanditConfig(cfg.num_actions, dc, cfg.posthoc_dim, cfg.alpha, cfg.ridge_lambda)
    out = {}
    for mode in cfg.modes():
        traj = run_learner(mode, bc, data["contexts"], data["posthoc"], data["losses"], seed=trial)
        out[mode.value] = traj
    return out


def run_exp1(cfg: RunConfig) -> dict:
    """Both learners with LinUCB on the synthetic environment, for each context dimension."""
    for dc in cfg.context_dims:
        if not 1 <= cfg.posthoc_dim <= dc:
            raise ValueError(f"posthoc_dim={cfg.posthoc_dim} must lie in [1, context_dim={dc}]")
    BanditConfig(cfg.num_actions, max(cfg.context_dims), cfg.posthoc_dim, cfg.alpha, cfg.ridge_lambda)
    results = {}
    out_dir = Path(cfg.out_dir) if cfg.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    for dc in cfg.context_dims:
        per_trial = _map(_exp1_trial, [(cfg, dc, t) for t in range(cfg.trials)], cfg.jobs)
        res: dict = {"trajectories": {}, "regret": {}, "final_regret": {}}
        steps = np.arange(1, cfg.steps + 1)
        for mode in cfg.modes():
            trajs = [tr[mode.value] for tr in per_trial]
            regret = np.vstack([cumulative_regret(t) for t in trajs])
            curves = {
                "cumulative_regret": aggregate(list(regret)),
                "best_fixed_arm_regret": aggregate([best_fixed_arm_regret(t) for t in trajs]),
                "cumulative_loss": aggregate([cumulative_loss(t) for t in trajs]),
            }
            res["trajectories"][mode.value] = trajs
            res["regret"][mode.value] = regret
            res["final_regret"][mode.value] = regret[:, -1]
            if out_dir:
                header, rows = _curve_rows(steps, curves)
                write_csv(out_dir / f"exp1_dc{dc}_{mode.value}.csv", header, rows)
        if len(cfg.modes()) == 2:
            diffs = res["regret"]["context-only"] - res["regret"]["posthoc"]
            rng = seeding.stream(cfg.seed, 10**6 + dc)
            lo, hi = _paired_bootstrap(diffs, rng, cfg.n_boot)
            curve = aggregate(list(diffs))
            res["difference"] = {"mean": curve.mean, "stderr": curve.stderr, "ci_low": lo, "ci_high": hi}
            res["final_difference_ci"] = (float(lo[-1]), float(hi[-1]))
            if out_dir:
                rows = [[int(s), float(m), float(e), float(a), float(b)]
                        for s, m, e, a, b in zip(steps, curve.mean, curve.stderr, lo, hi)]
                write_csv(out_dir / f"exp1_dc{dc}_difference.csv",
                          ["step", "regret_difference_mean", "regret_difference_stderr",
                           "ci95_low", "ci95_high"], rows)
        results[dc] = res
    if out_dir:
        summary = {"config": cfg.echo(), "experiment": "exp1", "results": {
            str(dc): {
                "final_regret_mean": {m: float(np.mean(v)) for m, v in r["final_regret"].items()},
                "final_regret_stderr": {m: float(np.std(v, ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0
                                        for m, v in r["final_regret"].items()},
                **({"final_difference_ci95": list(r["final_difference_ci"])} if "final_difference_ci" in r else {}),
            } for dc, r in results.items()}}
        _write_json(out_dir / "exp1_summary.json", summary)
    return results


# --- MNIST data --------------------------------------------------------------

def resolve_data_dir(data_dir: Optional[str]) -> Path:
    candidates = [data_dir, os.environ.get(DATA_ENV)]
    for c in candidates:
        if c:
            p = Path(c)
            if not p.is_dir():
                raise FileNotFoundError(f"MNIST data directory {p} does not exist")
            return p
    raise FileNotFoundError(f"no MNIST data directory: pass --data-dir or set {DATA_ENV}")


@dataclass
class MnistFeatures:
    train_contexts: np.ndarray
    train_labels: np.ndarray
    test_contexts: np.ndarray
    test_labels: np.ndarray
    explained_variance: float

    @property
    def context_dim(self) -> int:
        return self.train_contexts.shape[1]


@lru_cache(maxsize=4)
def mnist_features(data_dir: str, n_components: int = 200, intercept: bool = True) -> MnistFeatures:
    """PCA (fit on the training images) features for both partitions, cached per process."""
    train_x, train_y = load_mnist(data_dir, "train")
    test_x, test_y = load_mnist(data_dir, "test")
    pca = pca_fit(train_x, n_components)
    return MnistFeatures(featurize(pca, train_x, intercept), train_y,
                         featurize(pca, test_x, intercept), test_y, pca.explained_variance_ratio)


def full_feedback_floor(train_contexts: np.ndarray, train_losses: np.ndarray) -> np.ndarray:
    """Least-squares weights (K, d) fit on full loss vectors of every training round."""
    w, *_ = np.linalg.lstsq(train_contexts, train_losses, rcond=None)
    return w.T


def _mnist_envs(feats: MnistFeatures, cfg: RunConfig, trial: int) -> tuple[MnistEnvSpec, MnistEnvSpec]:
    phi = generate_phi_star(cfg.num_actions, cfg.num_actions, cfg.seed, trial=trial)
    return (MnistEnvSpec(feats.train_contexts, feats.train_labels, phi),
            MnistEnvSpec(feats.test_contexts, feats.test_labels, phi))


def _exp2_mse_trial(args) -> dict:
    cfg, trial = args
    feats = mnist_features(cfg.data_dir, cfg.pca_components, cfg.intercept)
    train, test = _mnist_envs(feats, cfg, trial)
    order = seeding.stream(cfg.seed, trial, seeding.CONTEXTS).permutation(len(train))[: cfg.steps]
    subset = seeding.stream(cfg.seed, trial, seeding.SPLIT).permutation(len(test))[: cfg.test_subset]
    tc, tl, tp = test.contexts[subset], test.losses[subset], test.posthoc[subset]
    bc = BanditConfig(cfg.num_actions, train.context_dim, train.posthoc_dim, cfg.alpha, cfg.ridge_lambda)
    rng = seeding.stream(cfg.seed, trial, seeding.ACTIONS)
    learners = {m: Learner(bc, m) for m in MODES}
    checkpoints, rec = [], {"context-only": [], "posthoc": [], "posthoc_phi": []}

    def record(t):
        checkpoints.append(t)
        ctx = learners[Mode.CONTEXT_ONLY].model
        aug = learners[Mode.POSTHOC_AUGMENTED].model
        rec["context-only"].append(test_mse(ctx.theta, tc, tl))
        rec["posthoc"].append(test_mse(aug.theta, tc, tl))
        rec["posthoc_phi"].append(test_mse(aug.phi, tp, tl))

    for t in range(cfg.steps):
        if t % cfg.eval_every == 0:
            record(t)
        i = order[t]
        a = select_uniform(rng, bc.num_actions)
        x = Interaction(train.contexts[i], a, train.losses[i, a], train.posthoc[i])
        for learner in learners.values():
            learner.update(x)
    record(cfg.steps)
    return {"steps": np.array(checkpoints), **{k: np.array(v) for k, v in rec.items()},
            "floor_subset": test_mse(_floor_weights(cfg.data_dir, cfg.pca_components, cfg.intercept), tc, tl)}


@lru_cache(maxsize=4)
def _floor_weights(data_dir: str, n_components: int, intercept: bool) -> np.ndarray:
    feats = mnist_features(data_dir, n_components, intercept)
    return full_feedback_floor(feats.train_contexts, one_minus_one_hot(feats.train_labels))


def mnist_floor(cfg: RunConfig) -> dict:
    """Full-feedback least squares on every training round, scored on the whole test set."""
    feats = mnist_features(cfg.data_dir, cfg.pca_components, cfg.intercept)
    w = _floor_weights(cfg.data_dir, cfg.pca_components, cfg.intercept)
    test_losses = one_minus_one_hot(feats.test_labels)
    pred = feats.test_contexts @ w.T
    return {
        "test_mse": test_mse(w, feats.test_contexts, test_losses),
        "greedy_test_loss": float(np.mean(pred.argmin(axis=1) != feats.test_labels)),
        "explained_variance": feats.explained_variance,
    }


def run_exp2_mse(cfg: RunConfig) -> dict:
    """Uniform exploration on the training images; test MSE of both learners every ``eval_every`` rounds."""
    cfg.data_dir = str(resolve_data_dir(cfg.data_dir))
    mnist_features(cfg.data_dir, cfg.pca_components, cfg.intercept)  # warm cache before forking
    floor = mnist_floor(cfg)
    per_trial = _map(_exp2_mse_trial, [(cfg, t) for t in range(cfg.trials)], cfg.jobs)
    steps = per_trial[0]["steps"]
    curves = {k: aggregate([r[k] for r in per_trial]) for k in ("context-only", "posthoc", "posthoc_phi")}
    result = {"steps": steps, "trials": per_trial, "curves": curves, "floor": floor,
              "floor_subset": np.array([r["floor_subset"] for r in per_trial])}
    if cfg.out_dir:
        out_dir = Path(cfg.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        header, rows = _curve_rows(steps, {f"{k}_mse": v for k, v in curves.items()})
        write_csv(out_dir / "exp2_mse.csv", header, rows)
        _write_json(out_dir / "exp2_mse_summary.json", {
            "config": cfg.echo(), "experiment": "exp2-mse", "floor": floor,
            "floor_subset_mean": float(result["floor_subset"].mean()),
            "final_mse_mean": {k: float(v.mean[-1]) for k, v in curves.items()},
        })
    return result


def _exp2_regret_trial(args) -> dict:
    cfg, trial = args
    feats = mnist_features(cfg.data_dir, cfg.pca_components, cfg.intercept)
    _, test = _mnist_envs(feats, cfg, trial)
    steps = min(cfg.steps, len(test))
    order = seeding.stream(cfg.seed, trial, seeding.CONTEXTS).permutation(len(test))[:steps]
    bc = BanditConfig(cfg.num_actions, test.context_dim, test.posthoc_dim, cfg.alpha, cfg.ridge_lambda)
    return {m.value: run_learner(m, bc, test.contexts[order], test.posthoc[order], test.losses[order],
                                 seed=trial)
            for m in cfg.modes()}


def run_exp2_regret(cfg: RunConfig) -> dict:
    """LinUCB with each learner over the (shuffled) MNIST test set."""
    cfg.data_dir = str(resolve_data_dir(cfg.data_dir))
    cfg.steps = min(cfg.steps, 10000)
    mnist_features(cfg.data_dir, cfg.pca_components, cfg.intercept)
    per_trial = _map(_exp2_regret_trial, [(cfg, t) for t in range(cfg.trials)], cfg.jobs)
    result: dict = {"trajectories": {}, "regret": {}, "final_regret": {}}
    steps = np.arange(1, len(per_trial[0][cfg.modes()[0].value]) + 1)
    out_dir = Path(cfg.out_dir) if cfg.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    for mode in cfg.modes():
        trajs = [r[mode.value] for r in per_trial]
        regret = np.vstack([cumulative_regret(t) for t in trajs])
        result["trajectories"][mode.value] = trajs
        result["regret"][mode.value] = regret
        result["final_regret"][mode.value] = regret[:, -1]
        if out_dir:
            header, rows = _curve_rows(steps, {
                "cumulative_regret": aggregate(list(regret)),
                "best_fixed_arm_regret": aggregate([best_fixed_arm_regret(t) for t in trajs]),
            })
            write_csv(out_dir / f"exp2_regret_{mode.value}.csv", header, rows)
    if out_dir:
        _write_json(out_dir / "exp2_regret_summary.json", {
            "config": cfg.echo(), "experiment": "exp2-regret",
            "final_regret": {m: [float(v) for v in r] for m, r in result["final_regret"].items()},
        })
    return result


# --- offline evaluation ------------------------------------------------------

def _replay_mse(cfg, contexts, posthoc, full, train_idx, test_idx, trial) -> dict:
    K = full.shape[1]
    bc = BanditConfig(K, contexts.shape[1], posthoc.shape[1], cfg.alpha, cfg.ridge_lambda)
    rng = seeding.stream(cfg.seed, trial, seeding.ACTIONS)
    order = seeding.stream(cfg.seed, trial, seeding.CONTEXTS).permutation(train_idx)
    learners = {m: Learner(bc, m) for m in MODES}
    tc, tl = contexts[test_idx], full[test_idx]
    out = {m.value: [] for m in MODES}
    for t in range(len(order) + 1):
        for m, learner in learners.items():
            out[m.value].append(test_mse(learner.model.theta, tc, tl))
        if t == len(order):
            break
        i = order[t]
        a = select_uniform(rng, K)
        x = Interaction(contexts[i], a, full[i, a], posthoc[i])
        for learner in learners.values():
            learner.update(x)
    return {k: np.array(v) for k, v in out.items()}


def run_offline_eval(cfg: RunConfig, log_path: str) -> dict:
    """Replay a logged interaction set under herded or doubly robust full-loss imputation.

    Reports the test-MSE difference (context-only minus augmented) under uniform
    exploration on a train/test split, and the replayed cumulative loss of
    LinUCB for every alpha in ``alpha_grid``.
    """
    logged = read_interaction_log(log_path)
    if not logged:
        raise ValueError("interaction log is empty")
    for i, x in enumerate(logged):
        if x.posthoc is None:
            raise ValueError(f"record {i}: missing field 'posthoc'")
        if x.group_key is None:
            raise ValueError(f"record {i}: missing field 'group_key' (needed for herded imputation)")
        if Imputation(cfg.imputation) is Imputation.DOUBLY_ROBUST and x.propensity is None:
            raise ValueError(f"record {i}: missing field 'propensity' (needed for doubly robust imputation)")
    full = replay_env(logged, cfg.imputation, cfg.num_actions if cfg.num_actions else None)
    contexts = np.vstack([x.context for x in logged])
    posthoc = np.vstack([x.posthoc for x in logged])
    n = len(logged)
    n_train = int(round(cfg.train_fraction * n))
    if not 0 < n_train < n:
        raise ValueError(f"train_fraction={cfg.train_fraction} leaves an empty split for {n} records")
    mse_runs, sweep = [], []
    for trial in range(cfg.trials):
        perm = seeding.stream(cfg.seed, trial, seeding.SPLIT).permutation(n)
        mse_runs.append(_replay_mse(cfg, contexts, posthoc, full, perm[:n_train], perm[n_train:], trial))
    diff = aggregate([r["context-only"] - r["posthoc"] for r in mse_runs])
    K = full.shape[1]
    for alpha in cfg.alpha_grid:
        row = {"alpha": float(alpha)}
        for mode in MODES:
            totals = []
            for trial in range(cfg.trials):
                order = seeding.stream(cfg.seed, trial, seeding.CONTEXTS).permutation(n)
                bc = BanditConfig(K, contexts.shape[1], posthoc.shape[1], float(alpha), cfg.ridge_lambda)
                traj = run_learner(mode, bc, contexts[order], posthoc[order], full[order], seed=trial)
                totals.append(cumulative_loss(traj)[-1])
            row[f"{mode.value}_cumulative_loss"] = float(np.mean(totals))
        sweep.append(row)
    report = {"imputation": Imputation(cfg.imputation).value, "records": n, "train": n_train,
              "test": n - n_train, "mse_difference": diff, "sweep": sweep,
              "best_alpha": {m.value: min(sweep, key=lambda r: r[f"{m.value}_cumulative_loss"])["alpha"]
                             for m in MODES}}
    if cfg.out_dir:
        out_dir = Path(cfg.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        header, rows = _curve_rows(np.arange(len(diff.mean)), {"mse_difference": diff})
        write_csv(out_dir / "offline_mse_difference.csv", header, rows)
        keys = list(sweep[0])
        write_csv(out_dir / "offline_alpha_sweep.csv", keys, [[r[k] for k in keys] for r in sweep])
        _write_json(out_dir / "offline_summary.json", {
            "config": cfg.echo(), "experiment": "offline-eval", "log": str(log_path),
            **{k: v for k, v in report.items() if k != "mse_difference"},
            "final_mse_difference": float(diff.mean[-1]),
        })
    return report
