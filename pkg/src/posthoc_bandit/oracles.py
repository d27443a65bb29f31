"""Independent checks of the learners against brute-force references.

Each check builds its reference from raw stacked data matrices (never from
the incremental statistics it is checking) and returns an ``OracleResult``.
``run_all`` backs the ``proptest-oracles`` CLI subcommand.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import seeding
from .core import (
    BanditConfig,
    Interaction,
    SufficientStats,
    fit_context_only,
    fit_posthoc_augmented,
    observe,
    transform_matrix,
)
from .environments import doubly_robust, generate_phi_star


@dataclass
class OracleResult:
    name: str
    passed: bool
    worst: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name}: worst={self.worst:.3e} tol={self.tolerance:.1e} {self.detail}".rstrip()


def random_instance(rng: np.random.Generator, K: int, dc: int, dp: int, T: int):
    C = rng.standard_normal((T, dc))
    P = rng.standard_normal((T, dp))
    L = rng.standard_normal(T)
    A = rng.integers(0, K, size=T)
    return C, P, L, A


def stats_from(C, P, L, A, K, lam, matched_ridge=False) -> SufficientStats:
    cfg = BanditConfig(K, C.shape[1], P.shape[1], 0.0, lam)
    stats = SufficientStats.fresh(cfg, matched_ridge=matched_ridge)
    for c, p, l, a in zip(C, P, L, A):
        observe(stats, Interaction(c, int(a), float(l), p))
    return stats


def batch_blocks(C, P, L, A, K, lam) -> dict:
    """Every statistics block recomputed from the stacked data matrices."""
    dc, dp = C.shape[1], P.shape[1]
    out = {
        "ctc": lam * np.eye(dc) + C.T @ C,
        "ptp": lam * np.eye(dp) + P.T @ P,
        "ctp": C.T @ P,
        "ctc_a": np.empty((K, dc, dc)),
        "ptp_a": np.empty((K, dp, dp)),
        "ctl_a": np.empty((K, dc)),
        "ptl_a": np.empty((K, dp)),
        "counts": np.bincount(A, minlength=K),
    }
    for a in range(K):
        m = A == a
        out["ctc_a"][a] = lam * np.eye(dc) + C[m].T @ C[m]
        out["ptp_a"][a] = lam * np.eye(dp) + P[m].T @ P[m]
        out["ctl_a"][a] = C[m].T @ L[m]
        out["ptl_a"][a] = P[m].T @ L[m]
    return out


def kkt_solution(C, P, L, A, a, lam) -> tuple[np.ndarray, np.ndarray]:
    """Minimise the two ridge-regularised squared losses of action ``a`` jointly over
    (theta, phi), subject to ``P'P phi = P'C theta`` (the least-squares form of
    ``C theta = P phi``), by solving the Lagrangian stationarity system directly."""
    dc, dp = C.shape[1], P.shape[1]
    m = A == a
    Ca, Pa, La = C[m], P[m], L[m]
    Q_t = lam * np.eye(dc) + Ca.T @ Ca
    Q_p = lam * np.eye(dp) + Pa.T @ Pa
    G_c = C.T @ P                      # (dc, dp)
    G_p = lam * np.eye(dp) + P.T @ P   # (dp, dp)
    n = dc + dp + dp
    K = np.zeros((n, n))
    K[:dc, :dc] = 2 * Q_t
    K[dc:dc + dp, dc:dc + dp] = 2 * Q_p
    # constraint rows: -G_c' theta + G_p phi = 0
    K[dc + dp:, :dc] = -G_c.T
    K[dc + dp:, dc:dc + dp] = G_p
    K[:dc, dc + dp:] = -G_c
    K[dc:dc + dp, dc + dp:] = G_p.T
    rhs = np.concatenate([2 * Ca.T @ La, 2 * Pa.T @ La, np.zeros(dp)])
    sol = np.linalg.solve(K, rhs)
    return sol[:dc], sol[dc:dc + dp]


def check_kkt(n_instances: int = 100, seed: int = 0, tol: float = 1e-6) -> OracleResult:
    worst = 0.0
    for i in range(n_instances):
        rng = seeding.stream(seed, 100, i)
        K = int(rng.integers(2, 4))
        dc = int(rng.integers(2, 6))
        dp = int(rng.integers(1, dc + 1))
        T = int(rng.integers(5, 40))
        lam = float(10 ** rng.uniform(-2, 1))
        C, P, L, A = random_instance(rng, K, dc, dp, T)
        stats = stats_from(C, P, L, A, K, lam)
        for a in range(K):
            theta = fit_posthoc_augmented(stats, a)
            ref, ref_phi = kkt_solution(C, P, L, A, a, lam)
            scale = max(1.0, float(np.abs(ref).max()))
            worst = max(worst, float(np.abs(theta - ref).max()) / scale,
                        float(np.abs(transform_matrix(stats) @ theta - ref_phi).max()) / scale)
    return OracleResult("augmented fit == KKT constrained least squares", worst <= tol, worst, tol,
                        f"({n_instances} instances)")


def check_batch(n_instances: int = 20, seed: int = 0, tol: float = 1e-10) -> OracleResult:
    worst = 0.0
    for i in range(n_instances):
        rng = seeding.stream(seed, 200, i)
        K, dc, dp, T = 3, 6, 3, 50
        C, P, L, A = random_instance(rng, K, dc, dp, T)
        stats = stats_from(C, P, L, A, K, 1.0)
        ref = batch_blocks(C, P, L, A, K, 1.0)
        for name, value in ref.items():
            worst = max(worst, float(np.abs(getattr(stats, name) - value).max()))
    return OracleResult("incremental statistics == batch recomputation", worst <= tol, worst, tol,
                        f"({n_instances} x 50 interactions)")


def check_reductions(n_instances: int = 20, seed: int = 0, tol: float = 1e-8) -> OracleResult:
    """Post hoc stream identical to the context stream: H = I and the augmented
    fit equals the context-only fit (matched ridge)."""
    worst_h = worst_fit = 0.0
    for i in range(n_instances):
        rng = seeding.stream(seed, 300, i)
        K, d = 3, 4
        T = 10 * d * K
        C, _, L, A = random_instance(rng, K, d, d, T)
        stats = stats_from(C, C, L, A, K, 1.0, matched_ridge=True)
        worst_h = max(worst_h, float(np.abs(transform_matrix(stats) - np.eye(d)).max()))
        for a in range(K):
            worst_fit = max(worst_fit, float(np.abs(fit_posthoc_augmented(stats, a)
                                                    - fit_context_only(stats, a)).max()))
    worst = max(worst_h, worst_fit)
    return OracleResult("H = I and augmented -> context-only reduction", worst <= tol, worst, tol,
                        f"(H err {worst_h:.1e}, fit err {worst_fit:.1e})")


def check_phi_rank(seed: int = 0, tol: float = 1e-10) -> OracleResult:
    worst = 0.0
    ok = True
    for i, (dp, K) in enumerate([(3, 10), (10, 10), (1, 1), (5, 3)]):
        model = generate_phi_star(dp, K, seed + i)
        s = np.linalg.svd(model.phi_star, compute_uv=False)
        rank = int((s > tol * s[0]).sum())
        ok &= rank == min(dp, K) and s[0] / s[-1] <= model.condition_bound
        worst = max(worst, abs(s[0] / s[-1] - model.condition) / model.condition)
    return OracleResult("hidden post hoc model has full rank", bool(ok) and worst <= 1e-8, worst, 1e-8)


def check_unbiased(reps: int = 1000, seed: int = 0, z: float = 4.0) -> OracleResult:
    """Fixed design with ``C theta* = P phi*`` on every row; Gaussian loss noise.
    The mean augmented estimate must sit within ``z`` standard errors of theta*."""
    rng = seeding.stream(seed, 400)
    K, dc, dp, T, sigma, lam = 2, 5, 2, 80, 0.5, 1e-9
    C = rng.random((T, dc))
    P = C[:, :dp]
    A = np.arange(T) % K
    phi = rng.standard_normal((dp, K))
    theta_star = np.vstack([phi, np.zeros((dc - dp, K))])
    mean_loss = C @ theta_star
    ests = np.empty((reps, K, dc))
    base = stats_from(C, P, np.zeros(T), A, K, lam)
    for r in range(reps):
        noise = seeding.stream(seed, 401, r).standard_normal(T) * sigma
        L = mean_loss[np.arange(T), A] + noise
        stats = base.copy()
        for a in range(K):
            m = A == a
            stats.ctl_a[a] = C[m].T @ L[m]
            stats.ptl_a[a] = P[m].T @ L[m]
        H = transform_matrix(stats)
        for a in range(K):
            ests[r, a] = fit_posthoc_augmented(stats, a, H)
    se = ests.std(axis=0, ddof=1) / np.sqrt(reps)
    zs = np.abs(ests.mean(axis=0) - theta_star.T) / se
    worst = float(zs.max())
    return OracleResult("augmented estimate unbiased (Monte Carlo)", worst < z, worst, z,
                        f"({reps} replications, max |z|)")


def dr_bench(reps: int = 10000, seed: int = 0, K: int = 6) -> dict:
    """Uniform logging of one action per replication; Bernoulli losses with known means.

    The imputed vector is a deliberately biased herded table from an independent
    pilot log, so only the inverse-propensity correction can remove its bias.
    """
    rng = seeding.stream(seed, 500)
    truth = rng.uniform(0.1, 0.9, size=K)
    pilot = rng.binomial(1, truth, size=(3, K)).mean(axis=0)
    imputed = np.clip(pilot + 0.25, 0.0, 1.0)
    propensity = 1.0 / K
    ests = np.empty((reps, K))
    draw = seeding.stream(seed, 501)
    actions = draw.integers(0, K, size=reps)
    outcomes = draw.random(reps) < truth[actions]
    for r in range(reps):
        ests[r] = doubly_robust(imputed, int(actions[r]), float(outcomes[r]), propensity)
    mean = ests.mean(axis=0)
    se = ests.std(axis=0, ddof=1) / np.sqrt(reps)
    return {"truth": truth, "imputed": imputed, "mean": mean, "se": se,
            "z": np.abs(mean - truth) / se, "herded_z": np.abs(imputed - truth) / se}


def check_dr(reps: int = 10000, seed: int = 0, z: float = 4.0) -> OracleResult:
    bench = dr_bench(reps, seed)
    worst = float(bench["z"].max())
    return OracleResult("doubly robust estimate unbiased (Monte Carlo)", worst < z, worst, z,
                        f"({reps} replications, max |z|)")


def run_all(seed: int = 0) -> list[OracleResult]:
    return [
        check_kkt(seed=seed),
        check_batch(seed=seed),
        check_reductions(seed=seed),
        check_phi_rank(seed=seed),
        check_unbiased(seed=seed),
        check_dr(seed=seed),
    ]
