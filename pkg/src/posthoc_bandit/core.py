"""Sufficient statistics, the two linear learners, and LinUCB action selection.

Two learners share one set of accumulated cross-products:

* context-only ridge regression per action,
* post-hoc-augmented regression, where every round (whichever action was
  played) informs every action's weights through the transformation matrix
  ``H = (P'P)^{-1} P'C`` linking post hoc weights to context weights.

All Gram matrices start at ``ridge_lambda * I`` so every solve is defined
from the first round.
"""
from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_solve, cholesky

from . import kernels


class Mode(str, enum.Enum):
    CONTEXT_ONLY = "context-only"
    POSTHOC_AUGMENTED = "posthoc"

    @property
    def width_scale(self) -> float:
        # the augmented covariance bound carries a factor 2
        return 2.0 if self is Mode.POSTHOC_AUGMENTED else 1.0


@dataclass(frozen=True)
class BanditConfig:
    num_actions: int
    context_dim: int
    posthoc_dim: int
    alpha: float = 0.1
    ridge_lambda: float = 1.0

    def __post_init__(self):
        if self.num_actions < 2:
            raise ValueError(f"num_actions must be >= 2, got {self.num_actions}")
        if self.context_dim < 1 or self.posthoc_dim < 1:
            raise ValueError("context_dim and posthoc_dim must be >= 1")
        if not self.ridge_lambda > 0:
            raise ValueError(f"ridge_lambda must be > 0, got {self.ridge_lambda}")
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")


@dataclass
class Interaction:
    """One logged round: context, played action, its loss, and what came after."""

    context: np.ndarray
    action: int
    loss: float
    posthoc: Optional[np.ndarray] = None
    full_loss: Optional[np.ndarray] = None
    propensity: Optional[float] = None
    group_key: Optional[str] = None
    step: Optional[int] = None

    def __post_init__(self):
        self.context = np.asarray(self.context, dtype=np.float64)
        self.action = int(self.action)
        self.loss = float(self.loss)
        if self.context.ndim != 1:
            raise ValueError("context must be a vector")
        if self.action < 0:
            raise ValueError(f"action must be nonnegative, got {self.action}")
        if self.posthoc is not None:
            self.posthoc = np.asarray(self.posthoc, dtype=np.float64)
            if self.posthoc.ndim != 1:
                raise ValueError("posthoc must be a vector")
        if self.full_loss is not None:
            self.full_loss = np.asarray(self.full_loss, dtype=np.float64)
            if self.action >= self.full_loss.shape[0]:
                raise ValueError("action out of range of full_loss")
            if self.full_loss[self.action] != self.loss:
                raise ValueError(
                    f"full_loss[{self.action}]={self.full_loss[self.action]!r} disagrees with loss={self.loss!r}"
                )
        if self.propensity is not None:
            self.propensity = float(self.propensity)
            if not 0.0 < self.propensity <= 1.0:
                raise ValueError(f"propensity must lie in (0, 1], got {self.propensity}")


@dataclass
class SufficientStats:
    """Ridge-initialised cross-product accumulators.

    Per-action blocks: ``ctc_a[a] = lam*I + C_a'C_a``, ``ptp_a[a] = lam*I + P_a'P_a``,
    ``ctl_a[a] = C_a'L_a``, ``ptl_a[a] = P_a'L_a``. Global blocks ``ctc``, ``ptp``
    and ``ctp`` accumulate over every round regardless of the action.
    """

    ridge_lambda: float
    ctc_a: np.ndarray
    ptp_a: np.ndarray
    ctc: np.ndarray
    ptp: np.ndarray
    ctp: np.ndarray
    ctl_a: np.ndarray
    ptl_a: np.ndarray
    counts: np.ndarray
    matched_ridge: bool = False

    @classmethod
    def fresh(cls, config: BanditConfig, matched_ridge: bool = False) -> "SufficientStats":
        """Empty statistics.

        With ``matched_ridge`` the cross block also starts at ``lam*I`` (needs
        ``posthoc_dim == context_dim``), so that a post hoc stream identical to
        the context stream gives exactly ``H = I``.
        """
        k, dc, dp, lam = config.num_actions, config.context_dim, config.posthoc_dim, config.ridge_lambda
        ctp = np.zeros((dc, dp))
        if matched_ridge:
            if dc != dp:
                raise ValueError("matched_ridge requires posthoc_dim == context_dim")
            ctp += lam * np.eye(dc)
        return cls(
            ridge_lambda=lam,
            ctc_a=np.tile(lam * np.eye(dc), (k, 1, 1)),
            ptp_a=np.tile(lam * np.eye(dp), (k, 1, 1)),
            ctc=lam * np.eye(dc),
            ptp=lam * np.eye(dp),
            ctp=ctp,
            ctl_a=np.zeros((k, dc)),
            ptl_a=np.zeros((k, dp)),
            counts=np.zeros(k, dtype=np.int64),
            matched_ridge=matched_ridge,
        )

    @property
    def num_actions(self) -> int:
        return self.ctc_a.shape[0]

    @property
    def context_dim(self) -> int:
        return self.ctc.shape[0]

    @property
    def posthoc_dim(self) -> int:
        return self.ptp.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def copy(self) -> "SufficientStats":
        return SufficientStats(
            ridge_lambda=self.ridge_lambda,
            ctc_a=self.ctc_a.copy(),
            ptp_a=self.ptp_a.copy(),
            ctc=self.ctc.copy(),
            ptp=self.ptp.copy(),
            ctp=self.ctp.copy(),
            ctl_a=self.ctl_a.copy(),
            ptl_a=self.ptl_a.copy(),
            counts=self.counts.copy(),
            matched_ridge=self.matched_ridge,
        )


def observe(stats: SufficientStats, x: Interaction) -> SufficientStats:
    """Accumulate one interaction into ``stats`` in place and return it.

    An interaction without post hoc context only touches the context blocks.
    """
    if not 0 <= x.action < stats.num_actions:
        raise ValueError(f"action {x.action} out of range [0, {stats.num_actions})")
    if x.context.shape != (stats.context_dim,):
        raise ValueError(f"context has shape {x.context.shape}, expected ({stats.context_dim},)")
    c = np.ascontiguousarray(x.context, dtype=np.float64)
    if x.posthoc is None:
        kernels.accumulate_context(stats.ctc_a, stats.ctc, stats.ctl_a, c, x.loss, x.action)
    else:
        if x.posthoc.shape != (stats.posthoc_dim,):
            raise ValueError(f"posthoc has shape {x.posthoc.shape}, expected ({stats.posthoc_dim},)")
        p = np.ascontiguousarray(x.posthoc, dtype=np.float64)
        kernels.accumulate(
            stats.ctc_a, stats.ptp_a, stats.ctc, stats.ptp, stats.ctp,
            stats.ctl_a, stats.ptl_a, c, p, x.loss, x.action,
        )
    stats.counts[x.action] += 1
    return stats


def _chol(a: np.ndarray) -> np.ndarray:
    return cholesky(a, lower=True, check_finite=False)


def fit_context_only(stats: SufficientStats, a: int) -> np.ndarray:
    """Ridge regression of action ``a``'s losses on the contexts where it was played."""
    return cho_solve((_chol(stats.ctc_a[a]), True), stats.ctl_a[a], check_finite=False)


def transform_matrix(stats: SufficientStats) -> np.ndarray:
    """``H = (P'P)^{-1} (C'P)'``, shape (d_p, d_c): post hoc weights implied by context weights."""
    return cho_solve((_chol(stats.ptp), True), stats.ctp.T, check_finite=False)


def _augmented_precision(stats: SufficientStats, a: int, H: np.ndarray) -> np.ndarray:
    m = H.T @ stats.ptp_a[a] @ H
    return stats.ctc_a[a] + 0.5 * (m + m.T)


def fit_posthoc_augmented(stats: SufficientStats, a: int, H: Optional[np.ndarray] = None) -> np.ndarray:
    """Context weights of action ``a`` under the hard constraint ``phi_a = H theta_a``.

    Solves ``[C_a'C_a + H'P_a'P_a H] theta = C_a'L_a + H'P_a'L_a``.
    """
    if H is None:
        H = transform_matrix(stats)
    rhs = stats.ctl_a[a] + H.T @ stats.ptl_a[a]
    return cho_solve((_chol(_augmented_precision(stats, a, H)), True), rhs, check_finite=False)


def fit_full_feedback(stats: SufficientStats, phi: np.ndarray) -> np.ndarray:
    """Context weights regressed on losses imputed by a known post hoc model for every round.

    ``theta = (C'C)^{-1} C'P phi``; ``phi`` may be a vector or a (d_p, K) matrix.
    """
    return cho_solve((_chol(stats.ctc), True), stats.ctp @ phi, check_finite=False)


def covariance(stats: SufficientStats, a: int, mode: Mode, H: Optional[np.ndarray] = None) -> np.ndarray:
    """Estimator covariance used for the confidence width.

    Context-only: ``(C_a'C_a)^{-1}``. Augmented: ``2 (C_a'C_a + H'P_a'P_a H)^{-1}``.
    """
    mode = Mode(mode)
    if mode is Mode.CONTEXT_ONLY:
        precision = stats.ctc_a[a]
    else:
        if H is None:
            H = transform_matrix(stats)
        precision = _augmented_precision(stats, a, H)
    d = precision.shape[0]
    inv = cho_solve((_chol(precision), True), np.eye(d), check_finite=False)
    inv = 0.5 * (inv + inv.T)
    return mode.width_scale * inv


def lcb(theta: np.ndarray, sigma: np.ndarray, c: np.ndarray, alpha: float,
        diagnostics: Optional[Counter] = None) -> float:
    """``theta'c - alpha * sqrt(c' sigma c)``; a negative radicand is clamped to zero and counted."""
    q = float(c @ sigma @ c)
    if q < 0.0:
        if diagnostics is not None:
            diagnostics["clamped_radicand"] += 1
        q = 0.0
    return float(theta @ c) - alpha * float(np.sqrt(q))


@dataclass
class LearnerModel:
    """Fitted weights plus the Cholesky factors of the per-action precision matrices."""

    theta: np.ndarray
    mode: Mode
    chol: np.ndarray
    phi: Optional[np.ndarray] = None
    H: Optional[np.ndarray] = None

    @property
    def num_actions(self) -> int:
        return self.theta.shape[0]

    def covariance(self, a: int) -> np.ndarray:
        d = self.chol.shape[1]
        inv = cho_solve((self.chol[a], True), np.eye(d), check_finite=False)
        return self.mode.width_scale * 0.5 * (inv + inv.T)

    def predict(self, contexts: np.ndarray) -> np.ndarray:
        return np.asarray(contexts) @ self.theta.T


def fit_model(stats: SufficientStats, mode: Mode, previous: Optional[LearnerModel] = None,
              actions: Optional[list[int]] = None) -> LearnerModel:
    """Fit every action's weights (or only ``actions``, reusing ``previous``).

    Partial refits are only meaningful in context-only mode, where an
    observation of action ``a`` leaves every other action's solution unchanged.
    """
    mode = Mode(mode)
    k, dc = stats.num_actions, stats.context_dim
    if previous is not None and actions is not None and mode is Mode.CONTEXT_ONLY:
        theta, chol = previous.theta.copy(), previous.chol.copy()
        todo = actions
    else:
        theta = np.empty((k, dc))
        chol = np.empty((k, dc, dc))
        todo = range(k)
    H = phi = None
    if mode is Mode.POSTHOC_AUGMENTED:
        H = transform_matrix(stats)
        rhs = stats.ctl_a + stats.ptl_a @ H
        for a in todo:
            chol[a] = _chol(_augmented_precision(stats, a, H))
            theta[a] = cho_solve((chol[a], True), rhs[a], check_finite=False)
        phi = theta @ H.T
    else:
        for a in todo:
            chol[a] = _chol(stats.ctc_a[a])
            theta[a] = cho_solve((chol[a], True), stats.ctl_a[a], check_finite=False)
    return LearnerModel(theta=theta, mode=mode, chol=chol, phi=phi, H=H)


def lcb_values(model: LearnerModel, c: np.ndarray, alpha: float) -> tuple[np.ndarray, int]:
    out = np.empty(model.num_actions)
    best = kernels.lcb_scan(model.chol, model.theta, np.ascontiguousarray(c, dtype=np.float64),
                            float(alpha), model.mode.width_scale, out)
    return out, int(best)


def select_action(model: LearnerModel, c: np.ndarray, alpha: float) -> int:
    """Action with the lowest lower confidence bound; ties go to the lowest index."""
    return lcb_values(model, c, alpha)[1]


def select_uniform(rng: np.random.Generator, num_actions: int) -> int:
    if num_actions < 1:
        raise ValueError("num_actions must be >= 1")
    return int(rng.integers(num_actions))


@dataclass
class Learner:
    """Stateful wrapper: accumulate interactions and refit lazily before each use.

    Single writer; callers serialise ``update`` calls.
    """

    config: BanditConfig
    mode: Mode
    stats: SufficientStats = field(init=False)
    diagnostics: Counter = field(default_factory=Counter, init=False)
    _model: Optional[LearnerModel] = field(default=None, init=False, repr=False)
    _stale: list = field(default_factory=list, init=False, repr=False)

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.stats = SufficientStats.fresh(self.config)

    @property
    def model(self) -> LearnerModel:
        if self._model is None:
            self._model = fit_model(self.stats, self.mode)
        elif self._stale:
            self._model = fit_model(self.stats, self.mode, previous=self._model, actions=self._stale)
        self._stale = []
        return self._model

    def update(self, x: Interaction) -> None:
        if self.mode is Mode.POSTHOC_AUGMENTED and x.posthoc is None:
            raise ValueError("post-hoc-augmented learner needs interactions with posthoc context")
        observe(self.stats, x)
        if self.mode is Mode.CONTEXT_ONLY and self._model is not None:
            self._stale.append(x.action)
        else:
            self._model = None

    def select(self, c: np.ndarray, alpha: Optional[float] = None) -> int:
        return select_action(self.model, c, self.config.alpha if alpha is None else alpha)
