"""NumPy reference implementation of the per-step kernels.

Used when the compiled extension is unavailable, and as the comparison
baseline in ``benchmarks/bench_kernels.py``.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular


def rank1_update(m: np.ndarray, u: np.ndarray, v: np.ndarray, scale: float = 1.0) -> None:
    if m.shape != (u.shape[0], v.shape[0]):
        raise ValueError("rank1_update: shape mismatch")
    m += scale * np.outer(u, v)


def accumulate(ctc_a, ptp_a, ctc, ptp, ctp, ctl_a, ptl_a, c, p, loss, a) -> None:
    """In-place rank-1 accumulation of one (context, post hoc, loss) triple."""
    cc = np.outer(c, c)
    pp = np.outer(p, p)
    ctc_a[a] += cc
    ctc += cc
    ptp_a[a] += pp
    ptp += pp
    ctp += np.outer(c, p)
    ctl_a[a] += c * loss
    ptl_a[a] += p * loss


def accumulate_context(ctc_a, ctc, ctl_a, c, loss, a) -> None:
    cc = np.outer(c, c)
    ctc_a[a] += cc
    ctc += cc
    ctl_a[a] += c * loss


def lcb_scan(chol, theta, c, alpha, width_scale, out) -> int:
    """Lower confidence bound of every action from Cholesky factors of the precisions.

    ``chol[a]`` is the lower factor L of A_a with covariance ``width_scale * A_a^{-1}``.
    Writes the bounds into ``out`` and returns the first index of the minimum.
    """
    k, d, _ = chol.shape
    if theta.shape != (k, d) or c.shape != (d,) or out.shape != (k,):
        raise ValueError("lcb_scan: shape mismatch")
    for a in range(k):
        y = solve_triangular(chol[a], c, lower=True, check_finite=False)
        out[a] = theta[a] @ c - alpha * np.sqrt(width_scale * (y @ y))
    return int(np.argmin(out))
