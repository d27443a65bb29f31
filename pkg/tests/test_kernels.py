import importlib

import numpy as np
import pytest

from posthoc_bandit import _kernels_py, kernels

try:
    _cy = importlib.import_module("posthoc_bandit._kernels")
except ImportError:  # extension not built
    _cy = None

BACKENDS = [_kernels_py] + ([_cy] if _cy is not None else [])


def _blocks(rng, K, dc, dp):
    def spd(d):
        m = rng.standard_normal((d, d))
        return m @ m.T + np.eye(d)

    return dict(
        ctc_a=np.stack([spd(dc) for _ in range(K)]), ptp_a=np.stack([spd(dp) for _ in range(K)]),
        ctc=spd(dc), ptp=spd(dp), ctp=rng.standard_normal((dc, dp)),
        ctl_a=rng.standard_normal((K, dc)), ptl_a=rng.standard_normal((K, dp)),
    )


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")


@pytest.mark.skipif(_cy is None, reason="extension not built")
def test_accumulate_parity():
    rng = np.random.default_rng(0)
    ref = _blocks(rng, 4, 7, 3)
    got = {k: v.copy() for k, v in ref.items()}
    for _ in range(20):
        c, p, loss, a = rng.standard_normal(7), rng.standard_normal(3), float(rng.standard_normal()), int(rng.integers(4))
        _kernels_py.accumulate(*ref.values(), c, p, loss, a)
        _cy.accumulate(*got.values(), c, p, loss, a)
        _kernels_py.accumulate_context(ref["ctc_a"], ref["ctc"], ref["ctl_a"], c, loss, a)
        _cy.accumulate_context(got["ctc_a"], got["ctc"], got["ctl_a"], c, loss, a)
    for k in ref:
        np.testing.assert_allclose(got[k], ref[k], rtol=0, atol=1e-12, err_msg=k)


@pytest.mark.parametrize("impl", BACKENDS)
def test_rank1_update(impl):
    m = np.zeros((2, 3))
    impl.rank1_update(m, np.array([1.0, 2.0]), np.array([1.0, 0.0, -1.0]), 2.0)
    np.testing.assert_array_equal(m, [[2, 0, -2], [4, 0, -4]])
    with pytest.raises(ValueError):
        impl.rank1_update(m, np.ones(3), np.ones(3), 1.0)


@pytest.mark.parametrize("impl", BACKENDS)
def test_lcb_scan_matches_explicit_inverse(impl):
    rng = np.random.default_rng(1)
    K, d = 5, 6
    A = _blocks(rng, K, d, 1)["ctc_a"]
    chol = np.linalg.cholesky(A)
    theta = rng.standard_normal((K, d))
    for _ in range(20):
        c = rng.standard_normal(d)
        out = np.empty(K)
        best = impl.lcb_scan(chol, theta, c, 0.3, 2.0, out)
        ref = [theta[a] @ c - 0.3 * np.sqrt(2.0 * c @ np.linalg.inv(A[a]) @ c) for a in range(K)]
        np.testing.assert_allclose(out, ref, rtol=0, atol=1e-10)
        assert best == int(np.argmin(ref))


@pytest.mark.parametrize("impl", BACKENDS)
def test_lcb_scan_ties_lowest_index(impl):
    chol = np.stack([np.eye(2)] * 3)
    theta = np.array([[1.0, 0.0], [0.5, 0.0], [0.5, 0.0]])
    out = np.empty(3)
    assert impl.lcb_scan(chol, theta, np.array([1.0, 0.0]), 0.0, 1.0, out) == 1
