"""The numba and numpy forms of every hot kernel must agree."""
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from amisec import _accel, kernels
from amisec.localization import PsoConfig, _swarm_start

finite = st.floats(-5, 5, allow_nan=False)


@given(arrays(float, (5, 3), elements=finite), arrays(float, (4, 3), elements=finite),
       st.floats(0.1, 10))
def test_rbf_gram_paths_agree(X, Y, sigma):
    np.testing.assert_allclose(kernels.rbf_gram_jit(X, Y, sigma), kernels.rbf_gram_numpy(X, Y, sigma),
                               rtol=1e-12, atol=1e-15)


@given(arrays(float, (5, 2), elements=finite), st.integers(1, 4))
def test_poly_gram_paths_agree(X, p):
    np.testing.assert_allclose(kernels.poly_gram_jit(X, X, float(p)),
                               kernels.poly_gram_numpy(X, X, float(p)), rtol=1e-12, atol=1e-12)


@given(arrays(float, 8, elements=st.floats(-2, 2)), st.sampled_from([0.2, 0.25, 0.5, 1.0]))
def test_projection_paths_agree(v, C):
    a = kernels.project_capped_simplex_jit(v.copy(), C)
    b = kernels.project_capped_simplex_numpy(v.copy(), C)
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert abs(a.sum() - 1) < 1e-9
    assert a.min() >= 0 and a.max() <= C + 1e-12


@pytest.mark.parametrize("seed", range(3))
def test_smo_paths_agree(seed):
    X = np.random.default_rng(seed).standard_normal((80, 3))
    K = kernels.rbf_gram_numpy(X, X, 6.0)
    C = 1 / 8.0
    a1 = np.zeros(80)
    a1[:8] = C
    a2 = a1.copy()
    g1, it1, ok1 = kernels.smo_solve_jit(K, C, a1, 1e-10, 80000)
    g2, it2, ok2 = kernels.smo_solve_numpy(K, C, a2, 1e-10, 80000)
    assert ok1 and ok2
    np.testing.assert_allclose(a1, a2, atol=1e-9)
    np.testing.assert_allclose(g1, g2, atol=1e-9)


def _nll_case(seed):
    gen = np.random.default_rng(seed)
    P = gen.uniform(0, 100, (50, 3))
    ax, ay = gen.uniform(0, 100, 6), gen.uniform(0, 100, 6)
    psi = gen.normal(-50, 10, 6)
    wts = np.full(6, 1 / 288.0)
    return P, ax, ay, psi, wts


def test_nll_paths_agree():
    P, ax, ay, psi, wts = _nll_case(0)
    np.testing.assert_allclose(kernels.nll_batch_jit(P, ax, ay, psi, 2.93, wts, 0.1),
                               kernels.nll_batch_numpy(P, ax, ay, psi, 2.93, wts, 0.1), rtol=1e-12)


def test_pso_paths_agree():
    _, ax, ay, psi, wts = _nll_case(1)
    cfg = PsoConfig()
    lo = np.array([0.0, 0.0, -60.0])
    hi = np.array([100.0, 100.0, 60.0])
    x, v, r1, r2, vmax = _swarm_start(np.random.default_rng(1), lo, hi, cfg)
    args = (r1, r2, lo, hi, vmax, cfg.inertia, cfg.c1, cfg.c2, cfg.tolerance, cfg.patience,
            ax, ay, psi, 2.93, wts, 0.1)
    b1, v1, _ = kernels.pso_nll_jit(x.copy(), v.copy(), *args)
    b2, v2, _ = kernels.pso_nll_numpy(x.copy(), v.copy(), *args)
    # values agree to rounding; the argmin of a smooth bowl only to ~sqrt(eps)
    assert v1 == pytest.approx(v2, rel=1e-9)
    np.testing.assert_allclose(b1, b2, rtol=0, atol=1e-5)


def test_public_names_follow_the_switch():
    want = kernels.rbf_gram_jit if _accel.USE_NUMBA else kernels.rbf_gram_numpy
    assert kernels.rbf_gram is want


def test_numpy_fallback_in_fresh_process():
    code = ("from amisec import _accel, kernels, ocsvm; import numpy as np; "
            "assert not _accel.USE_NUMBA; assert kernels.smo_solve is kernels.smo_solve_numpy; "
            "m = ocsvm.train(np.random.default_rng(0).standard_normal((50, 2)), 0.1); "
            "print(repr(m.rho))")
    env = dict(os.environ, AMISEC_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    from amisec import ocsvm
    here = ocsvm.train(np.random.default_rng(0).standard_normal((50, 2)), 0.1).rho
    assert float(out.stdout) == pytest.approx(here, abs=1e-9)
