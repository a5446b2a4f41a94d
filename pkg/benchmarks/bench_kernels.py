"""Time each hot kernel through its numba and numpy implementations.

    python3 benchmarks/bench_kernels.py [--repeat N]

The numba column is meaningful only when numba is active (AMISEC_DISABLE_NUMBA
unset); otherwise the ``*_jit`` functions are plain Python loops. Compilation
happens in a warm-up call and is excluded from the timings. Results of the
two paths are compared as well, so a speedup never hides a divergence.
"""
import argparse
import time

import numpy as np

from amisec import _accel, kernels
from amisec.localization import PsoConfig, _swarm_start


def best_of(fn, repeat):
    fn()  # warm-up, includes JIT compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    gen = np.random.default_rng(0)
    X = gen.standard_normal((400, 4))
    K = kernels.rbf_gram_numpy(X, X, 8.0)
    C = 1.0 / (0.1 * len(X))

    def smo(impl):
        def run():
            alpha = np.zeros(len(X))
            alpha[:40] = C
            return impl(K, C, alpha, 1e-9, 400 * 1000)[0]
        return run

    P = gen.uniform(0, 100, (4000, 3))
    ax, ay = gen.uniform(0, 100, 8), gen.uniform(0, 100, 8)
    psi = gen.normal(-50, 10, 8)
    wts = np.full(8, 1 / 288.0)

    cfg = PsoConfig()
    lo = np.array([0.0, 0.0, -60.0])
    hi = np.array([100.0, 100.0, 60.0])
    x, v, r1, r2, vmax = _swarm_start(np.random.default_rng(1), lo, hi, cfg)

    def pso(impl):
        return lambda: impl(x.copy(), v.copy(), r1, r2, lo, hi, vmax, cfg.inertia, cfg.c1,
                            cfg.c2, cfg.tolerance, cfg.patience, ax, ay, psi, 2.93, wts, 0.1)[1]

    return [
        ("rbf_gram 400x400", lambda: kernels.rbf_gram_jit(X, X, 8.0),
         lambda: kernels.rbf_gram_numpy(X, X, 8.0)),
        ("smo_solve n=400", smo(kernels.smo_solve_jit), smo(kernels.smo_solve_numpy)),
        ("nll_batch 4000 points", lambda: kernels.nll_batch_jit(P, ax, ay, psi, 2.93, wts, 0.1),
         lambda: kernels.nll_batch_numpy(P, ax, ay, psi, 2.93, wts, 0.1)),
        ("pso_nll swarm 40", pso(kernels.pso_nll_jit), pso(kernels.pso_nll_numpy)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"numba active: {_accel.USE_NUMBA}")
    print(f"{'kernel':<24}{'numba s':>12}{'numpy s':>12}{'speedup':>10}  agree")
    for name, jit_fn, np_fn in cases():
        tj = best_of(jit_fn, args.repeat)
        tn = best_of(np_fn, args.repeat)
        agree = np.allclose(jit_fn(), np_fn(), rtol=1e-9, atol=1e-12)
        print(f"{name:<24}{tj:>12.5f}{tn:>12.5f}{tn / tj:>10.1f}  {agree}")


if __name__ == "__main__":
    main()
