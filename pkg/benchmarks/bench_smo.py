#!/usr/bin/env python3
"""Benchmark the working-set QP kernel: numba path vs numpy fallback.

Builds tube-regression duals of increasing size from synthetic matrix
samples, solves each with both kernel implementations, checks that the
iterates agree, and prints per-solve timings with the speedup.

Run:  python3 benchmarks/bench_smo.py
The numba path is skipped when numba is unavailable or disabled via
ROBMATREG_DISABLE_NUMBA=1.
"""

import time

import numpy as np

from robmatreg import _kernels, data_bench, qp_smo

SIZES = (50, 100, 200, 400)
BOX = 1e3
EPS = 1e-2
TOL = 1e-6
REPEATS = 3


def build_qp(n, seed):
    p = q = 24
    w_true = data_bench.generate_shape("square", p)
    spec = data_bench.NoiseSpec(label_noise_scale=0.1, seed=seed)
    samples = data_bench.generate_synthetic(w_true, 0.0, n, spec)
    xv, y = qp_smo.stack_samples(samples)
    return xv @ xv.T, EPS - y, EPS + y


def run_kernel(kernel, gram, lp, ln, cap=5_000_000):
    n = gram.shape[0]
    beta = np.zeros(n)
    grad = np.zeros(n)
    start = time.perf_counter()
    steps, gap, ok = kernel(gram, lp, ln, BOX, TOL, cap, beta, grad,
                            np.zeros(1), False)
    elapsed = time.perf_counter() - start
    return beta, steps, gap, ok, elapsed


def main():
    print(f"numba path available: {_kernels.NUMBA_ENABLED}")
    kernels = [("numpy", _kernels._smo_pair_loop_numpy)]
    if _kernels.NUMBA_ENABLED:
        kernels.append(("numba", _kernels.smo_pair_loop))
        # warm the JIT before timing
        g, lp, ln = build_qp(20, seed=999)
        run_kernel(_kernels.smo_pair_loop, g, lp, ln)

    header = f"{'n':>6} {'steps':>9}"
    for name, _ in kernels:
        header += f" {name + ' [s]':>12}"
    if len(kernels) == 2:
        header += f" {'speedup':>9}"
    print(header)

    for n in SIZES:
        gram, lp, ln = build_qp(n, seed=n)
        times = {}
        betas = {}
        steps_by = {}
        for name, kernel in kernels:
            best = np.inf
            for _ in range(REPEATS):
                beta, steps, gap, ok, elapsed = run_kernel(kernel, gram, lp, ln)
                best = min(best, elapsed)
            if not ok:
                raise SystemExit(f"{name} kernel did not converge at n={n}")
            times[name] = best
            betas[name] = beta
            steps_by[name] = steps
        if len(kernels) == 2:
            if not np.array_equal(betas["numpy"], betas["numba"]):
                drift = np.abs(betas["numpy"] - betas["numba"]).max()
                raise SystemExit(f"kernel paths disagree at n={n}: {drift:.3e}")
            if steps_by["numpy"] != steps_by["numba"]:
                raise SystemExit(f"kernel paths took different step counts at n={n}")
        row = f"{n:>6} {steps_by[kernels[0][0]]:>9}"
        for name, _ in kernels:
            row += f" {times[name]:>12.4f}"
        if len(kernels) == 2:
            row += f" {times['numpy'] / times['numba']:>8.1f}x"
        print(row)


if __name__ == "__main__":
    main()
