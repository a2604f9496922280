"""Benchmark: compiled extension vs pure-Python fallback.

Times the dense kernels that dominate a calibration run, and one full
default-config calibration per backend. Run both backends from a single
process is not possible (the backend is chosen at import), so this script
re-executes itself with LORANK_PURE_PYTHON=1 for the fallback half.

Usage: python benchmarks/bench_kernels.py
"""
import os
import subprocess
import sys
import time
from array import array

sizes = (32, 64, 128, 256)
PURE_SIZE_CAP = 128  # pure-Python matmul above this is pointlessly slow


def bench_matmul(kernels, n, repeats=5):
    import random

    rnd = random.Random(1234)
    a = array("d", (rnd.uniform(-1, 1) for _ in range(n * n)))
    b = array("d", (rnd.uniform(-1, 1) for _ in range(n * n)))
    out = array("d", bytes(8 * n * n))
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        kernels.matmul(a, b, out, n, n, n)
        best = min(best, time.perf_counter() - t0)
    flops = 2.0 * n ** 3
    return best, flops / best / 1e6


def bench_calibration():
    from lorank.cli import RunConfig, run_calibration

    cfg = RunConfig()
    cfg.n_batches = 4
    t0 = time.perf_counter()
    run_calibration(cfg)
    return time.perf_counter() - t0


def run_backend():
    from lorank.backend import BACKEND, kernels

    print(f"backend: {BACKEND}")
    print(f"{'n':>6} {'best_s':>12} {'Mflop/s':>12}")
    for n in sizes:
        if BACKEND == "python" and n > PURE_SIZE_CAP:
            print(f"{n:>6} {'(skipped)':>12}")
            continue
        best, mflops = bench_matmul(kernels, n)
        print(f"{n:>6} {best:>12.6f} {mflops:>12.1f}")
    sys.stderr.write("timing default calibration (4 batches)...\n")
    elapsed = bench_calibration()
    print(f"calibration (4 batches, default config): {elapsed:.3f} s")


def main():
    if os.environ.get("_LORANK_BENCH_CHILD"):
        run_backend()
        return
    run_backend()
    print()
    sys.stdout.flush()
    env = dict(os.environ)
    env["LORANK_PURE_PYTHON"] = "1"
    env["_LORANK_BENCH_CHILD"] = "1"
    subprocess.run([sys.executable, os.path.abspath(__file__)], env=env, check=True)


if __name__ == "__main__":
    main()
