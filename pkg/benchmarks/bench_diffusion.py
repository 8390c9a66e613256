"""Benchmark the thermal-diffusion sweep: compiled kernel vs numpy fallback.

Usage: python benchmarks/bench_diffusion.py [--sizes 64x64,160x120,320x240]
"""
import argparse
import time

import numpy as np

from coherentflow import _kernels_py
from coherentflow.diffusion import DiffusionConfig

try:
    from coherentflow import _kernels
except ImportError:
    _kernels = None


def scene_field(w, h, rng):
    vec = rng.normal(0.0, 0.1, size=(h, w, 2))
    vec[h // 4 : h // 2, :] = (1.0, 0.0)
    vec[3 * h // 5 : 4 * h // 5, :] = (-1.0, 0.0)
    return vec


def timeit(fn, repeats=3):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--sizes", default="64x64,160x120,320x240")
    parser.add_argument("--threads", default="1,2,4")
    args = parser.parse_args()
    sizes = [tuple(int(v) for v in s.split("x")) for s in args.sizes.split(",")]
    threads = [int(t) for t in args.threads.split(",")]

    cfg = DiffusionConfig()
    rng = np.random.default_rng(0)
    print(f"{'size':>10} {'backend':>10} {'threads':>7} {'seconds':>9} {'speedup':>8}")
    for w, h in sizes:
        size = f"{w}x{h}"
        vec = scene_field(w, h, rng)
        t_py, ref = timeit(
            lambda: _kernels_py.diffuse_sweep(
                vec, vec, cfg.k_p, cfg.k_f, cfg.theta_c, cfg.truncation_radius
            )
        )
        print(f"{size:>10} {'python':>10} {1:>7} {t_py:>9.3f} {'1.00':>8}")
        if _kernels is None:
            print("  (compiled kernel unavailable)")
            continue
        for nt in threads:
            t_c, out = timeit(
                lambda: _kernels.diffuse_sweep(
                    vec, vec, cfg.k_p, cfg.k_f, cfg.theta_c, cfg.truncation_radius, nt
                )
            )
            err = np.abs(out - ref).max()
            print(
                f"{size:>10} {'compiled':>10} {nt:>7} {t_c:>9.3f} {t_py / t_c:>8.2f}"
                + (f"   (max |diff| vs python: {err:.2e})" if nt == threads[0] else "")
            )


if __name__ == "__main__":
    main()
