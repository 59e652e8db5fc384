"""Numba vs numpy timings for the inner-loop kernels and a full PGD run.

Usage: python benchmarks/bench_kernels.py [--size 64] [--labels 4] [--repeat 5]

Each kernel is called from both backend modules on identical inputs; the
outputs are compared before timing so a speedup is never reported for a
kernel that disagrees. The end-to-end row runs PGD once per backend in a
subprocess, since the backend is fixed at import time.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from pgdcrf import _kernels_nb as nb
from pgdcrf import _kernels_np as npk
from pgdcrf.lattice import build_feature_lattice
from pgdcrf.synth import random_instance


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(size, labels, seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, size, size, labels, radius=4, bilateral_radius=1, theta_p=4.0, theta_c=40.0)
    H, W = inst.shape
    N, L = inst.n_pixels, inst.n_labels
    q = rng.dirichlet(np.ones(L), size=N)
    u = rng.normal(size=(N, L))
    lat = build_feature_lattice(inst.features.values, 1)
    sp, bl = inst.spatial.taps, inst.bilateral.taps
    qt = q + rng.normal(0, 0.3, size=q.shape)
    proj = npk.project_rows(qt, 0.01)
    order = np.arange(N, dtype=np.int64)
    q3, u3 = q.reshape(H, W, L), u.reshape(H, W, L)
    return {
        "spatial_apply": lambda m: m.spatial_apply(q3, sp),
        "spatial_tap_grad": lambda m: m.spatial_tap_grad(u3, q3, 4),
        "pair_apply": lambda m: m.pair_apply(lat.indptr, lat.indices, lat.tap, q, bl),
        "pair_tap_grad": lambda m: m.pair_tap_grad(lat.indptr, lat.indices, lat.tap, u, q, bl.shape[2]),
        "project_rows": lambda m: m.project_rows(qt, 0.01),
        "project_rows_vjp": lambda m: m.project_rows_vjp(qt, proj[1], proj[2], 0.01, u),
        "round_sequential": lambda m: m.round_sequential(
            inst.unary.values, q, sp, H, W, lat.indptr, lat.indices, lat.tap, bl, order),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=1e-12)


PGD_SNIPPET = """
import time, numpy as np
from pgdcrf.synth import random_instance
from pgdcrf.inference import InferenceConfig, run_pgd, round_sequential
from pgdcrf.kernels import BACKEND
rng = np.random.default_rng({seed})
inst = random_instance(rng, {size}, {size}, {labels}, radius=4, bilateral_radius=1, theta_p=4.0, theta_c=40.0)
inst.lattice
cfg = InferenceConfig(iterations=10, step=0.5, alpha=0.0, safe_step=True)
run_pgd(inst, inst.unary.scores, InferenceConfig(iterations=1))  # warm-up / jit
t0 = time.perf_counter()
tr = run_pgd(inst, inst.unary.scores, cfg)
round_sequential(inst, tr.final)
print(BACKEND, time.perf_counter() - t0, repr(tr.energies[-1]))
"""


def end_to_end(size, labels, seed):
    out = {}
    code = PGD_SNIPPET.format(seed=seed, size=size, labels=labels)
    for flag in ("0", "1"):
        env = dict(os.environ, PGDCRF_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        backend, secs, energy = res.stdout.split()
        out[backend] = (float(secs), float(energy))
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--labels", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    print(f"grid {args.size}x{args.size}, L={args.labels}, spatial 9x9, bilateral radius 1")
    print(f"{'kernel':20s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, call in kernel_cases(args.size, args.labels, args.seed).items():
        ref, fast = call(npk), call(nb)  # also triggers compilation
        if not same(ref, fast):
            print(f"{name:20s} MISMATCH between backends")
            continue
        t_np = best_of(lambda: call(npk), args.repeat)
        t_nb = best_of(lambda: call(nb), args.repeat)
        print(f"{name:20s} {t_np * 1e3:10.2f} {t_nb * 1e3:10.2f} {t_np / t_nb:8.1f}x")

    e2e = end_to_end(args.size, args.labels, args.seed)
    (t_np, e_np), (t_nb, e_nb) = e2e["numpy"], e2e["numba"]
    print(f"{'pgd T=10 + round':20s} {t_np * 1e3:10.2f} {t_nb * 1e3:10.2f} {t_np / t_nb:8.1f}x")
    print(f"final energy numpy={e_np!r} numba={e_nb!r}")


if __name__ == "__main__":
    main()
