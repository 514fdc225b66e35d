#!/usr/bin/env python3
"""Benchmark: compiled extension vs pure-numpy fallback on the hot path.

Times the inner kernels (FK + Jacobian, residual assembly, a full LM run)
and an end-to-end multi-start solve on identical inputs, then prints a
table with the speedup. Run from the repo root:

    python benchmarks/bench_backends.py [--scenes 25]
"""

import argparse
import time

import numpy as np

from armpose import CameraIntrinsics, load_bundled_model
from armpose import _core_py
from armpose.solver import SolverOptions, _bounds_full, _full_inits, _gated
from armpose.synth import SampleRanges, sample_scene
from armpose.util import substream

try:
    from armpose import _core
except ImportError:
    _core = None


def make_kernel(impl, model):
    return impl.KernelModel(model.rest, model.kp_chain, model.kp_njoints,
                            model.joint_axes, model.joint_pivots,
                            model.joint_parent, model.joint_topo)


def bench(fn, min_time=0.2):
    fn()  # warmup
    n, t0 = 0, time.perf_counter()
    while time.perf_counter() - t0 < min_time:
        fn()
        n += 1
    return (time.perf_counter() - t0) / n


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--scenes", type=int, default=25)
    args = ap.parse_args()

    model = load_bundled_model()
    intr = CameraIntrinsics(320.0, 320.0, 128.0, 128.0, 256, 256)
    intr4 = (intr.fx, intr.fy, intr.cx, intr.cy)
    lo, hi = _bounds_full(model)
    opts = SolverOptions(seed=11)

    scenes = []
    for i in range(args.scenes):
        pose, z, y = sample_scene(7, SampleRanges(), model, intr, index=i)
        rng = substream(99, i)
        noisy = y.points + rng.normal(0, 2.0, size=(17, 2))
        mask_idx = np.where(y.confidence >= 0.3)[0].astype(np.int32)
        inits = _full_inits(y, mask_idx, intr, model, opts, None)
        scenes.append((pose.as_params(), noisy, mask_idx, inits))

    impls = [("python", _core_py)]
    if _core is not None:
        impls.append(("compiled", _core))

    rows = []
    q = np.radians([25.0, -40.0, 60.0, 10.0])
    for name, impl in impls:
        km = make_kernel(impl, model)
        params, noisy, mask_idx, inits = scenes[0]

        t_fk = bench(lambda: km.fk_jac(q))
        t_rj = bench(lambda: km.residual_jacobian(0, params, noisy, mask_idx, intr4))
        t_lm = bench(lambda: km.lm_solve(0, inits[0], noisy, mask_idx, intr4,
                                         lo, hi, 200, 1e-10))

        def full_solve():
            for params0, ny, mi, ins in scenes:
                for p0 in ins:
                    km.lm_solve(0, p0, ny, mi, intr4, lo, hi, 400, 1e-8)

        t0 = time.perf_counter()
        full_solve()
        t_solve = (time.perf_counter() - t0) / args.scenes
        rows.append((name, t_fk, t_rj, t_lm, t_solve))

    print(f"{'backend':<10} {'fk_jac':>12} {'resid_jac':>12} "
          f"{'lm (200 it)':>12} {'solve/scene':>12}")
    for name, t_fk, t_rj, t_lm, t_solve in rows:
        print(f"{name:<10} {t_fk * 1e6:>10.1f}us {t_rj * 1e6:>10.1f}us "
              f"{t_lm * 1e3:>10.2f}ms {t_solve * 1e3:>10.2f}ms")
    if len(rows) == 2:
        py, cc = rows[0], rows[1]
        print("\nspeedup (python / compiled):")
        for label, i in (("fk_jac", 1), ("resid_jac", 2), ("lm", 3), ("solve", 4)):
            print(f"  {label:<10} {py[i] / cc[i]:6.1f}x")


if __name__ == "__main__":
    main()
