"""Compare the numba and pure-numpy backends on particle matvecs.

Usage::

    python3 benchmarks/bench_backends.py --n-list 8000,32000 --repeat 3

The numpy backend is what runs when ``SVDKIFMM_BACKEND=numpy`` is set.
"""
import argparse
import time

import numpy as np

from svdkifmm import _accel
from svdkifmm.engine import plan_particles
from svdkifmm.geometry import cube_points
from svdkifmm.oracle import relative_l2


def time_backend(name, x, q, repeat):
    _accel.set_backend(name)
    t0 = time.perf_counter()
    plan = plan_particles(x)
    setup = time.perf_counter() - t0
    out = plan.apply(q)  # warm-up, includes JIT compilation for numba
    phases = min((plan.apply_timed(q)[1] for _ in range(repeat)), key=lambda t: t["total"])
    return setup, phases, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-list", default="8000,32000")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    print(f"{'N':>8} {'backend':>8} {'setup':>8} {'upward':>8} {'near':>8} {'total':>8} speedup")
    for n in (int(v) for v in args.n_list.split(",")):
        x = cube_points(n, seed=args.seed)
        q = np.random.default_rng(args.seed).standard_normal(n)
        res = {b: time_backend(b, x, q, args.repeat) for b in ("numpy", "numba")}
        for b, (setup, ph, _) in res.items():
            speed = res["numpy"][1]["total"] / ph["total"]
            print(f"{n:>8} {b:>8} {setup:8.3f} {ph['upward']:8.3f} {ph['near']:8.3f} "
                  f"{ph['total']:8.3f} {speed:6.2f}x")
        diff = relative_l2(res["numba"][2], res["numpy"][2])
        print(f"{'':>8} relative difference between backends: {diff:.1e}")


if __name__ == "__main__":
    main()
