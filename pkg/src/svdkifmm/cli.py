"""
Command-line interface.

Subcommands: ``eval`` (particle potentials), ``solve`` (BEM solve on a
mesh), ``compress-stats`` (per-offset M2L compression table) and ``bench``
(scaling table). Exit codes: 0 success, 2 usage or configuration error,
3 solver did not converge.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import _accel
from .bem.mesh import BoundaryCondition, BoundaryConditionError, MeshError, load_bc_csv, load_mesh
from .surfaces import ConfigError

log = logging.getLogger("svdkifmm")

EXIT_OK, EXIT_USAGE, EXIT_NOT_CONVERGED = 0, 2, 3


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# input helpers

def read_points(path) -> np.ndarray:
    """``N`` on the first line, then ``x y z`` per line."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"points file {path} does not exist")
    with open(path) as fh:
        lines = [ln for ln in (raw.split("#", 1)[0].strip() for raw in fh) if ln]
    if not lines:
        raise UsageError(f"{path}: empty points file")
    try:
        n = int(lines[0])
    except ValueError:
        raise UsageError(f"{path}:1: expected the point count, got {lines[0]!r}") from None
    if len(lines) - 1 != n:
        raise UsageError(f"{path}: header says {n} points, found {len(lines) - 1}")
    try:
        pts = np.array([[float(v) for v in ln.split()] for ln in lines[1:]])
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None
    if n and pts.shape != (n, 3):
        raise UsageError(f"{path}: every point line needs exactly 3 coordinates")
    if n == 0:
        raise UsageError(f"{path}: no points")
    return pts


def read_vector(path, n: int | None = None, what: str = "values") -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"{what} file {path} does not exist")
    try:
        v = np.loadtxt(path, dtype=float, ndmin=1)
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None
    if v.ndim != 1:
        raise UsageError(f"{path}: expected one value per line")
    if n is not None and len(v) != n:
        raise UsageError(f"{path}: {len(v)} {what} for {n} points")
    return v


def write_vector(path, v) -> None:
    np.savetxt(path, np.asarray(v), fmt="%.17g")


def _threads(args) -> int | None:
    value = args.threads if args.threads is not None else os.environ.get("FMM_THREADS")
    if value in (None, ""):
        return None
    try:
        n = int(value)
    except ValueError:
        raise UsageError(f"thread count must be an integer, got {value!r}") from None
    if n < 1:
        raise UsageError("thread count must be >= 1")
    return n


def _config(args, **overrides):
    from .engine import FmmConfig

    kw = dict(p=args.p, s_max=args.smax, C1=args.c1, C2=args.c2, eps1=args.eps1,
              m2l=args.m2l)
    if getattr(args, "cd", None) is not None:
        kw["C_d"] = args.cd
    if getattr(args, "d", None) is not None:
        kw["d_particle"] = args.d
    kw.update(overrides)
    return FmmConfig(**kw)


# ---------------------------------------------------------------------------
# commands

def cmd_eval(args) -> int:
    from .engine import plan_particles
    from .oracle import direct_sum, relative_l2
    from .report import plan_report

    pts = read_points(args.points)
    q = read_vector(args.densities, len(pts), "densities")
    normals = None
    if args.kernel == "double":
        if not args.normals:
            raise UsageError("--kernel double needs --normals")
        normals = read_points(args.normals)
        if len(normals) != len(pts):
            raise UsageError("normals and points differ in count")
    t0 = time.perf_counter()
    plan = plan_particles(pts, _config(args), args.kernel, normals)
    t_setup = time.perf_counter() - t0
    pot, timings = plan.apply_timed(q)
    timings["setup"] = t_setup
    error = None
    if args.check_dense:
        ref = direct_sum(pts, q, args.kernel, normals)
        error = relative_l2(pot, ref)
        print(f"relative L2 error vs direct sum: {error:.3e}")
    write_vector(args.out, pot)
    if args.report:
        plan_report("eval", plan, timings, error).write(args.report)
    return EXIT_OK


def _solution_csv(path, u, q):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["element_id", "u", "q"])
        for j, (a, b) in enumerate(zip(u, q)):
            w.writerow([j, repr(float(a)), repr(float(b))])


def cmd_solve(args) -> int:
    from .bem.system import solve_dirichlet, solve_mixed
    from .engine import plan_bem
    from .oracle import dense_bem_solve, relative_l2
    from .report import plan_report

    mesh = load_mesh(args.mesh, args.format)
    if (args.bc is None) == (args.dirichlet_const is None):
        raise UsageError("give exactly one of --bc and --dirichlet-const")
    if args.bc is not None:
        bc = load_bc_csv(args.bc, mesh.n_elements)
    else:
        bc = BoundaryCondition.dirichlet_const(mesh.n_elements, args.dirichlet_const)
    layer = args.layer or ("single" if bc.all_dirichlet else "double")
    if layer == "single" and not bc.all_dirichlet:
        raise UsageError("Neumann data needs the direct formulation (--layer double)")
    config = _config(args)
    t0 = time.perf_counter()
    ps = plan_bem(mesh, config, "single")
    plans = (ps, ps.with_kernel("double")) if layer == "double" else (ps,)
    t_setup = time.perf_counter() - t0
    solve_kw = dict(tol=args.tol, restart=args.restart, max_iter=args.max_iter)
    if layer == "single":
        sol = solve_dirichlet(mesh, bc, plan=ps, **solve_kw)
    else:
        sol = solve_mixed(mesh, bc, plans=plans, **solve_kw)
    _, timings = ps.apply_timed(np.ones(mesh.n_elements))
    timings["setup"] = t_setup
    extra = {"solver": sol.stats.to_dict(), "layer": layer, "formulation": sol.kind,
             "mvm_per_iteration": len(plans)}
    error = None
    if args.dense_baseline:
        du, dq = dense_bem_solve(mesh, bc, "dirichlet" if layer == "single" else "mixed")
        x_fmm = np.where(bc.dirichlet, sol.q, sol.u)
        x_dense = np.where(bc.dirichlet, dq, du)
        error = relative_l2(x_fmm, x_dense)
        print(f"relative L2 difference vs dense solve: {error:.3e}")
    _solution_csv(args.out, sol.u, sol.q)
    report = plan_report("solve", ps, timings, error, **extra)
    if args.report:
        report.write(args.report)
    print(f"{sol.kind}: {sol.stats.iterations} iterations, relative residual "
          f"{sol.stats.final_residual:.3e}")
    if not sol.stats.converged:
        print("GMRES did not converge", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_compress_stats(args) -> int:
    from .compression import compression_report, epsilon1
    from .octree import offset_table
    from .surfaces import SurfaceSpec

    if args.eps1 is None:
        if args.depth is None:
            raise UsageError("give --eps1 or --depth (with --c1)")
        if args.depth < 2:
            raise UsageError("--depth must be >= 2")
        eps1 = epsilon1(args.c1, args.depth)
    else:
        eps1 = args.eps1
    if not 0 < eps1 < 1:
        raise UsageError(f"epsilon1 must lie in (0, 1), got {eps1}")
    if args.c2 < 0:
        raise UsageError("--c2 must be >= 0")
    spec = SurfaceSpec(args.p, args.d)
    rep = compression_report(spec, "single", eps1, args.c2)
    rel = rep.total / rep.sigma_max_fat
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["offset_id", "di", "dj", "dk", "original_dim", "compressed_dim", "rank",
                    "spectral_error"])
        for o, (di, dj, dk) in enumerate(offset_table()):
            w.writerow([o, di, dj, dk, rep.original_dim, rep.row_dim, int(rep.ranks[o]),
                        f"{rel[o]:.6e}"])
    print(f"p={args.p} d={args.d}: {rep.original_dim} -> {rep.row_dim} "
          f"(epsilon1={eps1:.4g}, epsilon2={rep.epsilon2:.4g}); "
          f"mean rank {rep.ranks.mean():.1f}")
    return EXIT_OK


def _bench_row(geometry, n, args, rng_seed):
    from .engine import plan_bem, plan_particles
    from .geometry import GEOMETRIES, icosphere
    from .oracle import DENSE_BEM_MAX, dense_bem_matrix, direct_sum, relative_l2

    config = _config(args)
    if geometry == "icosphere-mesh":
        level = max(0, round(math.log(max(n, 20) / 20.0, 4)))
        mesh = icosphere(level)
        t0 = time.perf_counter()
        plan = plan_bem(mesh, config)
    else:
        pts = GEOMETRIES[geometry](n, rng_seed)
        t0 = time.perf_counter()
        plan = plan_particles(pts, config)
    t_setup = time.perf_counter() - t0
    q = np.random.default_rng(rng_seed + 1).standard_normal(plan.n)
    plan.apply(q)  # warm-up (compilation, caches)
    best = None
    for _ in range(args.repeat):
        pot, tm = plan.apply_timed(q)
        if best is None or tm["total"] < best["total"]:
            best = tm
    err = ""
    cap = args.oracle_cap
    if geometry == "icosphere-mesh":
        cap = min(cap, DENSE_BEM_MAX)
    if plan.n <= cap:
        if geometry == "icosphere-mesh":
            ref = dense_bem_matrix(plan.mesh) @ q
        else:
            ref = direct_sum(pts, q)
        err = f"{relative_l2(pot, ref):.6e}"
    return {"N": plan.n, "depth": plan.depth, "T_setup": f"{t_setup:.6f}",
            "T_mvm": f"{best['total']:.6f}", "memory": plan.memory_bytes(), "error": err}


def cmd_bench(args) -> int:
    try:
        sizes = [int(v) for v in args.n_list.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--n-list must be comma-separated integers, got {args.n_list!r}")
    if not sizes or min(sizes) < 1:
        raise UsageError("--n-list needs positive sizes")
    rows = [_bench_row(args.geometry, n, args, args.seed) for n in sizes]
    cols = ["N", "depth", "T_setup", "T_mvm", "memory", "error"]
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.DictWriter(out, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)
    finally:
        if args.out:
            out.close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def _fmm_options(p, particle: bool):
    g = p.add_argument_group("FMM parameters")
    g.add_argument("--p", type=int, default=6, help="surface points per cube edge (default 6)")
    g.add_argument("--smax", type=int, default=100, help="max points per leaf (default 100)")
    g.add_argument("--c1", type=float, default=0.1, help="stage-one coefficient (default 0.1)")
    g.add_argument("--c2", type=float, default=10.0, help="stage-two coefficient (default 10)")
    g.add_argument("--eps1", type=float, default=None,
                   help="explicit stage-one threshold (overrides --c1)")
    g.add_argument("--m2l", choices=("svd", "dense"), default="svd",
                   help="compressed or uncompressed M2L (default svd)")
    if particle:
        g.add_argument("--d", type=float, default=None, help="surface offset (default 0.1)")
    else:
        g.add_argument("--cd", type=float, default=None,
                       help="BEM surface offset coefficient (default 0.5)")


def _common(p):
    p.add_argument("--threads", type=int, default=None,
                   help="worker thread cap (falls back to FMM_THREADS)")
    p.add_argument("--backend", choices=("numba", "numpy"), default=None,
                   help="hot-loop implementation (default from SVDKIFMM_BACKEND)")
    p.add_argument("--seed", type=int, default=0, help="seed for generated inputs")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svdkifmm", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="FMM potentials of point sources")
    p.add_argument("--points", required=True, help="text file: N, then 'x y z' lines")
    p.add_argument("--densities", required=True, help="one density per line")
    p.add_argument("--out", required=True, help="output potentials, one per line")
    p.add_argument("--report", help="write a JSON run report")
    p.add_argument("--kernel", choices=("single", "double"), default="single")
    p.add_argument("--normals", help="source normals (same format as --points)")
    p.add_argument("--check-dense", action="store_true",
                   help="also compute the direct sum and report the relative L2 error")
    _fmm_options(p, True)
    _common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("solve", help="collocation BEM solve on a closed mesh")
    p.add_argument("--mesh", required=True, help="OFF file or 'NV NT' text mesh")
    p.add_argument("--format", choices=("off", "txt"), default=None)
    p.add_argument("--bc", help="CSV element_id,kind,value with kind d or n")
    p.add_argument("--dirichlet-const", type=float, default=None,
                   help="constant potential on every element")
    p.add_argument("--layer", choices=("single", "double"), default=None,
                   help="single: first-kind Dirichlet; double: direct mixed formulation")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--restart", type=int, default=50)
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--dense-baseline", action="store_true",
                   help="also solve densely and report the relative L2 difference")
    p.add_argument("--out", required=True, help="solution CSV (element_id,u,q)")
    p.add_argument("--report", help="write a JSON run report")
    _fmm_options(p, False)
    _common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("compress-stats", help="per-offset M2L compression table")
    p.add_argument("--p", type=int, default=8)
    p.add_argument("--eps1", type=float, default=None)
    p.add_argument("--c1", type=float, default=0.1)
    p.add_argument("--depth", type=int, default=None, help="tree depth used by the --c1 rule")
    p.add_argument("--c2", type=float, default=10.0)
    p.add_argument("--d", type=float, default=0.1)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_compress_stats)

    p = sub.add_parser("bench", help="per-MVM time and memory over problem sizes")
    p.add_argument("--n-list", required=True, help="comma-separated sizes")
    p.add_argument("--geometry", choices=("sphere-points", "cube-points", "icosphere-mesh"),
                   default="sphere-points")
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--oracle-cap", type=int, default=20000,
                   help="largest N that also gets an oracle error")
    p.add_argument("--out", help="CSV output (stdout if omitted)")
    _fmm_options(p, True)
    _common(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _accel.set_threads(_threads(args))
        if args.backend:
            _accel.set_backend(args.backend)
        return args.func(args)
    except (UsageError, ConfigError, MeshError, BoundaryConditionError, FileNotFoundError,
            ValueError) as exc:
        print(f"svdkifmm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
