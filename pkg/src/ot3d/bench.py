"""Timing comparison of the compiled and pure Python clip kernels.

Run as `python -m ot3d.bench`.  The backend is chosen at import time,
so the main process re-launches itself once per backend (OT3D_PURE
unset, then =1) and each child prints its own numbers.  Two layers are
timed on the same seeded instance: raw kernel clips of every
(tet, site) couple with exhaustive candidates, and the full restricted
power diagram evaluation through the public entry point.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from .restricted import KERNEL_BACKEND, evaluate
from .sites import SiteSet
from .tetmesh import TetMesh

try:
    from . import _kernel  # noqa: F401

    HAVE_COMPILED = True
except ImportError:
    HAVE_COMPILED = False


def build_instance(n_points, k, seed):
    from scipy.spatial import Delaunay

    rng = np.random.default_rng(seed)
    tri = Delaunay(rng.uniform(0.0, 1.0, size=(n_points, 3)))
    mesh = TetMesh(tri.points, tri.simplices)
    sites = SiteSet(
        rng.uniform(0.05, 0.95, (k, 3)), rng.uniform(-0.02, 0.02, k)
    )
    return mesh, sites


def bench_kernel(mesh, sites, mode, repeats, owners=8):
    """Best-of-repeats cost of one exhaustive clip, in seconds/couple."""
    if os.environ.get("OT3D_PURE", "") == "1":
        from . import _kernel_py as kernel_mod
    else:
        from . import _kernel as kernel_mod
    k = sites.k
    all_idx = np.arange(k, dtype=np.int64)
    # the owner is never its own candidate; a self bisector is the
    # degenerate zero plane
    cands = [all_idx[all_idx != i] for i in range(owners)]
    no_dist = np.zeros(k - 1)
    nt = len(mesh.tets)
    sums = np.zeros((k, 5))
    comps = np.zeros((k, 5))
    kern = kernel_mod.CoupleKernel(
        mesh, sites.points, sites.weights, mode, False, 0.0, sums, comps
    )
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for t in range(nt):
            for i in range(owners):
                kern.clip_couple(t, i, cands[i], no_dist, True)
        best = min(best, time.perf_counter() - t0)
    return best / (nt * owners), nt * owners


def bench_evaluate(mesh, sites, mode, repeats, n_workers):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        evaluate(mesh, sites, mode=mode, n_workers=n_workers)
        best = min(best, time.perf_counter() - t0)
    return best


def run_one_backend(args):
    mesh, sites = build_instance(args.points, args.k, args.seed)
    modes = ["exact", "fast"] if args.mode == "both" else [args.mode]
    for mode in modes:
        per, n = bench_kernel(mesh, sites, mode, args.repeats)
        print(
            f"backend={KERNEL_BACKEND} layer=kernel mode={mode} "
            f"couples={n} us_per_couple={per * 1e6:.2f}",
            flush=True,
        )
    for mode in modes:
        dt = bench_evaluate(mesh, sites, mode, args.repeats, args.threads)
        print(
            f"backend={KERNEL_BACKEND} layer=evaluate mode={mode} "
            f"tets={len(mesh.tets)} k={sites.k} threads={args.threads} "
            f"ms={dt * 1e3:.2f}",
            flush=True,
        )


def main(argv=None):
    ap = argparse.ArgumentParser(
        prog="ot3d.bench", description="compare the two clip kernel backends"
    )
    ap.add_argument("--points", type=int, default=120,
                    help="Delaunay input points for the benchmark mesh")
    ap.add_argument("-k", type=int, default=64)
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--mode", choices=["exact", "fast", "both"], default="both")
    ap.add_argument("--inner", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)

    if args.inner:
        run_one_backend(args)
        return 0

    child = [sys.executable, "-m", "ot3d.bench", "--inner",
             "--points", str(args.points), "-k", str(args.k),
             "--seed", str(args.seed), "--repeats", str(args.repeats),
             "--threads", str(args.threads), "--mode", args.mode]
    plans = []
    if HAVE_COMPILED:
        plans.append(("", "compiled"))
    else:
        print("compiled kernel not built; timing the pure backend only",
              file=sys.stderr)
    plans.append(("1", "pure"))
    for pure, tag in plans:
        env = dict(os.environ, OT3D_PURE=pure)
        proc = subprocess.run(child, env=env, text=True, capture_output=True)
        sys.stdout.write(proc.stdout)
        sys.stderr.write(proc.stderr)
        if proc.returncode != 0:
            print(f"{tag} benchmark failed", file=sys.stderr)
            return proc.returncode
    return 0


if __name__ == "__main__":
    sys.exit(main())
