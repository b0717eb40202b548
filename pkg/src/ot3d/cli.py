"""Command line front end: transport, sampling, morphing, verification.

All reporting goes to standard output as one space-separated
`key=value` line per event so runs are machine parsable; diagnostics
and errors go to standard error.  Exit codes: 0 success, 1 bad input,
2 solver did not converge (partial results are still written),
3 numeric failure.
"""

import argparse
import math
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from .cvt import lloyd
from .errors import InputError, NumericError
from .morphing import build_morph, emit_frames, save_morph
from .predicates import EXACT
from .restricted import evaluate
from .sites import SiteSet, load_sites, save_sites
from .tetmesh import load_mesh, save_mesh
from .transport import (
    objective,
    save_weights,
    solve_multilevel,
    solve_single_level,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_UNCONVERGED = 2
EXIT_NUMERIC = 3


@dataclass
class RunConfig:
    """Options shared by the subcommands, resolved from flags and env."""

    eps_factor: float = 0.01
    degree: int = 2
    multilevel: bool = True
    mode: str = EXACT
    threads: int = 1
    seed: int = 0
    max_iter: int = 1000


def _default_threads():
    env = os.environ.get("OT3D_THREADS", "")
    if env:
        try:
            n = int(env)
            if n >= 1:
                return n
        except ValueError:
            pass
        print(f"ignoring bad OT3D_THREADS={env!r}", file=sys.stderr)
    return os.cpu_count() or 1


def _config(args):
    return RunConfig(
        eps_factor=args.eps_factor,
        degree=getattr(args, "degree", 2),
        multilevel=not getattr(args, "single_level", False),
        mode=args.predicates,
        threads=args.threads if args.threads else _default_threads(),
        seed=getattr(args, "seed", 0),
        max_iter=getattr(args, "max_iter", 1000),
    )


def _emit(**kv):
    print(" ".join(f"{k}={v}" for k, v in kv.items()), flush=True)


def _fmt(x):
    return format(float(x), ".12g")


def _load_sites_checked(path):
    if not os.path.exists(path):
        raise InputError("no such file", path=path)
    return load_sites(path)


def _load_mesh_checked(path):
    if not os.path.exists(path):
        raise InputError("no such file", path=path)
    return load_mesh(path)


def _uniform_masses(masses):
    return bool(np.all(masses == masses[0]))


def cmd_transport(args):
    cfg = _config(args)
    mesh = _load_mesh_checked(args.mesh)
    sites = _load_sites_checked(args.sites)
    mu = mesh.measure()
    if sites.masses is None:
        sites = sites.with_masses(np.full(sites.k, mu / sites.k))
    multilevel = cfg.multilevel
    if multilevel and not _uniform_masses(sites.masses):
        # The level pyramid prescribes nu_i = mu(M)/e_l at every level,
        # so it can only target uniform masses; honor the file's nu.
        print("non-uniform masses: using the single-level solver", file=sys.stderr)
        multilevel = False
    t0 = time.perf_counter()
    if multilevel:
        rep = solve_multilevel(
            mesh,
            sites,
            eps_factor=cfg.eps_factor,
            degree=cfg.degree,
            seed=cfg.seed,
            max_iter=cfg.max_iter,
            mode=cfg.mode,
            n_workers=cfg.threads,
        )
        for n, lv in enumerate(rep.levels, 1):
            _emit(
                level=n,
                size=len(lv.weights),
                iterations=lv.iterations,
                evaluations=lv.evaluations,
                gradient_norm=_fmt(lv.gradient_norm),
                time=_fmt(lv.elapsed),
            )
    else:
        rep = solve_single_level(
            mesh,
            sites,
            eps_factor=cfg.eps_factor,
            max_iter=cfg.max_iter,
            mode=cfg.mode,
            n_workers=cfg.threads,
        )
        _emit(
            level=1,
            size=sites.k,
            iterations=rep.iterations,
            evaluations=rep.evaluations,
            gradient_norm=_fmt(rep.gradient_norm),
            time=_fmt(time.perf_counter() - t0),
        )
    save_weights(rep.weights, args.out)
    _emit(
        converged=int(rep.converged),
        k=sites.k,
        evaluations=rep.evaluations,
        gradient_norm=_fmt(rep.gradient_norm),
        out=args.out,
        time=_fmt(time.perf_counter() - t0),
    )
    return EXIT_OK if rep.converged else EXIT_UNCONVERGED


def cmd_sample(args):
    cfg = _config(args)
    mesh = _load_mesh_checked(args.mesh)
    if args.k < 1:
        raise InputError(f"need at least one sample point, got k={args.k}")
    t0 = time.perf_counter()
    pts = lloyd(
        mesh,
        args.k,
        iters=args.lloyd_iters,
        seed=cfg.seed,
        mode=cfg.mode,
        n_workers=cfg.threads,
    )
    save_sites(SiteSet(pts), args.out, weights_column=False)
    _emit(
        k=args.k,
        lloyd_iters=args.lloyd_iters,
        out=args.out,
        time=_fmt(time.perf_counter() - t0),
    )
    return EXIT_OK


def _frame_paths(out, n_frames):
    stem, ext = os.path.splitext(out)
    return [f"{stem}_frame{j:03d}.tetmesh" for j in range(n_frames)]


def cmd_morph(args):
    cfg = _config(args)
    source = _load_mesh_checked(args.source)
    target = _load_mesh_checked(args.target)
    if args.k < 1:
        raise InputError(f"need at least one site, got k={args.k}")
    t0 = time.perf_counter()
    morph = build_morph(
        source,
        target,
        args.k,
        cvt_iters=args.lloyd_iters,
        eps_factor=cfg.eps_factor,
        degree=cfg.degree,
        seed=cfg.seed,
        max_iter=cfg.max_iter,
        mode=cfg.mode,
        n_workers=cfg.threads,
    )
    save_morph(morph, args.out)
    disp = float(np.linalg.norm(morph.p1 - morph.p0, axis=1).mean())
    _emit(
        k=morph.k,
        tets=len(morph.tets),
        converged=int(morph.converged),
        mean_displacement=_fmt(disp),
        out=args.out,
        time=_fmt(time.perf_counter() - t0),
    )
    if args.frames:
        for path, frame in zip(
            _frame_paths(args.out, args.frames), emit_frames(morph, args.frames)
        ):
            save_mesh(frame, path)
            _emit(frame=path)
    return EXIT_OK if morph.converged else EXIT_UNCONVERGED


def cmd_verify(args):
    from .transport import load_weights

    cfg = _config(args)
    mesh = _load_mesh_checked(args.mesh)
    sites = _load_sites_checked(args.sites)
    weights = load_weights(args.weights) if args.weights else sites.weights
    if len(weights) != sites.k:
        raise InputError(
            f"{len(weights)} weights for {sites.k} sites", path=args.weights
        )
    mu = mesh.measure()
    if sites.masses is None:
        sites = sites.with_masses(np.full(sites.k, mu / sites.k))
    acc = evaluate(
        mesh, sites.with_weights(weights), mode=cfg.mode, n_workers=cfg.threads
    )
    ob = objective(mesh, sites, weights, mode=cfg.mode, n_workers=cfg.threads)
    for i in range(sites.k):
        _emit(
            site=i,
            mass=_fmt(acc.masses[i]),
            nu=_fmt(sites.masses[i]),
            residual=_fmt(ob.gradient[i]),
        )
    eps = cfg.eps_factor * mu / math.sqrt(sites.k)
    ok = ob.gradient_norm <= eps
    _emit(
        gradient_norm=_fmt(ob.gradient_norm),
        eps=_fmt(eps),
        total_mass=_fmt(math.fsum(acc.masses.tolist())),
        measure=_fmt(mu),
        converged=int(ok),
    )
    return EXIT_OK if ok else EXIT_UNCONVERGED


def _add_common(p, seed=True):
    p.add_argument("--eps-factor", type=float, default=0.01,
                   help="gradient tolerance factor on mu(M)/sqrt(k)")
    p.add_argument("--predicates", choices=["exact", "fast"], default="exact")
    p.add_argument("--threads", type=int, default=0,
                   help="worker threads (default: OT3D_THREADS or all cores)")
    if seed:
        p.add_argument("--seed", type=int, default=0)


def build_parser():
    ap = argparse.ArgumentParser(
        prog="ot3d",
        description="Semi-discrete optimal transport on tetrahedral meshes.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("transport", help="solve for the transport weights")
    t.add_argument("--mesh", required=True)
    t.add_argument("--sites", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--degree", type=int, choices=[0, 1, 2], default=2,
                   help="regression degree for multilevel warm starts")
    t.add_argument("--single-level", action="store_true")
    t.add_argument("--max-iter", type=int, default=1000)
    _add_common(t)
    t.set_defaults(fn=cmd_transport)

    s = sub.add_parser("sample", help="CVT sampling of a mesh")
    s.add_argument("--mesh", required=True)
    s.add_argument("-k", type=int, required=True)
    s.add_argument("--lloyd-iters", type=int, default=30)
    s.add_argument("--out", required=True)
    _add_common(s)
    s.set_defaults(fn=cmd_sample)

    m = sub.add_parser("morph", help="morph between two meshes")
    m.add_argument("--source", required=True)
    m.add_argument("--target", required=True)
    m.add_argument("-k", type=int, default=200)
    m.add_argument("--out", required=True)
    m.add_argument("--frames", type=int, default=0)
    m.add_argument("--lloyd-iters", type=int, default=30)
    m.add_argument("--degree", type=int, choices=[0, 1, 2], default=2)
    m.add_argument("--max-iter", type=int, default=1000)
    _add_common(m)
    m.set_defaults(fn=cmd_morph)

    v = sub.add_parser("verify", help="check weights against prescribed masses")
    v.add_argument("--mesh", required=True)
    v.add_argument("--sites", required=True)
    v.add_argument("--weights", default=None)
    _add_common(v, seed=False)
    v.set_defaults(fn=cmd_verify)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
