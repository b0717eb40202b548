"""Approximate optimal transport between two tet meshes as a morph.

A point set Y sampled over the target mesh is transported against the
source mesh; the morph keeps exactly the tetrahedra whose four sites'
cells meet at a common diagram vertex in both worlds: E, the Delaunay
dual of Y restricted to the target, and F, the power-diagram dual
restricted to the source.  Each kept vertex travels on the segment

    p(t) = (1 - t) p0 + t p1

from the centroid of its source power cell to its sampled position.
Tetrahedra that invert or collapse at intermediate times are kept as
they are; gaps and flips are inherent to the approximation.
"""

from dataclasses import dataclass

import numpy as np

from .cvt import lloyd
from .errors import InputError
from .predicates import EXACT, check_mode
from .restricted import evaluate
from .sites import SiteSet
from .tetmesh import TetMesh
from .transport import solve_multilevel


@dataclass
class MorphMesh:
    """Tets with straight-line vertex paths from p0 (t=0) to p1 (t=1)."""

    p0: np.ndarray
    p1: np.ndarray
    tets: list
    converged: bool = True

    @property
    def k(self):
        return len(self.p0)


def extract_dual(mesh, sites, zero_weights=False, mode=EXACT, provider="knn",
                 n_workers=1):
    """Canonical 4-tuples of sites whose cells share a diagram vertex.

    With zero_weights the diagram is the Voronoi one and the tuples
    form the Delaunay tetrahedra dual to vertices inside the mesh;
    otherwise the sites' own weights give the regular (power) dual.
    """
    if zero_weights:
        sites = sites.with_weights(np.zeros(sites.k))
    acc = evaluate(
        mesh, sites, mode=mode, provider=provider, n_workers=n_workers,
        collect_duals=True,
    )
    return set(acc.duals)


def build_morph(
    source,
    target,
    k,
    cvt_iters=30,
    eps_factor=0.01,
    degree=1,
    seed=0,
    max_iter=2000,
    mode=EXACT,
    provider="knn",
    n_workers=1,
):
    """Morph of the source mesh onto a k-point sampling of the target.

    Y is a Lloyd sampling of the target; the transport of the source
    onto uniform masses mu(source)/k at Y provides the weights.  Kept
    tets are the intersection of both duals; p1 is Y and p0 the source
    power cell centroid (the site itself for empty cells).  A solver
    that ran out of iterations still yields a morph, flagged
    converged=False.
    """
    check_mode(mode)
    if k < 1:
        raise InputError("need at least one site")
    y = lloyd(
        target, k, iters=cvt_iters, seed=seed, mode=mode, provider=provider,
        n_workers=n_workers,
    )
    mu = source.measure()
    sites = SiteSet(y, masses=np.full(k, mu / k))
    rep = solve_multilevel(
        source,
        sites,
        eps_factor=eps_factor,
        degree=degree,
        seed=seed,
        max_iter=max_iter,
        mode=mode,
        provider=provider,
        n_workers=n_workers,
    )
    solved = sites.with_weights(rep.weights)

    e_dual = extract_dual(
        target, SiteSet(y), zero_weights=True, mode=mode, provider=provider,
        n_workers=n_workers,
    )
    acc = evaluate(
        source, solved, mode=mode, provider=provider, n_workers=n_workers,
        collect_duals=True,
    )
    f_dual = set(acc.duals)
    tets = sorted(e_dual & f_dual)

    m = acc.masses
    p0 = np.where(
        (m > 0.0)[:, None], acc.moments / np.where(m > 0.0, m, 1.0)[:, None], y
    )
    return MorphMesh(p0=p0, p1=y.copy(), tets=tets, converged=rep.converged)


def emit_frames(morph, n_frames):
    """Meshes at t = 0, 1/(n-1), ..., 1; vertices lerped, tets shared."""
    if n_frames < 2:
        raise InputError("need at least two frames")
    if not morph.tets:
        raise InputError("morph has no tetrahedra to animate")
    tets = np.asarray(morph.tets, dtype=np.int32)
    frames = []
    for j in range(n_frames):
        t = j / (n_frames - 1)
        verts = (1.0 - t) * morph.p0 + t * morph.p1
        frames.append(TetMesh(verts, tets))
    return frames


def load_morph(path):
    """Read a `.morph` file; see save_morph for the format."""
    from .tetmesh import _parse_floats, _tokenized_lines

    lines = _tokenized_lines(path)
    if not lines:
        raise InputError("empty morph file", path, 1)
    lineno, head = lines[0]
    if len(head) != 3 or head[0] != "morph":
        raise InputError("expected header 'morph <k> <nt>'", path, lineno)
    try:
        k, nt = int(head[1]), int(head[2])
    except ValueError:
        raise InputError("bad header counts", path, lineno) from None
    if k < 1 or nt < 0:
        raise InputError("bad header counts", path, lineno)
    if len(lines) != 1 + k + nt:
        raise InputError(f"expected {k} vertex and {nt} tet lines", path, lineno)
    p0 = np.empty((k, 3))
    p1 = np.empty((k, 3))
    for n in range(k):
        lineno, toks = lines[1 + n]
        vals = _parse_floats(toks, 6, path, lineno, "morph vertex")
        p0[n] = vals[:3]
        p1[n] = vals[3:]
    tets = []
    for n in range(nt):
        lineno, toks = lines[1 + k + n]
        if len(toks) != 4:
            raise InputError("expected 4 site indices", path, lineno)
        try:
            ids = tuple(int(t) for t in toks)
        except ValueError:
            raise InputError("bad site index", path, lineno) from None
        for i in ids:
            if not 0 <= i < k:
                raise InputError(f"site index {i} out of range 0..{k - 1}", path, lineno)
        tets.append(ids)
    return MorphMesh(p0=p0, p1=p1, tets=tets)


def save_morph(morph, path):
    """Write a `.morph` file.

    Format: header `morph <k> <nt>`, k lines `x0 y0 z0 x1 y1 z1`, nt
    lines `i j k l`; `#` comments.  repr floats round-trip bit-exact.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"morph {morph.k} {len(morph.tets)}\n")
        for a, b in zip(morph.p0, morph.p1):
            fh.write(
                f"{float(a[0])!r} {float(a[1])!r} {float(a[2])!r} "
                f"{float(b[0])!r} {float(b[1])!r} {float(b[2])!r}\n"
            )
        for ids in morph.tets:
            fh.write(f"{ids[0]} {ids[1]} {ids[2]} {ids[3]}\n")
