"""Convex cells, half-space clipping, and exact moment integration.

Cells are closed convex polyhedra stored as an explicit boundary
representation: a plane list, vertices carrying both coordinates and
the sorted triple of supporting plane ids, and one vertex cycle per
face, oriented counter-clockwise seen from outside.  Every plane
carries a provenance tag (mesh facet or weighted bisector) so that
traversal code can tell where each face of a clipped cell came from.

Vertex coordinates are interpolated along the cut edge, which keeps
them inside the cell even for badly conditioned plane triples; all
combinatorial decisions go through the sign predicates, never through
the stored coordinates, when exact mode is requested.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import predicates
from .errors import NumericError
from .predicates import EXACT, FAST, check_mode


@dataclass(frozen=True)
class MeshFacet:
    """Face provenance: local facet ``facet`` of tetrahedron ``tet``."""

    tet: int
    facet: int


@dataclass(frozen=True)
class Bisector:
    """Face provenance: power bisector against site ``site``."""

    site: int


@dataclass(frozen=True)
class HalfSpace:
    """Closed half-space {x : normal . x <= offset} with provenance."""

    normal: tuple
    offset: float
    provenance: object


def provenance_site(half):
    prov = half.provenance
    return prov.site if isinstance(prov, Bisector) else -1


@dataclass(frozen=True)
class MomentSet:
    """Integrals of rho, rho*x and rho*|x - ref|^2 over a cell."""

    mass: float
    moment: tuple
    cost: float


# Face cycles of a positively oriented tetrahedron, CCW from outside;
# face f lies opposite corner f.
TET_FACES = ((1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1))
TET_CORNER_TRIPLES = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))


def bisector(pi, wi, pj, wj, j=-1):
    """Half-space of points with smaller power distance to (pi, wi).

    Coincident sites with equal weights produce the degenerate
    half-space 0.x <= 0; clipping resolves it by index perturbation.
    """
    n = (2.0 * (pj[0] - pi[0]), 2.0 * (pj[1] - pi[1]), 2.0 * (pj[2] - pi[2]))
    d = (
        (pj[0] * pj[0] + pj[1] * pj[1] + pj[2] * pj[2])
        - (pi[0] * pi[0] + pi[1] * pi[1] + pi[2] * pi[2])
        - wj
        + wi
    )
    return HalfSpace(n, d, Bisector(j))


def side_of_bisector(x, pi, wi, i, pj, wj, j, mode=EXACT):
    """Index of the site (i or j) that claims point x."""
    return predicates.power_side(x, pi, wi, i, pj, wj, j, mode)


class ConvexCell:
    """Closed convex polyhedron produced by half-space clipping.

    ``faces`` is a list of (plane id, vertex cycle); ``triples[v]`` is
    the sorted triple of plane ids supporting vertex v.  ``site`` names
    the owning site when the cell is a power cell (-1 otherwise), which
    drives symbolic perturbation in exact mode.  Cells are immutable;
    ``clip`` returns a new cell.
    """

    __slots__ = ("planes", "vertices", "triples", "faces", "site", "tet", "_rows", "_sites")

    def __init__(self, planes, rows, sites, vertices, triples, faces, site=-1, tet=-1):
        self.planes = planes
        self._rows = rows
        self._sites = sites
        self.vertices = vertices
        self.triples = triples
        self.faces = faces
        self.site = site
        self.tet = tet

    def is_empty(self):
        return not self.vertices

    @classmethod
    def empty(cls, site=-1, tet=-1):
        return cls([], [], [], [], [], [], site, tet)

    @classmethod
    def from_planes(cls, planes, vertices, triples, faces, site=-1, tet=-1):
        rows = [tuple(h.normal) + (h.offset,) for h in planes]
        sites = [provenance_site(h) for h in planes]
        return cls(list(planes), rows, sites, list(vertices), list(triples), list(faces), site, tet)

    @classmethod
    def from_tet(cls, corners, planes=None, site=-1, tet=-1):
        """Cell equal to a positively oriented tetrahedron.

        When ``planes`` is omitted the facet planes are derived from the
        corners with outward normals.
        """
        pts = [(float(p[0]), float(p[1]), float(p[2])) for p in corners]
        if planes is None:
            planes = []
            for f, cyc in enumerate(TET_FACES):
                a, b, c = (pts[k] for k in cyc)
                u = (b[0] - a[0], b[1] - a[1], b[2] - a[2])
                v = (c[0] - a[0], c[1] - a[1], c[2] - a[2])
                n = (
                    u[1] * v[2] - u[2] * v[1],
                    u[2] * v[0] - u[0] * v[2],
                    u[0] * v[1] - u[1] * v[0],
                )
                d = n[0] * a[0] + n[1] * a[1] + n[2] * a[2]
                planes.append(HalfSpace(n, d, MeshFacet(tet, f)))
        faces = [(f, list(cyc)) for f, cyc in enumerate(TET_FACES)]
        triples = [tuple(t) for t in TET_CORNER_TRIPLES]
        return cls.from_planes(planes, pts, triples, faces, site, tet)

    @classmethod
    def from_box(cls, lo, hi):
        """Axis-aligned box cell; planes ordered +x, -x, +y, -y, +z, -z."""
        lo = (float(lo[0]), float(lo[1]), float(lo[2]))
        hi = (float(hi[0]), float(hi[1]), float(hi[2]))
        planes = []
        for axis in range(3):
            npos = [0.0, 0.0, 0.0]
            npos[axis] = 1.0
            planes.append(HalfSpace(tuple(npos), hi[axis], MeshFacet(-1, 2 * axis)))
            nneg = [0.0, 0.0, 0.0]
            nneg[axis] = -1.0
            planes.append(HalfSpace(tuple(nneg), -lo[axis], MeshFacet(-1, 2 * axis + 1)))
        verts = []
        triples = []
        for cid in range(8):
            cx, cy, cz = cid & 1, (cid >> 1) & 1, (cid >> 2) & 1
            verts.append(
                (hi[0] if cx else lo[0], hi[1] if cy else lo[1], hi[2] if cz else lo[2])
            )
            triples.append(
                tuple(sorted((0 if cx else 1, 2 if cy else 3, 4 if cz else 5)))
            )
        faces = [
            (0, [1, 3, 7, 5]),
            (1, [0, 4, 6, 2]),
            (2, [2, 6, 7, 3]),
            (3, [0, 1, 5, 4]),
            (4, [4, 5, 7, 6]),
            (5, [0, 2, 3, 1]),
        ]
        return cls.from_planes(planes, verts, triples, faces)


def clip(cell, half, mode=EXACT):
    """Intersection of ``cell`` with a closed half-space.

    Returns the input cell unchanged when nothing lies strictly
    outside, and an explicitly empty cell when nothing lies strictly
    inside (the intersection then has no volume).  New section vertices
    are deduplicated per cut edge, so each one appears exactly once.
    """
    check_mode(mode)
    if cell.is_empty():
        return cell
    nrow = tuple(half.normal) + (float(half.offset),)
    hsite = provenance_site(half)
    rows = cell._rows
    sites = cell._sites
    signs = []
    if mode == FAST:
        for x, y, z in cell.vertices:
            signs.append(predicates.sign(nrow[0] * x + nrow[1] * y + nrow[2] * z - nrow[3]))
    else:
        for tri in cell.triples:
            signs.append(
                predicates.clip_side(
                    rows[tri[0]], rows[tri[1]], rows[tri[2]], nrow,
                    sites[tri[0]], sites[tri[1]], sites[tri[2]], hsite,
                    cell.site,
                )
            )
    if max(signs) <= 0:
        return cell
    if min(signs) >= 0:
        return ConvexCell.empty(cell.site, cell.tet)

    ph = len(rows)
    verts = list(cell.vertices)
    triples = list(cell.triples)
    edge_vid = {}

    def cut(a, b):
        key = (a, b) if a < b else (b, a)
        vid = edge_vid.get(key)
        if vid is not None:
            return vid
        shared = sorted(set(triples[a]) & set(triples[b]))
        if len(shared) < 2:
            raise NumericError("inconsistent cell connectivity in clip")
        tri = tuple(sorted((shared[0], shared[1], ph)))
        ax, ay, az = verts[a]
        bx, by, bz = verts[b]
        fa = nrow[0] * ax + nrow[1] * ay + nrow[2] * az - nrow[3]
        fb = nrow[0] * bx + nrow[1] * by + nrow[2] * bz - nrow[3]
        den = fa - fb
        t = 0.5 if den == 0.0 else fa / den
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        vid = len(verts)
        verts.append((ax + t * (bx - ax), ay + t * (by - ay), az + t * (bz - az)))
        triples.append(tri)
        edge_vid[key] = vid
        return vid

    new_faces = []
    cap_next = {}
    for pid, cyc in cell.faces:
        smax = max(signs[v] for v in cyc)
        if smax <= 0:
            new_faces.append((pid, list(cyc)))
            continue
        if min(signs[v] for v in cyc) >= 0:
            continue
        out_cycle = []
        events = []
        m = len(cyc)
        for idx in range(m):
            a = cyc[idx]
            b = cyc[(idx + 1) % m]
            sa = signs[a]
            sb = signs[b]
            if sa <= 0:
                out_cycle.append(a)
            if sa <= 0 < sb:
                x = a if sa == 0 else cut(a, b)
                if sa != 0:
                    out_cycle.append(x)
                events.append(("x", x))
            elif sa > 0 >= sb:
                e = b if sb == 0 else cut(a, b)
                if sb != 0:
                    out_cycle.append(e)
                events.append(("e", e))
        if events:
            if len(events) % 2 != 0:
                raise NumericError("inconsistent clip crossings")
            if events[0][0] == "e":
                events.append(events.pop(0))
            for k in range(0, len(events), 2):
                kx, xv = events[k]
                ke, ev = events[k + 1]
                if kx != "x" or ke != "e":
                    raise NumericError("inconsistent clip crossings")
                if ev != xv:
                    cap_next[ev] = xv
        if len(set(out_cycle)) >= 3:
            new_faces.append((pid, out_cycle))

    cap_faces = []
    pending = dict(cap_next)
    while pending:
        start, nxt = pending.popitem()
        cyc = [start]
        while nxt != start:
            cyc.append(nxt)
            nn = pending.pop(nxt, None)
            if nn is None:
                raise NumericError("open section loop in clip")
            nxt = nn
        if len(set(cyc)) >= 3:
            cap_faces.append(cyc)
    if len(cap_faces) > 1:
        raise NumericError("multiple section loops in clip")
    for cyc in cap_faces:
        new_faces.append((ph, cyc))

    used = sorted({v for _, fcyc in new_faces for v in fcyc})
    if len(used) < 4 or len(new_faces) < 4:
        return ConvexCell.empty(cell.site, cell.tet)
    remap = {old: k for k, old in enumerate(used)}
    out_verts = [verts[v] for v in used]
    out_triples = [triples[v] for v in used]
    out_faces = [(pid, [remap[v] for v in fcyc]) for pid, fcyc in new_faces]
    return ConvexCell(
        cell.planes + [half],
        rows + [nrow],
        sites + [hsite],
        out_verts,
        out_triples,
        out_faces,
        cell.site,
        cell.tet,
    )


def integrate(cell, density=None, ref=(0.0, 0.0, 0.0)):
    """Exact moments of a linear density over a convex cell.

    ``density`` is (alpha, beta) for rho(x) = alpha . x + beta, or None
    for rho = 1.  The cell is fanned into tetrahedra from its vertex
    barycenter; each integrand is a product of at most three affine
    functions, integrated in closed form from vertex values.  An empty
    cell integrates to zero.
    """
    if cell.is_empty():
        return MomentSet(0.0, (0.0, 0.0, 0.0), 0.0)
    if density is None:
        aax = aay = aaz = 0.0
        beta = 1.0
    else:
        (aax, aay, aaz), beta = (density[0][0], density[0][1], density[0][2]), float(density[1])
    rx, ry, rz = float(ref[0]), float(ref[1]), float(ref[2])

    nv = len(cell.vertices)
    gx = gy = gz = 0.0
    for x, y, z in cell.vertices:
        gx += x
        gy += y
        gz += z
    gx /= nv
    gy /= nv
    gz /= nv
    rho_g = aax * gx + aay * gy + aaz * gz + beta

    mass = 0.0
    momx = momy = momz = 0.0
    cost = 0.0
    for _, cyc in cell.faces:
        v0 = cell.vertices[cyc[0]]
        rho0 = aax * v0[0] + aay * v0[1] + aaz * v0[2] + beta
        for k in range(1, len(cyc) - 1):
            v1 = cell.vertices[cyc[k]]
            v2 = cell.vertices[cyc[k + 1]]
            e1x, e1y, e1z = v0[0] - gx, v0[1] - gy, v0[2] - gz
            e2x, e2y, e2z = v1[0] - gx, v1[1] - gy, v1[2] - gz
            e3x, e3y, e3z = v2[0] - gx, v2[1] - gy, v2[2] - gz
            vol = (
                e1x * (e2y * e3z - e2z * e3y)
                - e1y * (e2x * e3z - e2z * e3x)
                + e1z * (e2x * e3y - e2y * e3x)
            ) / 6.0
            if vol == 0.0:
                continue
            rho1 = aax * v1[0] + aay * v1[1] + aaz * v1[2] + beta
            rho2 = aax * v2[0] + aay * v2[1] + aaz * v2[2] + beta
            srho = rho_g + rho0 + rho1 + rho2
            mass += vol * 0.25 * srho
            for c, (p0, p1, p2, p3) in enumerate(
                (
                    (gx, v0[0], v1[0], v2[0]),
                    (gy, v0[1], v1[1], v2[1]),
                    (gz, v0[2], v1[2], v2[2]),
                )
            ):
                sc = p0 + p1 + p2 + p3
                pc = rho_g * p0 + rho0 * p1 + rho1 * p2 + rho2 * p3
                mc = vol / 20.0 * (pc + srho * sc)
                if c == 0:
                    momx += mc
                elif c == 1:
                    momy += mc
                else:
                    momz += mc
                rc = (rx, ry, rz)[c]
                d0, d1, d2, d3 = p0 - rc, p1 - rc, p2 - rc, p3 - rc
                sd = d0 + d1 + d2 + d3
                pfd = rho_g * d0 + rho0 * d1 + rho1 * d2 + rho2 * d3
                pdd = d0 * d0 + d1 * d1 + d2 * d2 + d3 * d3
                pfdd = rho_g * d0 * d0 + rho0 * d1 * d1 + rho1 * d2 * d2 + rho2 * d3 * d3
                cost += vol / 120.0 * (srho * sd * sd + 2.0 * pfd * sd + pdd * srho + 2.0 * pfdd)
    return MomentSet(mass, (momx, momy, momz), cost)


def cell_volume(cell):
    return integrate(cell).mass


def check_cell(cell, tol=1e-9):
    """Raise when the boundary representation is structurally broken.

    Checks closedness (every directed edge paired with its reverse),
    per-face planarity, convex position of all vertices, and the Euler
    relation.  Intended for tests and debugging.
    """
    if cell.is_empty():
        return
    edges = {}
    for pid, cyc in cell.faces:
        m = len(cyc)
        for k in range(m):
            a, b = cyc[k], cyc[(k + 1) % m]
            if a == b:
                raise NumericError("degenerate edge in face cycle")
            if (a, b) in edges:
                raise NumericError("directed edge repeated across faces")
            edges[(a, b)] = pid
    for a, b in edges:
        if (b, a) not in edges:
            raise NumericError("boundary not closed: unmatched edge")
    nfv = len({v for _, cyc in cell.faces for v in cyc})
    if nfv != len(cell.vertices):
        raise NumericError("unreferenced vertices in cell")
    n_edges = len(edges) // 2
    if len(cell.vertices) - n_edges + len(cell.faces) != 2:
        raise NumericError("Euler relation violated")
    for pid, cyc in cell.faces:
        n = cell.planes[pid].normal
        d = cell.planes[pid].offset
        nn = math.sqrt(n[0] ** 2 + n[1] ** 2 + n[2] ** 2)
        for v in cyc:
            x, y, z = cell.vertices[v]
            r = abs(n[0] * x + n[1] * y + n[2] * z - d)
            scale = nn * math.sqrt(x * x + y * y + z * z) + abs(d) + nn
            if r > tol * scale:
                raise NumericError(f"face {pid} not planar within tolerance")
    for pid, row in enumerate(cell._rows):
        for x, y, z in cell.vertices:
            val = row[0] * x + row[1] * y + row[2] * z - row[3]
            scale = (
                abs(row[0] * x) + abs(row[1] * y) + abs(row[2] * z) + abs(row[3]) + 1.0
            )
            if val > tol * scale:
                raise NumericError("vertex outside supporting plane")
