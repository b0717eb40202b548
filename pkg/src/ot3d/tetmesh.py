"""Tetrahedral meshes carrying the source measure.

A mesh is a list of positively oriented tets over shared vertices with
an optional per-vertex density (linearly interpolated inside each tet,
constant 1 otherwise).  Loading builds facet adjacency by hashing
sorted vertex triples and repairs negatively oriented tets by swapping
two vertices.  Facet planes are computed once per undirected facet
from the globally sorted vertex triple and then sign-flipped per tet,
so the two copies of an interior facet are exact negations of each
other and clipping is watertight across neighboring tets.
"""

import math

import numpy as np

from . import predicates
from .errors import InputError
from .geometry import TET_CORNER_TRIPLES
from .hilbert import hilbert_order

_EPS = 2.220446049250313e-16
_FILTER = 32.0 * _EPS


def _det3_permanent(u, v, w):
    """Magnitude bound of det(u,v,w) rows: same products, all signs +."""
    u, v, w = np.abs(u), np.abs(v), np.abs(w)
    px = v[:, 1] * w[:, 2] + v[:, 2] * w[:, 1]
    py = v[:, 0] * w[:, 2] + v[:, 2] * w[:, 0]
    pz = v[:, 0] * w[:, 1] + v[:, 1] * w[:, 0]
    return u[:, 0] * px + u[:, 1] * py + u[:, 2] * pz


class TetMesh:
    """Immutable tet mesh; all arrays are plain numpy, built eagerly."""

    def __init__(self, vertices, tets, density=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.tets = np.ascontiguousarray(tets, dtype=np.int32)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise InputError("vertices must be (n, 3)")
        if self.tets.ndim != 2 or self.tets.shape[1] != 4:
            raise InputError("tets must be (n, 4)")
        if len(self.tets) == 0:
            raise InputError("mesh has no tetrahedra")
        if not np.isfinite(self.vertices).all():
            raise InputError("non-finite vertex coordinate")
        nv = len(self.vertices)
        if self.tets.min() < 0 or self.tets.max() >= nv:
            raise InputError("tetrahedron vertex index out of range")
        if density is not None:
            density = np.ascontiguousarray(density, dtype=np.float64)
            if density.shape != (nv,):
                raise InputError("density must have one value per vertex")
            if not np.isfinite(density).all() or density.min() < 0.0:
                raise InputError("density values must be finite and >= 0")
        self.density = density

        self._repair_orientation()
        self.corners = self.vertices[self.tets]
        self.volumes = self._signed_volumes()
        bad = self._degenerate_tets()
        if len(bad):
            raise InputError(f"tetrahedron {bad[0]} has zero volume")
        self.adjacency = self._build_adjacency()
        self.facet_planes = self._build_facet_planes()
        if density is None:
            self.rho_affine = None
            self.tet_masses = self.volumes.copy()
        else:
            self.rho_affine = self._density_coefficients()
            corner_rho = density[self.tets]
            self.tet_masses = self.volumes * corner_rho.mean(axis=1)
        self._tet_order = None

    # -- construction ------------------------------------------------

    def _signed_volumes(self):
        c = self.vertices[self.tets]
        u = c[:, 1] - c[:, 0]
        v = c[:, 2] - c[:, 0]
        w = c[:, 3] - c[:, 0]
        return np.einsum("ij,ij->i", u, np.cross(v, w)) / 6.0

    def _repair_orientation(self):
        c = self.vertices[self.tets]
        u = c[:, 1] - c[:, 0]
        v = c[:, 2] - c[:, 0]
        w = c[:, 3] - c[:, 0]
        vol6 = np.einsum("ij,ij->i", u, np.cross(v, w))
        flip = vol6 < 0.0
        # Rows too close to zero for the float filter get the exact sign.
        ca = np.abs(c)
        unsure = np.abs(vol6) <= _FILTER * _det3_permanent(
            ca[:, 1] + ca[:, 0], ca[:, 2] + ca[:, 0], ca[:, 3] + ca[:, 0]
        )
        for t in np.nonzero(unsure)[0]:
            a, b, cc, d = self.vertices[self.tets[t]]
            flip[t] = predicates.orient3d(a, b, cc, d) < 0
        if flip.any():
            self.tets = self.tets.copy()
            self.tets[flip, 1], self.tets[flip, 2] = (
                self.tets[flip, 2],
                self.tets[flip, 1],
            )

    def _degenerate_tets(self):
        vol6 = self.volumes * 6.0
        ca = np.abs(self.corners)
        perm = _det3_permanent(
            ca[:, 1] + ca[:, 0], ca[:, 2] + ca[:, 0], ca[:, 3] + ca[:, 0]
        )
        out = []
        for t in np.nonzero(np.abs(vol6) <= _FILTER * perm)[0]:
            a, b, cc, d = self.vertices[self.tets[t]]
            if predicates.orient3d(a, b, cc, d) == 0:
                out.append(int(t))
        return out

    def _facet_triples(self):
        idx = np.array(TET_CORNER_TRIPLES, dtype=np.int64)
        return np.sort(self.tets[:, idx], axis=2)

    def _build_adjacency(self):
        trips = self._facet_triples()
        nt = len(self.tets)
        adj = np.full((nt, 4), -1, dtype=np.int32)
        seen = {}
        done = set()
        for t in range(nt):
            for f in range(4):
                key = (trips[t, f, 0], trips[t, f, 1], trips[t, f, 2])
                if key in done:
                    raise InputError(f"tetrahedron {t} shares a facet with two others")
                other = seen.pop(key, None)
                if other is None:
                    seen[key] = (t, f)
                else:
                    ot, of = other
                    adj[t, f] = ot
                    adj[ot, of] = t
                    done.add(key)
        return adj

    def _build_facet_planes(self):
        trips = self._facet_triples()
        va = self.vertices[trips[:, :, 0]]
        vb = self.vertices[trips[:, :, 1]]
        vc = self.vertices[trips[:, :, 2]]
        n = np.cross(vb - va, vc - va)
        d = np.einsum("tfi,tfi->tf", n, va)
        opp = self.corners
        s = np.einsum("tfi,tfi->tf", n, opp) - d
        perm = np.einsum("tfi,tfi->tf", np.abs(n), np.abs(opp)) + np.abs(d)
        unsure = np.abs(s) <= _FILTER * perm
        for t, f in zip(*np.nonzero(unsure)):
            side = predicates.plane_point_side(n[t, f], d[t, f], opp[t, f])
            if side == 0:
                # Positive exact volume but flat within one rounding of
                # the plane coefficients: the clipper cannot handle it.
                raise InputError(f"tetrahedron {t} is numerically degenerate")
            s[t, f] = side
        flip = s > 0.0
        n[flip] = -n[flip]
        d[flip] = -d[flip]
        planes = np.empty((len(self.tets), 4, 4), dtype=np.float64)
        planes[:, :, :3] = n
        planes[:, :, 3] = d
        return planes

    def _density_coefficients(self):
        a = np.empty((len(self.tets), 4, 4), dtype=np.float64)
        a[:, :, :3] = self.corners
        a[:, :, 3] = 1.0
        return np.linalg.solve(a, self.density[self.tets][:, :, None])[:, :, 0]

    # -- queries -----------------------------------------------------

    def measure(self):
        return math.fsum(self.tet_masses.tolist())

    def bbox(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def tet_density(self, t):
        """(alpha, beta) of the affine density on tet t, or None."""
        if self.rho_affine is None:
            return None
        r = self.rho_affine[t]
        return (r[0], r[1], r[2]), r[3]

    @property
    def tet_order(self):
        """Tet permutation along the Hilbert curve of tet barycenters."""
        if self._tet_order is None:
            self._tet_order = hilbert_order(self.corners.mean(axis=1))
        return self._tet_order

    def partition(self, n_parts):
        nt = len(self.tets)
        if not 1 <= n_parts <= nt:
            raise ValueError(f"n_parts must be in [1, {nt}]")
        bounds = np.linspace(0, nt, n_parts + 1).astype(np.int64)
        return [(int(bounds[k]), int(bounds[k + 1])) for k in range(n_parts)]


def mesh_measure(mesh):
    return mesh.measure()


def partition(mesh, n_parts):
    return mesh.partition(n_parts)


def _tokenized_lines(path):
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            stripped = raw.strip()
            if not stripped or stripped.startswith("#"):
                continue
            out.append((lineno, stripped.split()))
    return out


def _parse_floats(tokens, count, path, lineno, what):
    if len(tokens) != count:
        raise InputError(f"expected {count} values for {what}", path, lineno)
    try:
        vals = [float(t) for t in tokens]
    except ValueError:
        raise InputError(f"bad number in {what}", path, lineno) from None
    if not all(math.isfinite(v) for v in vals):
        raise InputError(f"non-finite value in {what}", path, lineno)
    return vals


def load_mesh(path):
    """Read a `.tetmesh` file; see save_mesh for the format."""
    lines = _tokenized_lines(path)
    if not lines:
        raise InputError("empty mesh file", path, 1)
    lineno, head = lines[0]
    if len(head) != 4 or head[0] != "tetmesh":
        raise InputError("expected header 'tetmesh <nv> <nt> <density:0|1>'", path, lineno)
    try:
        nv, nt, with_density = int(head[1]), int(head[2]), int(head[3])
    except ValueError:
        raise InputError("bad header counts", path, lineno) from None
    if nv < 4 or nt < 1 or with_density not in (0, 1):
        raise InputError("bad header counts", path, lineno)
    if len(lines) != 1 + nv + nt:
        raise InputError(
            f"expected {nv} vertex and {nt} tetrahedron lines", path, lineno
        )

    verts = np.empty((nv, 3), dtype=np.float64)
    density = np.empty(nv, dtype=np.float64) if with_density else None
    for k in range(nv):
        lineno, toks = lines[1 + k]
        vals = _parse_floats(toks, 3 + with_density, path, lineno, "vertex")
        verts[k] = vals[:3]
        if with_density:
            if vals[3] < 0.0:
                raise InputError("density must be >= 0", path, lineno)
            density[k] = vals[3]

    tets = np.empty((nt, 4), dtype=np.int32)
    tet_lines = []
    for k in range(nt):
        lineno, toks = lines[1 + nv + k]
        if len(toks) != 4:
            raise InputError("expected 4 vertex indices", path, lineno)
        try:
            ids = [int(t) for t in toks]
        except ValueError:
            raise InputError("bad vertex index", path, lineno) from None
        for i in ids:
            if not 0 <= i < nv:
                raise InputError(f"vertex index {i} out of range 0..{nv - 1}", path, lineno)
        if len(set(ids)) != 4:
            raise InputError("tetrahedron repeats a vertex", path, lineno)
        tets[k] = ids
        tet_lines.append(lineno)

    try:
        return TetMesh(verts, tets, density)
    except InputError as exc:
        # Attach the offending line when the constructor names a tet.
        words = str(exc).split()
        if len(words) >= 2 and words[0] == "tetrahedron" and words[1].isdigit():
            raise InputError(exc.message, path, tet_lines[int(words[1])]) from None
        raise


def save_mesh(mesh, path):
    """Write a `.tetmesh` file.

    Format: header `tetmesh <nv> <nt> <density:0|1>`, nv vertex lines
    `x y z [rho]`, nt tet lines `i0 i1 i2 i3` (0-based); `#` comments.
    Floats are written with repr so a round trip is bit-exact.
    """
    with_density = 0 if mesh.density is None else 1
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"tetmesh {len(mesh.vertices)} {len(mesh.tets)} {with_density}\n")
        for k, row in enumerate(mesh.vertices):
            line = f"{float(row[0])!r} {float(row[1])!r} {float(row[2])!r}"
            if with_density:
                line += f" {float(mesh.density[k])!r}"
            fh.write(line + "\n")
        for ids in mesh.tets:
            fh.write(f"{ids[0]} {ids[1]} {ids[2]} {ids[3]}\n")
