"""Weighted point sites and neighbor discovery for power cells.

A power cell clipped to a tet only sees nearby sites, so the clipping
loop walks candidates ordered by distance and stops once no remaining
site can possibly cut the cell: for an unseen site j at Euclidean
distance D from y_i, every cell vertex v with ||v - y_i|| <= R
satisfies ||v - y_j||^2 - w_j >= (D - R)^2 - w_j, which exceeds the
owner's power ||v - y_i||^2 - w_i whenever D^2 - 2 D R > w_max - w_i.
The kd-tree provider streams candidates in doubling batches and lets
the clipper apply that certificate; the exhaustive provider never
stops early and doubles as the correctness oracle.
"""

import math
import threading
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InputError
from .geometry import ConvexCell, HalfSpace, MeshFacet, bisector, clip
from .predicates import EXACT, check_mode

_EPS = 2.220446049250313e-16


class SiteSet:
    """Immutable target sites: points y_i, weights w_i, masses nu_i."""

    def __init__(self, points, weights=None, masses=None):
        self.points = np.ascontiguousarray(points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise InputError("site points must be (k, 3)")
        k = len(self.points)
        if k < 1:
            raise InputError("site set is empty")
        if not np.isfinite(self.points).all():
            raise InputError("non-finite site coordinate")
        if weights is None:
            weights = np.zeros(k)
        self.weights = np.ascontiguousarray(weights, dtype=np.float64)
        if self.weights.shape != (k,) or not np.isfinite(self.weights).all():
            raise InputError("weights must be k finite reals")
        if masses is not None:
            masses = np.ascontiguousarray(masses, dtype=np.float64)
            if masses.shape != (k,) or not np.isfinite(masses).all():
                raise InputError("masses must be k finite reals")
            if masses.min() <= 0.0:
                raise InputError("masses must be > 0")
        self.masses = masses

    @property
    def k(self):
        return len(self.points)

    def with_weights(self, weights):
        return SiteSet(self.points, weights, self.masses)

    def with_masses(self, masses):
        return SiteSet(self.points, self.weights, masses)


def validate_masses(sites, total):
    """Check sum(nu_i) == mesh measure to 1e-9 relative, at solver entry."""
    if sites.masses is None:
        raise InputError("site set carries no masses")
    got = math.fsum(sites.masses.tolist())
    if abs(got - total) > 1e-9 * max(abs(total), 1.0):
        raise InputError(
            f"site masses sum to {got!r}, expected the source measure {total!r}"
        )


@dataclass(frozen=True)
class LiftedSite:
    """Site lifted to 4D: height turns power cells into Voronoi cells."""

    base: tuple
    height: float


def lift(sites):
    w_max = float(sites.weights.max())
    out = []
    for p, w in zip(sites.points, sites.weights):
        h = math.sqrt(max(w_max - float(w), 0.0))
        out.append(LiftedSite((float(p[0]), float(p[1]), float(p[2])), h))
    return out


def lifted_points(sites):
    """(k, 4) array of lifted sites, for vectorized validation queries."""
    w_max = float(sites.weights.max())
    h = np.sqrt(np.maximum(w_max - sites.weights, 0.0))
    return np.column_stack([sites.points, h])


class ExhaustiveProvider:
    """All other sites, by increasing power distance to y_i.  Oracle."""

    use_certificate = False

    def __init__(self, sites):
        self.points = sites.points

    def candidate_block(self, i, weights, need=None):
        """All k-1 candidates at once; `need` is ignored (oracle)."""
        delta = self.points - self.points[i]
        d2 = np.einsum("ij,ij->i", delta, delta)
        order = np.argsort(d2 - weights, kind="stable")
        order = order[order != i]
        return order, np.sqrt(d2[order])

    def candidates(self, i, weights):
        idx, dist = self.candidate_block(i, weights)
        for j, d in zip(idx, dist):
            yield int(j), float(d)


def _drop_self(idx, dist, rows):
    """Remove one occurrence of the query site from each result row."""
    k, width = idx.shape
    keep = np.ones_like(idx, dtype=bool)
    is_self = idx == rows[:, None]
    has = is_self.any(axis=1)
    first = np.argmax(is_self, axis=1)
    keep[rows[has], first[has]] = False
    keep[rows[~has], width - 1] = False
    return idx[keep].reshape(k, width - 1), dist[keep].reshape(k, width - 1)


class KnnProvider:
    """Nearest sites by Euclidean distance, streamed in doubling batches.

    The kd-tree and candidate rows depend on positions only, so they
    are cached across weight updates for the whole solve.  A bulk table
    of `batch` columns serves the common case; sites whose cells need
    more candidates get individual longer rows, doubled on demand.
    """

    use_certificate = True
    _BULK_LIMIT = 64

    def __init__(self, sites, batch=16):
        self.points = sites.points
        self.tree = cKDTree(self.points)
        self.batch = batch
        self._idx = None
        self._dist = None
        self._over = {}
        self._lock = threading.Lock()

    def _build_bulk(self, cols):
        k = len(self.points)
        cols = min(cols, k - 1)
        kq = min(cols + 1, k)
        dist, idx = self.tree.query(self.points, k=kq)
        if kq == 1:
            dist = dist[:, None]
            idx = idx[:, None]
        rows = np.arange(k)
        self._idx, self._dist = _drop_self(idx.astype(np.int64), dist, rows)

    def _site_row(self, i, need):
        k = len(self.points)
        need = min(need, k - 1)
        kq = min(need + 1, k)
        dist, idx = self.tree.query(self.points[i], k=kq)
        keep = idx != i
        if keep.all():
            keep[kq - 1] = False
        else:
            first = int(np.argmax(~keep))
            keep[:] = True
            keep[first] = False
        self._over[i] = (idx[keep].astype(np.int64), dist[keep])
        return self._over[i]

    def candidate_block(self, i, weights, need):
        """At least min(need, k-1) nearest others, possibly more."""
        k = len(self.points)
        need = min(need, k - 1)
        if need <= 0:
            return np.empty(0, dtype=np.int64), np.empty(0)
        with self._lock:
            if self._idx is None:
                self._build_bulk(self.batch)
            if self._idx.shape[1] < need <= self._BULK_LIMIT:
                cols = self._idx.shape[1]
                while cols < need:
                    cols *= 2
                self._build_bulk(cols)
            if need <= self._idx.shape[1]:
                return self._idx[i], self._dist[i]
            over = self._over.get(i)
            if over is None or len(over[0]) < need:
                over = self._site_row(i, need)
            return over

    def candidates(self, i, weights=None):
        k = len(self.points)
        served = 0
        need = self.batch
        while True:
            idx, dist = self.candidate_block(i, weights, need)
            for m in range(served, len(idx)):
                yield int(idx[m]), float(dist[m])
            served = len(idx)
            if served >= k - 1:
                return
            need = max(2 * served, self.batch)


def make_provider(sites, kind):
    if kind == "knn":
        return KnnProvider(sites)
    if kind == "exhaustive":
        return ExhaustiveProvider(sites)
    raise ValueError(f"unknown neighbor provider {kind!r}")


def neighbor_candidates(sites, i, provider):
    if isinstance(provider, str):
        provider = make_provider(sites, provider)
    return [j for j, _ in provider.candidates(i, sites.weights)]


def certificate_holds(dist, radius, w_i, w_max):
    """No site at Euclidean distance >= dist can cut a cell of radius."""
    lhs = dist * dist - 2.0 * dist * radius
    rhs = w_max - w_i
    slack = 32.0 * _EPS * (dist * dist + 2.0 * dist * radius + abs(rhs))
    return lhs > rhs + slack


def _tet_cell(mesh, t, site):
    rows = mesh.facet_planes[t]
    planes = [
        HalfSpace((rows[f, 0], rows[f, 1], rows[f, 2]), rows[f, 3], MeshFacet(t, f))
        for f in range(4)
    ]
    return ConvexCell.from_tet(mesh.corners[t], planes, site=site, tet=t)


def power_cell_in_tet(mesh, sites, i, t, provider, mode=EXACT, w_max=None):
    """Pow_W(y_i) intersected with tet t, by direct clipping."""
    check_mode(mode)
    if isinstance(provider, str):
        provider = make_provider(sites, provider)
    weights = sites.weights
    if w_max is None:
        w_max = float(weights.max())
    cell = _tet_cell(mesh, t, i)
    yi = sites.points[i]
    wi = float(weights[i])
    pi = (yi[0], yi[1], yi[2])
    radius = None
    for j, dist in provider.candidates(i, weights):
        if provider.use_certificate:
            if radius is None:
                radius = max(
                    math.dist(v, pi) for v in cell.vertices
                )
            if certificate_holds(dist, radius, wi, w_max):
                break
        yj = sites.points[j]
        clipped = clip(
            cell, bisector(pi, wi, (yj[0], yj[1], yj[2]), float(weights[j]), j), mode
        )
        if clipped.is_empty():
            return clipped
        if clipped is not cell:
            cell = clipped
            radius = None
    return cell


def load_sites(path):
    """Read a `.sites` file; see save_sites for the format."""
    from .tetmesh import _parse_floats, _tokenized_lines

    lines = _tokenized_lines(path)
    if not lines:
        raise InputError("empty sites file", path, 1)
    lineno, head = lines[0]
    if len(head) != 4 or head[0] != "sites":
        raise InputError("expected header 'sites <k> <weights:0|1> <masses:0|1>'", path, lineno)
    try:
        k, with_w, with_m = int(head[1]), int(head[2]), int(head[3])
    except ValueError:
        raise InputError("bad header counts", path, lineno) from None
    if k < 1 or with_w not in (0, 1) or with_m not in (0, 1):
        raise InputError("bad header counts", path, lineno)
    if len(lines) != 1 + k:
        raise InputError(f"expected {k} site lines", path, lineno)
    pts = np.empty((k, 3))
    weights = np.empty(k) if with_w else None
    masses = np.empty(k) if with_m else None
    width = 3 + with_w + with_m
    for n in range(k):
        lineno, toks = lines[1 + n]
        vals = _parse_floats(toks, width, path, lineno, "site")
        pts[n] = vals[:3]
        if with_w:
            weights[n] = vals[3]
        if with_m:
            masses[n] = vals[3 + with_w]
            if masses[n] <= 0.0:
                raise InputError("site mass must be > 0", path, lineno)
    return SiteSet(pts, weights, masses)


def save_sites(sites, path, weights_column=True):
    """Write a `.sites` file.

    Format: header `sites <k> <weights:0|1> <masses:0|1>`, then one
    line `x y z [w] [nu]` per site; `#` comments.  repr floats, so a
    round trip is bit-exact.  Samplers drop the weights column.
    """
    with_w = 1 if weights_column else 0
    with_m = 0 if sites.masses is None else 1
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"sites {sites.k} {with_w} {with_m}\n")
        for n in range(sites.k):
            p = sites.points[n]
            line = f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}"
            if with_w:
                line += f" {float(sites.weights[n])!r}"
            if with_m:
                line += f" {float(sites.masses[n])!r}"
            fh.write(line + "\n")
