"""Pure-Python couple kernel: clip one (tet, site) couple and accumulate.

This is the reference backend; the compiled extension mirrors its
contract exactly.  A couple evaluation builds the tet cell, clips it
by candidate bisectors until the security certificate holds (knn) or
candidates run out, integrates mass/moment/cost against the owner
site, adds them to the worker's compensated per-site accumulators, and
reports which faces survived so the caller can propagate.
"""

import math

from .geometry import ConvexCell, HalfSpace, MeshFacet, bisector, clip, integrate
from .sites import certificate_holds

BACKEND = "pure"

EMPTY = 0
OK = 1
NEED_MORE = 2


class CoupleKernel:
    """Per-worker kernel; owns the accumulator arrays it writes into."""

    def __init__(self, mesh, points, weights, mode, use_certificate, w_max, sums, comps):
        self.facet_planes = mesh.facet_planes
        self.corners = mesh.corners
        self.rho = mesh.rho_affine
        self.points = points
        self.weights = weights
        self.mode = mode
        self.use_certificate = use_certificate
        self.w_max = w_max
        self.sums = sums
        self.comps = comps

    def _accumulate(self, i, mass, moment, cost):
        row_s = self.sums[i]
        row_c = self.comps[i]
        vals = (mass, moment[0], moment[1], moment[2], cost)
        for c in range(5):
            s = row_s[c]
            x = vals[c]
            t = s + x
            if abs(s) >= abs(x):
                row_c[c] += (s - t) + x
            else:
                row_c[c] += (x - t) + s
            row_s[c] = t

    def clip_couple(self, t, i, cand_idx, cand_dist, exhausted, want_duals=False):
        """(status, bisector sites, facet bitmask, dual tuples) of a couple.

        ``exhausted`` tells the kernel the candidate list already holds
        every other site, so running out of it finalizes the cell.
        """
        rows = self.facet_planes[t]
        planes = [
            HalfSpace((rows[f, 0], rows[f, 1], rows[f, 2]), rows[f, 3], MeshFacet(t, f))
            for f in range(4)
        ]
        cell = ConvexCell.from_tet(self.corners[t], planes, site=i, tet=t)
        p = self.points[i]
        pi = (p[0], p[1], p[2])
        wi = float(self.weights[i])
        radius = -1.0
        certified = False
        for m in range(len(cand_idx)):
            j = int(cand_idx[m])
            if self.use_certificate:
                if radius < 0.0:
                    radius = 0.0
                    for v in cell.vertices:
                        dx = v[0] - pi[0]
                        dy = v[1] - pi[1]
                        dz = v[2] - pi[2]
                        d = math.sqrt(dx * dx + dy * dy + dz * dz)
                        if d > radius:
                            radius = d
                if certificate_holds(float(cand_dist[m]), radius, wi, self.w_max):
                    certified = True
                    break
            q = self.points[j]
            half = bisector(pi, wi, (q[0], q[1], q[2]), float(self.weights[j]), j)
            clipped = clip(cell, half, self.mode)
            if clipped.is_empty():
                return EMPTY, None, 0, None
            if clipped is not cell:
                cell = clipped
                radius = -1.0
        if not (certified or exhausted or not self.use_certificate):
            return NEED_MORE, None, 0, None

        if self.rho is None:
            density = None
        else:
            r = self.rho[t]
            density = ((r[0], r[1], r[2]), r[3])
        ms = integrate(cell, density=density, ref=pi)
        # Sliver cells can round to a negative mass; keep the partition
        # invariant m_i >= 0 intact.
        self._accumulate(i, ms.mass if ms.mass > 0.0 else 0.0, ms.moment, ms.cost)

        bis = set()
        fmask = 0
        for pid, _ in cell.faces:
            s = cell._sites[pid]
            if s >= 0:
                bis.add(s)
            elif pid < 4:
                fmask |= 1 << pid
        duals = None
        if want_duals:
            duals = []
            sid = cell._sites
            for tri in cell.triples:
                s0, s1, s2 = sid[tri[0]], sid[tri[1]], sid[tri[2]]
                if s0 >= 0 and s1 >= 0 and s2 >= 0:
                    duals.append(tuple(sorted((i, s0, s1, s2))))
        return OK, sorted(bis), fmask, duals
