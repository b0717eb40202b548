# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled couple kernel: clip one (tet, site) couple and accumulate.

Mirrors the pure-Python backend operation for operation, including the
floating-point evaluation order, so both produce identical bits on the
same input.  Only the exact-arithmetic fallback of the side predicate
is delegated back to the Python module; everything on the common path
runs as plain C on preallocated buffers.
"""

import numpy as np

cimport cython
from libc.math cimport fabs, sqrt
from libc.string cimport memcpy

from .errors import NumericError
from . import predicates as _pred

BACKEND = "compiled"

EMPTY = 0
OK = 1
NEED_MORE = 2

cdef int _EMPTY = 0
cdef int _OK = 1
cdef int _NEED_MORE = 2

cdef double _EPS = 2.220446049250313e-16
cdef double _DET3_BOUND = 32.0 * 2.220446049250313e-16
cdef double _DET4_BOUND = 128.0 * 2.220446049250313e-16
cdef double _CERT_BOUND = 32.0 * 2.220446049250313e-16

cdef int _SIGN_UNSURE = -2

# Face cycles and corner support triples of a positively oriented tet;
# face f lies opposite corner f.
cdef int[4][3] _TET_FACES
_TET_FACES[0][:] = [1, 2, 3]
_TET_FACES[1][:] = [0, 3, 2]
_TET_FACES[2][:] = [0, 1, 3]
_TET_FACES[3][:] = [0, 2, 1]
cdef int[4][3] _TET_TRIPLES
_TET_TRIPLES[0][:] = [1, 2, 3]
_TET_TRIPLES[1][:] = [0, 2, 3]
_TET_TRIPLES[2][:] = [0, 1, 3]
_TET_TRIPLES[3][:] = [0, 1, 2]


cdef inline int _sign(double x) nogil:
    if x > 0.0:
        return 1
    if x < 0.0:
        return -1
    return 0


cdef int _clip_side_filtered(double* ch, double r0d, double r1d, double r2d,
                             double* r3) nogil:
    """Sign of n3 . v - d3 for the vertex with cache ``ch``, or unsure.

    ``ch`` holds the vertex-only part of the predicate: the pair
    crosses of the three support rows with their magnitude bounds,
    plus det3 and its bound.  The cofactor determinants against the
    test row reduce to dot products with the cached crosses.
    """
    cdef double m3 = ch[18]
    cdef double m0, m1, m2, d4, p4
    if fabs(m3) <= _DET3_BOUND * ch[19]:
        return _SIGN_UNSURE
    m0 = r3[0] * ch[0] + r3[1] * ch[1] + r3[2] * ch[2]
    m1 = r3[0] * ch[6] + r3[1] * ch[7] + r3[2] * ch[8]
    m2 = r3[0] * ch[12] + r3[1] * ch[13] + r3[2] * ch[14]
    d4 = -r0d * m0 + r1d * m1 - r2d * m2 + r3[3] * m3
    p4 = (
        fabs(r0d) * (fabs(r3[0]) * ch[3] + fabs(r3[1]) * ch[4] + fabs(r3[2]) * ch[5])
        + fabs(r1d) * (fabs(r3[0]) * ch[9] + fabs(r3[1]) * ch[10] + fabs(r3[2]) * ch[11])
        + fabs(r2d) * (fabs(r3[0]) * ch[15] + fabs(r3[1]) * ch[16] + fabs(r3[2]) * ch[17])
        + fabs(r3[3]) * ch[19]
    )
    if fabs(d4) <= _DET4_BOUND * p4:
        return _SIGN_UNSURE
    return -_sign(d4) * _sign(m3)


cdef void _fill_cache(double* ch, double* ra, double* rb, double* rc) nogil:
    """Vertex predicate cache for support rows (ra, rb, rc)."""
    ch[0] = rb[1] * rc[2] - rb[2] * rc[1]
    ch[1] = rb[2] * rc[0] - rb[0] * rc[2]
    ch[2] = rb[0] * rc[1] - rb[1] * rc[0]
    ch[3] = fabs(rb[1] * rc[2]) + fabs(rb[2] * rc[1])
    ch[4] = fabs(rb[0] * rc[2]) + fabs(rb[2] * rc[0])
    ch[5] = fabs(rb[0] * rc[1]) + fabs(rb[1] * rc[0])
    ch[6] = ra[1] * rc[2] - ra[2] * rc[1]
    ch[7] = ra[2] * rc[0] - ra[0] * rc[2]
    ch[8] = ra[0] * rc[1] - ra[1] * rc[0]
    ch[9] = fabs(ra[1] * rc[2]) + fabs(ra[2] * rc[1])
    ch[10] = fabs(ra[0] * rc[2]) + fabs(ra[2] * rc[0])
    ch[11] = fabs(ra[0] * rc[1]) + fabs(ra[1] * rc[0])
    ch[12] = ra[1] * rb[2] - ra[2] * rb[1]
    ch[13] = ra[2] * rb[0] - ra[0] * rb[2]
    ch[14] = ra[0] * rb[1] - ra[1] * rb[0]
    ch[15] = fabs(ra[1] * rb[2]) + fabs(ra[2] * rb[1])
    ch[16] = fabs(ra[0] * rb[2]) + fabs(ra[2] * rb[0])
    ch[17] = fabs(ra[0] * rb[1]) + fabs(ra[1] * rb[0])
    ch[18] = ra[0] * ch[0] + ra[1] * ch[1] + ra[2] * ch[2]
    ch[19] = fabs(ra[0]) * ch[3] + fabs(ra[1]) * ch[4] + fabs(ra[2]) * ch[5]


@cython.final
cdef class CoupleKernel:
    """Per-worker kernel; owns the accumulator arrays it writes into."""

    cdef double[:, :, ::1] facet_planes
    cdef double[:, :, ::1] corners
    cdef double[:, ::1] rho
    cdef bint has_rho
    cdef double[:, ::1] points
    cdef double[::1] weights
    cdef bint exact_mode
    cdef bint use_certificate
    cdef double w_max
    cdef double[:, ::1] sums
    cdef double[:, ::1] comps

    # Current cell: planes are append-only, vertices and faces live in
    # double buffers swapped on every accepted cut.
    cdef double[:, ::1] prow
    cdef int[::1] psite
    cdef int nplanes
    cdef double[:, ::1] va
    cdef int[:, ::1] ta
    cdef double[:, ::1] vch
    cdef int nva
    cdef int[::1] fpid_a
    cdef int[::1] fstart_a
    cdef int[::1] flen_a
    cdef int[::1] pool_a
    cdef int nfa
    cdef int[::1] fpid_b
    cdef int[::1] fstart_b
    cdef int[::1] flen_b
    cdef int[::1] pool_b

    # Clip scratch.
    cdef double[:, ::1] wv
    cdef int[:, ::1] wt
    cdef double[:, ::1] wch
    cdef int[::1] sgn
    cdef int[::1] cut_e
    cdef int[::1] out_cyc
    cdef int[::1] ev_vid
    cdef signed char[::1] ev_typ
    cdef int[::1] cap_from
    cdef int[::1] cap_to
    cdef signed char[::1] cap_used
    cdef int[::1] remap

    def __init__(self, mesh, points, weights, mode, use_certificate, w_max, sums, comps):
        self.facet_planes = np.ascontiguousarray(mesh.facet_planes, dtype=np.float64)
        self.corners = np.ascontiguousarray(mesh.corners, dtype=np.float64)
        rho = mesh.rho_affine
        self.has_rho = rho is not None
        if self.has_rho:
            self.rho = np.ascontiguousarray(rho, dtype=np.float64)
        else:
            self.rho = np.zeros((1, 4))
        self.points = np.ascontiguousarray(points, dtype=np.float64)
        self.weights = np.ascontiguousarray(weights, dtype=np.float64)
        self.exact_mode = mode == "exact"
        self.use_certificate = bool(use_certificate)
        self.w_max = float(w_max)
        self.sums = sums
        self.comps = comps

        cdef int k = self.points.shape[0]
        cdef int pcap = k + 12
        cdef int vcap = 2 * pcap + 8
        cdef int wcap = 4 * vcap + 16
        cdef int poolcap = 8 * vcap + 64
        cdef int fcap = pcap + 4
        self.prow = np.empty((pcap, 4))
        self.psite = np.empty(pcap, dtype=np.int32)
        self.va = np.empty((vcap, 3))
        self.ta = np.empty((vcap, 3), dtype=np.int32)
        self.vch = np.empty((vcap, 20))
        self.fpid_a = np.empty(fcap, dtype=np.int32)
        self.fstart_a = np.empty(fcap, dtype=np.int32)
        self.flen_a = np.empty(fcap, dtype=np.int32)
        self.pool_a = np.empty(poolcap, dtype=np.int32)
        self.fpid_b = np.empty(fcap, dtype=np.int32)
        self.fstart_b = np.empty(fcap, dtype=np.int32)
        self.flen_b = np.empty(fcap, dtype=np.int32)
        self.pool_b = np.empty(poolcap, dtype=np.int32)
        self.wv = np.empty((wcap, 3))
        self.wt = np.empty((wcap, 3), dtype=np.int32)
        self.wch = np.empty((wcap, 20))
        self.sgn = np.empty(wcap, dtype=np.int32)
        self.cut_e = np.empty(3 * wcap, dtype=np.int32)
        self.out_cyc = np.empty(2 * wcap, dtype=np.int32)
        self.ev_vid = np.empty(2 * wcap, dtype=np.int32)
        self.ev_typ = np.empty(2 * wcap, dtype=np.int8)
        self.cap_from = np.empty(fcap + 4, dtype=np.int32)
        self.cap_to = np.empty(fcap + 4, dtype=np.int32)
        self.cap_used = np.empty(fcap + 4, dtype=np.int8)
        self.remap = np.empty(wcap, dtype=np.int32)

    cdef int _vertex_side(self, int v, double* r3, int hsite, int owner) except -9:
        """Side of cell vertex v against the candidate plane."""
        cdef int a = self.ta[v, 0]
        cdef int b = self.ta[v, 1]
        cdef int c = self.ta[v, 2]
        cdef int res
        if not self.exact_mode:
            return _sign(
                r3[0] * self.va[v, 0] + r3[1] * self.va[v, 1]
                + r3[2] * self.va[v, 2] - r3[3]
            )
        res = _clip_side_filtered(
            &self.vch[v, 0],
            self.prow[a, 3], self.prow[b, 3], self.prow[c, 3], r3,
        )
        if res != _SIGN_UNSURE:
            return res
        rows = (
            (self.prow[a, 0], self.prow[a, 1], self.prow[a, 2], self.prow[a, 3]),
            (self.prow[b, 0], self.prow[b, 1], self.prow[b, 2], self.prow[b, 3]),
            (self.prow[c, 0], self.prow[c, 1], self.prow[c, 2], self.prow[c, 3]),
            (r3[0], r3[1], r3[2], r3[3]),
        )
        sites = (self.psite[a], self.psite[b], self.psite[c], hsite)
        return _pred.clip_side_exact(rows, sites, owner)

    cdef int _clip(self, double* r3, int hsite, int owner) except -9:
        """Clip the current cell; 0 no change, 1 cut, 2 empty."""
        cdef int nv = self.nva
        cdef int smax = -1
        cdef int smin = 1
        cdef int v, f, m, idx, a, b, sa, sb, x, e
        cdef int ncut, nev, nout, ncap, nnf, pb, ph
        cdef int s0

        ph = self.nplanes
        if ph >= <int> self.prow.shape[0]:
            raise NumericError("plane buffer overflow in clip")
        self.prow[ph, 0] = r3[0]
        self.prow[ph, 1] = r3[1]
        self.prow[ph, 2] = r3[2]
        self.prow[ph, 3] = r3[3]

        for v in range(nv):
            s0 = self._vertex_side(v, r3, hsite, owner)
            self.sgn[v] = s0
            if s0 > smax:
                smax = s0
            if s0 < smin:
                smin = s0
        if smax <= 0:
            return 0
        if smin >= 0:
            self.nva = 0
            self.nfa = 0
            return 2

        cdef int nw = nv
        ncut = 0
        nnf = 0
        pb = 0
        ncap = 0
        memcpy(&self.wv[0, 0], &self.va[0, 0], nv * 3 * sizeof(double))
        memcpy(&self.wt[0, 0], &self.ta[0, 0], nv * 3 * sizeof(int))
        memcpy(&self.wch[0, 0], &self.vch[0, 0], nv * 20 * sizeof(double))

        for f in range(self.nfa):
            m = self.flen_a[f]
            smax = -1
            smin = 1
            for idx in range(m):
                s0 = self.sgn[self.pool_a[self.fstart_a[f] + idx]]
                if s0 > smax:
                    smax = s0
                if s0 < smin:
                    smin = s0
            if smax <= 0:
                if pb + m > <int> self.pool_b.shape[0]:
                    raise NumericError("face pool overflow in clip")
                self.fpid_b[nnf] = self.fpid_a[f]
                self.fstart_b[nnf] = pb
                self.flen_b[nnf] = m
                for idx in range(m):
                    self.pool_b[pb + idx] = self.pool_a[self.fstart_a[f] + idx]
                pb += m
                nnf += 1
                continue
            if smin >= 0:
                continue
            nout = 0
            nev = 0
            for idx in range(m):
                a = self.pool_a[self.fstart_a[f] + idx]
                b = self.pool_a[self.fstart_a[f] + (idx + 1) % m]
                sa = self.sgn[a]
                sb = self.sgn[b]
                if sa <= 0:
                    self.out_cyc[nout] = a
                    nout += 1
                if sa <= 0 < sb:
                    if sa == 0:
                        x = a
                    else:
                        x = self._cut(a, b, r3, ph, &nw, &ncut)
                        self.out_cyc[nout] = x
                        nout += 1
                    self.ev_typ[nev] = b'x'
                    self.ev_vid[nev] = x
                    nev += 1
                elif sa > 0 >= sb:
                    if sb == 0:
                        e = b
                    else:
                        e = self._cut(a, b, r3, ph, &nw, &ncut)
                        self.out_cyc[nout] = e
                        nout += 1
                    self.ev_typ[nev] = b'e'
                    self.ev_vid[nev] = e
                    nev += 1
            if nev > 0:
                if nev % 2 != 0:
                    raise NumericError("inconsistent clip crossings")
                s0 = 0
                if self.ev_typ[0] == b'e':
                    s0 = 1
                for idx in range(0, nev, 2):
                    a = (s0 + idx) % nev
                    b = (s0 + idx + 1) % nev
                    if self.ev_typ[a] != b'x' or self.ev_typ[b] != b'e':
                        raise NumericError("inconsistent clip crossings")
                    x = self.ev_vid[a]
                    e = self.ev_vid[b]
                    if e != x:
                        # Re-keyed entries stay in place, like a dict.
                        v = -1
                        for sb in range(ncap):
                            if self.cap_from[sb] == e:
                                v = sb
                                break
                        if v >= 0:
                            self.cap_to[v] = x
                        else:
                            self.cap_from[ncap] = e
                            self.cap_to[ncap] = x
                            ncap += 1
            if _distinct_at_least(self.out_cyc, nout, 3):
                if pb + nout > <int> self.pool_b.shape[0]:
                    raise NumericError("face pool overflow in clip")
                self.fpid_b[nnf] = self.fpid_a[f]
                self.fstart_b[nnf] = pb
                self.flen_b[nnf] = nout
                for idx in range(nout):
                    self.pool_b[pb + idx] = self.out_cyc[idx]
                pb += nout
                nnf += 1

        # Assemble the section loop from the chain entries, starting at
        # the most recently inserted one.
        cdef int nloops = 0
        cdef int start, nxt, pos, found
        for idx in range(ncap):
            self.cap_used[idx] = 0
        cdef int remaining = ncap
        while remaining > 0:
            pos = ncap - 1
            while self.cap_used[pos]:
                pos -= 1
            start = self.cap_from[pos]
            nxt = self.cap_to[pos]
            self.cap_used[pos] = 1
            remaining -= 1
            nout = 0
            self.out_cyc[nout] = start
            nout += 1
            while nxt != start:
                self.out_cyc[nout] = nxt
                nout += 1
                found = -1
                for idx in range(ncap):
                    if not self.cap_used[idx] and self.cap_from[idx] == nxt:
                        found = idx
                        break
                if found < 0:
                    raise NumericError("open section loop in clip")
                nxt = self.cap_to[found]
                self.cap_used[found] = 1
                remaining -= 1
            if _distinct_at_least(self.out_cyc, nout, 3):
                nloops += 1
                if nloops > 1:
                    raise NumericError("multiple section loops in clip")
                if pb + nout > <int> self.pool_b.shape[0]:
                    raise NumericError("face pool overflow in clip")
                self.fpid_b[nnf] = ph
                self.fstart_b[nnf] = pb
                self.flen_b[nnf] = nout
                for idx in range(nout):
                    self.pool_b[pb + idx] = self.out_cyc[idx]
                pb += nout
                nnf += 1

        # Compact the referenced vertices, remapping pool ids in place.
        for v in range(nw):
            self.remap[v] = -1
        for idx in range(pb):
            self.remap[self.pool_b[idx]] = 0
        cdef int nkeep = 0
        for v in range(nw):
            if self.remap[v] == 0:
                self.remap[v] = nkeep
                self.va[nkeep, 0] = self.wv[v, 0]
                self.va[nkeep, 1] = self.wv[v, 1]
                self.va[nkeep, 2] = self.wv[v, 2]
                self.ta[nkeep, 0] = self.wt[v, 0]
                self.ta[nkeep, 1] = self.wt[v, 1]
                self.ta[nkeep, 2] = self.wt[v, 2]
                memcpy(&self.vch[nkeep, 0], &self.wch[v, 0], 20 * sizeof(double))
                nkeep += 1
        if nkeep < 4 or nnf < 4:
            self.nva = 0
            self.nfa = 0
            return 2
        for idx in range(pb):
            self.pool_b[idx] = self.remap[self.pool_b[idx]]
        self.nva = nkeep
        self.nfa = nnf
        self.fpid_a, self.fpid_b = self.fpid_b, self.fpid_a
        self.fstart_a, self.fstart_b = self.fstart_b, self.fstart_a
        self.flen_a, self.flen_b = self.flen_b, self.flen_a
        self.pool_a, self.pool_b = self.pool_b, self.pool_a
        self.psite[ph] = hsite
        self.nplanes = ph + 1
        return 1

    cdef int _cut(self, int a, int b, double* r3, int ph, int* nw, int* ncut) except -9:
        """Deduplicated section vertex on edge (a, b)."""
        cdef int amin = a if a < b else b
        cdef int amax = b if a < b else a
        cdef int idx, s0, s1, p, q, na, nb
        for idx in range(ncut[0]):
            if self.cut_e[3 * idx] == amin and self.cut_e[3 * idx + 1] == amax:
                return self.cut_e[3 * idx + 2]
        # Two smallest plane ids shared by both support triples.
        s0 = -1
        s1 = -1
        na = 0
        nb = 0
        while na < 3 and nb < 3:
            p = self.wt[a, na]
            q = self.wt[b, nb]
            if p == q:
                if s0 < 0:
                    s0 = p
                elif s1 < 0:
                    s1 = p
                na += 1
                nb += 1
            elif p < q:
                na += 1
            else:
                nb += 1
        if s1 < 0:
            raise NumericError("inconsistent cell connectivity in clip")
        cdef double ax = self.wv[a, 0]
        cdef double ay = self.wv[a, 1]
        cdef double az = self.wv[a, 2]
        cdef double bx = self.wv[b, 0]
        cdef double by = self.wv[b, 1]
        cdef double bz = self.wv[b, 2]
        cdef double fa = r3[0] * ax + r3[1] * ay + r3[2] * az - r3[3]
        cdef double fb = r3[0] * bx + r3[1] * by + r3[2] * bz - r3[3]
        cdef double den = fa - fb
        cdef double t = 0.5 if den == 0.0 else fa / den
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        cdef int vid = nw[0]
        if vid >= <int> self.wv.shape[0]:
            raise NumericError("vertex buffer overflow in clip")
        self.wv[vid, 0] = ax + t * (bx - ax)
        self.wv[vid, 1] = ay + t * (by - ay)
        self.wv[vid, 2] = az + t * (bz - az)
        self.wt[vid, 0] = s0
        self.wt[vid, 1] = s1
        self.wt[vid, 2] = ph
        _fill_cache(&self.wch[vid, 0], &self.prow[s0, 0], &self.prow[s1, 0],
                    &self.prow[ph, 0])
        nw[0] += 1
        self.cut_e[3 * ncut[0]] = amin
        self.cut_e[3 * ncut[0] + 1] = amax
        self.cut_e[3 * ncut[0] + 2] = vid
        ncut[0] += 1
        return vid

    cdef void _accumulate(self, Py_ssize_t i, double mass, double momx,
                          double momy, double momz, double cost):
        cdef double[5] vals
        vals[0] = mass
        vals[1] = momx
        vals[2] = momy
        vals[3] = momz
        vals[4] = cost
        cdef int c
        cdef double s, x, t
        for c in range(5):
            s = self.sums[i, c]
            x = vals[c]
            t = s + x
            if fabs(s) >= fabs(x):
                self.comps[i, c] += (s - t) + x
            else:
                self.comps[i, c] += (x - t) + s
            self.sums[i, c] = t

    def clip_couple(self, Py_ssize_t t, Py_ssize_t i, cand_idx, cand_dist,
                    bint exhausted, bint want_duals=False):
        """(status, bisector sites, facet bitmask, dual tuples) of a couple.

        ``exhausted`` tells the kernel the candidate list already holds
        every other site, so running out of it finalizes the cell.
        """
        cdef long long[::1] cidx = np.ascontiguousarray(cand_idx, dtype=np.int64)
        cdef double[::1] cdist = np.ascontiguousarray(cand_dist, dtype=np.float64)

        cdef int f, v, c
        self.nplanes = 4
        for f in range(4):
            self.prow[f, 0] = self.facet_planes[t, f, 0]
            self.prow[f, 1] = self.facet_planes[t, f, 1]
            self.prow[f, 2] = self.facet_planes[t, f, 2]
            self.prow[f, 3] = self.facet_planes[t, f, 3]
            self.psite[f] = -1
        self.nva = 4
        cdef int pb = 0
        for v in range(4):
            self.va[v, 0] = self.corners[t, v, 0]
            self.va[v, 1] = self.corners[t, v, 1]
            self.va[v, 2] = self.corners[t, v, 2]
            self.ta[v, 0] = _TET_TRIPLES[v][0]
            self.ta[v, 1] = _TET_TRIPLES[v][1]
            self.ta[v, 2] = _TET_TRIPLES[v][2]
            _fill_cache(
                &self.vch[v, 0],
                &self.prow[_TET_TRIPLES[v][0], 0],
                &self.prow[_TET_TRIPLES[v][1], 0],
                &self.prow[_TET_TRIPLES[v][2], 0],
            )
        self.nfa = 4
        for f in range(4):
            self.fpid_a[f] = f
            self.fstart_a[f] = pb
            self.flen_a[f] = 3
            for c in range(3):
                self.pool_a[pb + c] = _TET_FACES[f][c]
            pb += 3

        cdef double px = self.points[i, 0]
        cdef double py = self.points[i, 1]
        cdef double pz = self.points[i, 2]
        cdef double wi = self.weights[i]
        cdef double radius = -1.0
        cdef bint certified = False
        cdef Py_ssize_t m, j
        cdef double qx, qy, qz, wj, dx, dy, dz, d, dist, lhs, rhs, slack
        cdef double r3[4]
        cdef int res
        for m in range(cidx.shape[0]):
            j = cidx[m]
            if self.use_certificate:
                if radius < 0.0:
                    radius = 0.0
                    for v in range(self.nva):
                        dx = self.va[v, 0] - px
                        dy = self.va[v, 1] - py
                        dz = self.va[v, 2] - pz
                        d = sqrt(dx * dx + dy * dy + dz * dz)
                        if d > radius:
                            radius = d
                dist = cdist[m]
                lhs = dist * dist - 2.0 * dist * radius
                rhs = self.w_max - wi
                slack = _CERT_BOUND * (dist * dist + 2.0 * dist * radius + fabs(rhs))
                if lhs > rhs + slack:
                    certified = True
                    break
            qx = self.points[j, 0]
            qy = self.points[j, 1]
            qz = self.points[j, 2]
            wj = self.weights[j]
            r3[0] = 2.0 * (qx - px)
            r3[1] = 2.0 * (qy - py)
            r3[2] = 2.0 * (qz - pz)
            r3[3] = (
                (qx * qx + qy * qy + qz * qz)
                - (px * px + py * py + pz * pz)
                - wj
                + wi
            )
            res = self._clip(r3, <int> j, <int> i)
            if res == 2:
                return EMPTY, None, 0, None
            if res == 1:
                radius = -1.0
        if not (certified or exhausted or not self.use_certificate):
            return NEED_MORE, None, 0, None

        self._integrate(t, i, px, py, pz)

        bis = set()
        cdef int fmask = 0
        cdef int pid, s
        for f in range(self.nfa):
            pid = self.fpid_a[f]
            s = self.psite[pid]
            if s >= 0:
                bis.add(s)
            elif pid < 4:
                fmask |= 1 << pid
        duals = None
        cdef int s0, s1, s2
        if want_duals:
            duals = []
            for v in range(self.nva):
                s0 = self.psite[self.ta[v, 0]]
                s1 = self.psite[self.ta[v, 1]]
                s2 = self.psite[self.ta[v, 2]]
                if s0 >= 0 and s1 >= 0 and s2 >= 0:
                    duals.append(tuple(sorted((<int> i, s0, s1, s2))))
        return OK, sorted(bis), fmask, duals

    cdef void _integrate(self, Py_ssize_t t, Py_ssize_t i,
                         double rx, double ry, double rz):
        cdef double aax, aay, aaz, beta
        if self.has_rho:
            aax = self.rho[t, 0]
            aay = self.rho[t, 1]
            aaz = self.rho[t, 2]
            beta = self.rho[t, 3]
        else:
            aax = aay = aaz = 0.0
            beta = 1.0

        cdef int nv = self.nva
        cdef double gx = 0.0
        cdef double gy = 0.0
        cdef double gz = 0.0
        cdef int v, f, k, c, m, base
        for v in range(nv):
            gx += self.va[v, 0]
            gy += self.va[v, 1]
            gz += self.va[v, 2]
        gx /= nv
        gy /= nv
        gz /= nv
        cdef double rho_g = aax * gx + aay * gy + aaz * gz + beta

        cdef double mass = 0.0
        cdef double momx = 0.0
        cdef double momy = 0.0
        cdef double momz = 0.0
        cdef double cost = 0.0
        cdef int i0, i1, i2
        cdef double v0x, v0y, v0z, v1x, v1y, v1z, v2x, v2y, v2z
        cdef double rho0, rho1, rho2, srho, vol
        cdef double e1x, e1y, e1z, e2x, e2y, e2z, e3x, e3y, e3z
        cdef double p0, p1, p2, p3, sc, pc, mc, rc
        cdef double d0, d1, d2, d3, sd, pfd, pdd, pfdd
        for f in range(self.nfa):
            base = self.fstart_a[f]
            m = self.flen_a[f]
            i0 = self.pool_a[base]
            v0x = self.va[i0, 0]
            v0y = self.va[i0, 1]
            v0z = self.va[i0, 2]
            rho0 = aax * v0x + aay * v0y + aaz * v0z + beta
            for k in range(1, m - 1):
                i1 = self.pool_a[base + k]
                i2 = self.pool_a[base + k + 1]
                v1x = self.va[i1, 0]
                v1y = self.va[i1, 1]
                v1z = self.va[i1, 2]
                v2x = self.va[i2, 0]
                v2y = self.va[i2, 1]
                v2z = self.va[i2, 2]
                e1x = v0x - gx
                e1y = v0y - gy
                e1z = v0z - gz
                e2x = v1x - gx
                e2y = v1y - gy
                e2z = v1z - gz
                e3x = v2x - gx
                e3y = v2y - gy
                e3z = v2z - gz
                vol = (
                    e1x * (e2y * e3z - e2z * e3y)
                    - e1y * (e2x * e3z - e2z * e3x)
                    + e1z * (e2x * e3y - e2y * e3x)
                ) / 6.0
                if vol == 0.0:
                    continue
                rho1 = aax * v1x + aay * v1y + aaz * v1z + beta
                rho2 = aax * v2x + aay * v2y + aaz * v2z + beta
                srho = rho_g + rho0 + rho1 + rho2
                mass += vol * 0.25 * srho
                for c in range(3):
                    if c == 0:
                        p0 = gx
                        p1 = v0x
                        p2 = v1x
                        p3 = v2x
                        rc = rx
                    elif c == 1:
                        p0 = gy
                        p1 = v0y
                        p2 = v1y
                        p3 = v2y
                        rc = ry
                    else:
                        p0 = gz
                        p1 = v0z
                        p2 = v1z
                        p3 = v2z
                        rc = rz
                    sc = p0 + p1 + p2 + p3
                    pc = rho_g * p0 + rho0 * p1 + rho1 * p2 + rho2 * p3
                    mc = vol / 20.0 * (pc + srho * sc)
                    if c == 0:
                        momx += mc
                    elif c == 1:
                        momy += mc
                    else:
                        momz += mc
                    d0 = p0 - rc
                    d1 = p1 - rc
                    d2 = p2 - rc
                    d3 = p3 - rc
                    sd = d0 + d1 + d2 + d3
                    pfd = rho_g * d0 + rho0 * d1 + rho1 * d2 + rho2 * d3
                    pdd = d0 * d0 + d1 * d1 + d2 * d2 + d3 * d3
                    pfdd = (
                        rho_g * d0 * d0 + rho0 * d1 * d1
                        + rho1 * d2 * d2 + rho2 * d3 * d3
                    )
                    cost += vol / 120.0 * (
                        srho * sd * sd + 2.0 * pfd * sd + pdd * srho + 2.0 * pfdd
                    )
        # Sliver cells can round to a negative mass; keep the partition
        # invariant m_i >= 0 intact.
        self._accumulate(i, mass if mass > 0.0 else 0.0, momx, momy, momz, cost)


cdef bint _distinct_at_least(int[::1] buf, int n, int want):
    cdef int cnt = 0
    cdef int a, b
    cdef bint fresh
    for a in range(n):
        fresh = True
        for b in range(a):
            if buf[b] == buf[a]:
                fresh = False
                break
        if fresh:
            cnt += 1
            if cnt >= want:
                return True
    return False
