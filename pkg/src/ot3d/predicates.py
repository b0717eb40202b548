"""Filtered and exact sign predicates for half-space clipping.

Clipping never trusts a floating-point sign near zero.  Every predicate
is first evaluated in plain double precision together with a forward
error bound; when the bound cannot certify the sign, the computation is
repeated in exact rational arithmetic.  Exact ties are resolved by
index-based symbolic perturbation of the site weights: the diagram
behaves as if every weight w_m had been increased by an infinitesimal
eta_m with eta_0 >> eta_1 >> ... > 0, so on a tie the smaller site
index claims the contested point.

A cell vertex is represented combinatorially as the intersection of
three planes.  Its position against a fourth plane (n.x <= d keeps the
point) has the sign of ``-det4 * det3`` where det3 is the determinant
of the three supporting normals and det4 the determinant of all four
rows ``(nx, ny, nz, d)``.  Both determinants are polynomials in the
stored double coefficients, so their signs can be made exact.
"""

from __future__ import annotations

from fractions import Fraction

from .errors import NumericError

FAST = "fast"
EXACT = "exact"
MODES = (FAST, EXACT)

# Unit roundoff of IEEE doubles, scaled generously for the expression
# depth of the formulas below.  A failed filter only costs the exact
# fallback, so the constants err on the safe side.
_EPS = 2.220446049250313e-16
_DET3_BOUND = 32.0 * _EPS
_DET4_BOUND = 128.0 * _EPS
_DOT_BOUND = 32.0 * _EPS


def check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"unknown predicate mode {mode!r}")


def sign(x):
    if x > 0.0:
        return 1
    if x < 0.0:
        return -1
    return 0


def det3(a, b, c):
    return (
        a[0] * (b[1] * c[2] - b[2] * c[1])
        - a[1] * (b[0] * c[2] - b[2] * c[0])
        + a[2] * (b[0] * c[1] - b[1] * c[0])
    )


def perm3(a, b, c):
    # Sum of the absolute values of the six expansion products; the
    # forward error of det3 is a small multiple of eps times this.
    return (
        abs(a[0]) * (abs(b[1] * c[2]) + abs(b[2] * c[1]))
        + abs(a[1]) * (abs(b[0] * c[2]) + abs(b[2] * c[0]))
        + abs(a[2]) * (abs(b[0] * c[1]) + abs(b[1] * c[0]))
    )


def cross(a, b):
    return (
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )


def cross_bound(a, b):
    # Componentwise magnitude sums of the cross expansion; dotting a
    # third row against these bounds the det3 forward error.
    return (
        abs(a[1] * b[2]) + abs(a[2] * b[1]),
        abs(a[0] * b[2]) + abs(a[2] * b[0]),
        abs(a[0] * b[1]) + abs(a[1] * b[0]),
    )


def dot3(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def dot3_abs(a, b):
    return abs(a[0]) * b[0] + abs(a[1]) * b[1] + abs(a[2]) * b[2]


def clip_side_filtered(r0, r1, r2, r3):
    """Filtered sign of n3 . v - d3 for the vertex v supported by rows 0..2.

    Each row is a plane (nx, ny, nz, d).  Returns -1, 0 (never: ties are
    inconclusive here) or +1, or None when the error bound cannot
    certify the result.  The three cofactor determinants against row 3
    are evaluated as dot products with the pair crosses of rows 0..2,
    which lets callers that test one vertex against many planes cache
    the vertex-only part.
    """
    n0 = (r0[0], r0[1], r0[2])
    n1 = (r1[0], r1[1], r1[2])
    n2 = (r2[0], r2[1], r2[2])
    n3 = (r3[0], r3[1], r3[2])
    c12 = cross(n1, n2)
    p12 = cross_bound(n1, n2)
    m3 = dot3(n0, c12)
    pm = dot3_abs(n0, p12)
    if abs(m3) <= _DET3_BOUND * pm:
        return None
    c02 = cross(n0, n2)
    c01 = cross(n0, n1)
    m0 = dot3(n3, c12)
    m1 = dot3(n3, c02)
    m2 = dot3(n3, c01)
    d4 = -r0[3] * m0 + r1[3] * m1 - r2[3] * m2 + r3[3] * m3
    p4 = (
        abs(r0[3]) * dot3_abs(n3, p12)
        + abs(r1[3]) * dot3_abs(n3, cross_bound(n0, n2))
        + abs(r2[3]) * dot3_abs(n3, cross_bound(n0, n1))
        + abs(r3[3]) * pm
    )
    if abs(d4) <= _DET4_BOUND * p4:
        return None
    return -sign(d4) * sign(m3)


def _fr_det3(a, b, c):
    return (
        a[0] * (b[1] * c[2] - b[2] * c[1])
        - a[1] * (b[0] * c[2] - b[2] * c[0])
        + a[2] * (b[0] * c[1] - b[1] * c[0])
    )


def clip_side_exact(rows, row_sites, owner):
    """Exact sign of n3 . v - d3, with symbolic weight perturbation.

    ``rows`` holds four plane rows; rows 0..2 support the vertex, row 3
    is the test plane.  ``row_sites[m]`` names the site a bisector row
    separates the cell owner from (-1 for weightless planes).  When the
    unperturbed determinant vanishes, the perturbed offset of bisector
    row m changes by eta_owner - eta_{row_sites[m]}, and the first
    nonzero coefficient in increasing site index decides.  Returns 0
    only when the vertex stays on the plane for every perturbation.
    """
    fr = [tuple(Fraction(v) for v in r) for r in rows]
    n = [r[:3] for r in fr]
    m3 = _fr_det3(n[0], n[1], n[2])
    if m3 == 0:
        raise NumericError("degenerate vertex support in exact predicate")
    s3 = 1 if m3 > 0 else -1
    m0 = _fr_det3(n[1], n[2], n[3])
    m1 = _fr_det3(n[0], n[2], n[3])
    m2 = _fr_det3(n[0], n[1], n[3])
    cof = (-m0, m1, -m2, m3)
    d4 = fr[0][3] * cof[0] + fr[1][3] * cof[1] + fr[2][3] * cof[2] + fr[3][3] * cof[3]
    if d4 != 0:
        return -(1 if d4 > 0 else -1) * s3
    coeff = {}
    for m in range(4):
        s = row_sites[m]
        if s < 0:
            continue
        coeff[s] = coeff.get(s, 0) - cof[m]
        if owner >= 0:
            coeff[owner] = coeff.get(owner, 0) + cof[m]
    for s in sorted(coeff):
        c = coeff[s]
        if c != 0:
            return -(1 if c > 0 else -1) * s3
    return 0


def clip_side(r0, r1, r2, r3, s0, s1, s2, s3, owner):
    """Exact-mode vertex-versus-plane side, filtered then exact."""
    res = clip_side_filtered(r0, r1, r2, r3)
    if res is not None:
        return res
    return clip_side_exact((r0, r1, r2, r3), (s0, s1, s2, s3), owner)


def power_side(x, pi, wi, i, pj, wj, j, mode=EXACT):
    """Index of the site whose power distance to x is smaller.

    Ties are claimed by the smaller index, matching the symbolic weight
    perturbation used everywhere else.
    """
    check_mode(mode)
    di = (x[0] - pi[0]) ** 2 + (x[1] - pi[1]) ** 2 + (x[2] - pi[2]) ** 2
    dj = (x[0] - pj[0]) ** 2 + (x[1] - pj[1]) ** 2 + (x[2] - pj[2]) ** 2
    v = (di - wi) - (dj - wj)
    if mode == FAST:
        if v < 0.0:
            return i
        if v > 0.0:
            return j
        return min(i, j)
    if abs(v) > _DOT_BOUND * (abs(di) + abs(wi) + abs(dj) + abs(wj)):
        return i if v < 0.0 else j
    fx = tuple(Fraction(c) for c in x)
    fdi = sum((fx[c] - Fraction(pi[c])) ** 2 for c in range(3)) - Fraction(wi)
    fdj = sum((fx[c] - Fraction(pj[c])) ** 2 for c in range(3)) - Fraction(wj)
    if fdi < fdj:
        return i
    if fdj < fdi:
        return j
    return min(i, j)


def orient3d(a, b, c, d):
    """Exact sign of det(b - a, c - a, d - a); 0 for coplanar points."""
    u = (b[0] - a[0], b[1] - a[1], b[2] - a[2])
    v = (c[0] - a[0], c[1] - a[1], c[2] - a[2])
    w = (d[0] - a[0], d[1] - a[1], d[2] - a[2])
    val = det3(u, v, w)
    if abs(val) > _DET3_BOUND * perm3(u, v, w):
        return sign(val)
    fa = tuple(Fraction(t) for t in a)
    fu = tuple(Fraction(b[k]) - fa[k] for k in range(3))
    fv = tuple(Fraction(c[k]) - fa[k] for k in range(3))
    fw = tuple(Fraction(d[k]) - fa[k] for k in range(3))
    val = _fr_det3(fu, fv, fw)
    if val > 0:
        return 1
    if val < 0:
        return -1
    return 0


def plane_point_side(n, d, p):
    """Exact sign of n . p - d for double inputs."""
    t0 = n[0] * p[0]
    t1 = n[1] * p[1]
    t2 = n[2] * p[2]
    val = t0 + t1 + t2 - d
    if abs(val) > _DOT_BOUND * (abs(t0) + abs(t1) + abs(t2) + abs(d)):
        return sign(val)
    val = (
        Fraction(n[0]) * Fraction(p[0])
        + Fraction(n[1]) * Fraction(p[1])
        + Fraction(n[2]) * Fraction(p[2])
        - Fraction(d)
    )
    if val > 0:
        return 1
    if val < 0:
        return -1
    return 0
