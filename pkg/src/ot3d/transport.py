"""Semi-discrete optimal transport between a tet mesh and point masses.

The weight vector W of the power diagram is found by maximizing

    g(W) = sum_i integral over Pow_W(y_i) of (||x - y_i||^2 - w_i) dmu
           + sum_i nu_i w_i

which is concave with gradient dg/dw_i = nu_i - m_i(W), where m_i is
the measure of the cell of y_i restricted to the mesh.  One objective
evaluation is one restricted power diagram computation; the quasi
Newton loop stops when ||grad g||_2 <= eps_factor * mu(M) / sqrt(k).

The multilevel variant optimizes nested prefixes of a randomly
permuted, spatially sorted site order, prescribing uniform masses
mu(M)/e_l at each level and seeding new weights by local polynomial
regression from the sites already solved.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import lbfgs
from .errors import InputError
from .hilbert import hilbert_order
from .predicates import EXACT, check_mode
from .restricted import evaluate
from .sites import SiteSet, make_provider, validate_masses


@dataclass
class Objective:
    """g, its gradient nu - m, and the gradient's Euclidean norm."""

    value: float
    gradient: np.ndarray
    gradient_norm: float


@dataclass
class SolveReport:
    weights: np.ndarray
    iterations: int
    gradient_norm: float
    evaluations: int
    converged: bool
    elapsed: float = 0.0
    levels: list = field(default_factory=list)


def _objective_terms(mesh, sites, weights, mode, provider, n_workers):
    acc = evaluate(
        mesh, sites.with_weights(weights), mode=mode, provider=provider,
        n_workers=n_workers,
    )
    grad = sites.masses - acc.masses
    # cost_i already carries the -w_i m_i and +nu_i w_i terms folded in
    # exactly: g = sum cost_i + sum w_i (nu_i - m_i).
    value = math.fsum(acc.costs.tolist()) + math.fsum((weights * grad).tolist())
    return value, grad


def objective(mesh, sites, weights=None, mode=EXACT, provider="knn", n_workers=1):
    """Evaluate g and grad g at the given weights (default: the sites')."""
    if sites.masses is None:
        raise InputError("objective needs site masses nu_i")
    if weights is None:
        weights = sites.weights
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    if weights.shape != (sites.k,):
        raise InputError(f"expected {sites.k} weights, got shape {weights.shape}")
    value, grad = _objective_terms(mesh, sites, weights, mode, provider, n_workers)
    return Objective(value, grad, float(np.linalg.norm(grad)))


def solve_single_level(
    mesh,
    sites,
    w0=None,
    eps_factor=0.01,
    max_iter=2000,
    mode=EXACT,
    provider="knn",
    n_workers=1,
    callback=None,
):
    """Maximize g from W0 (default 0); converged iff ||grad|| <= eps.

    callback(w, g, gnorm) fires once per accepted iterate, with the
    objective already negated back to the maximization sign.
    """
    check_mode(mode)
    measure = mesh.measure()
    validate_masses(sites, measure)
    k = sites.k
    eps = eps_factor * measure / math.sqrt(k)
    if w0 is None:
        w0 = np.zeros(k)
    if isinstance(provider, str):
        # One kd-tree for the whole solve: candidates depend on the
        # fixed positions, only the weights move.
        provider = make_provider(sites, provider)

    def fun(w):
        value, grad = _objective_terms(mesh, sites, w, mode, provider, n_workers)
        return -value, -grad

    watch = None
    if callback is not None:
        watch = lambda x, f, gnorm: callback(x, -f, gnorm)
    t0 = time.perf_counter()
    res = lbfgs.minimize(fun, w0, gtol=eps, max_iter=max_iter, callback=watch)
    return SolveReport(
        weights=res.x,
        iterations=res.iterations,
        gradient_norm=float(np.linalg.norm(res.gradient)),
        evaluations=res.evaluations,
        converged=res.converged,
        elapsed=time.perf_counter() - t0,
    )


@dataclass
class LevelPlan:
    """Site order and nested prefix boundaries for the multilevel solve."""

    order: np.ndarray
    ends: list

    @property
    def n_levels(self):
        return len(self.ends)

    def ranges(self):
        b = 0
        for e in self.ends:
            yield b, e
            b = e


def build_level_plan(sites, ratio=0.125, min_coarsest=100, seed=0):
    """Random permutation, nested prefixes, per-level spatial sort.

    Prefix sizes follow s_{j-1} = round(s_j * ratio) down from k,
    stopping before a prefix would drop below min_coarsest.  Each
    level's index slice is ordered along the Hilbert curve so that the
    optimizer and the diagram walk share spatial locality.
    """
    if not 0.0 < ratio < 1.0:
        raise InputError(f"level ratio must be in (0, 1), got {ratio}")
    k = sites.k
    ends = [k]
    while True:
        nxt = round(ends[0] * ratio)
        if nxt < min_coarsest:
            break
        ends.insert(0, nxt)
    rng = np.random.default_rng(seed)
    order = rng.permutation(k)
    b = 0
    for e in ends:
        sl = order[b:e]
        order[b:e] = sl[hilbert_order(sites.points[sl])]
        b = e
    return LevelPlan(order=order, ends=ends)


_DEG_MIN_PTS = {0: 1, 1: 10, 2: 20}
_DEG_TERMS = {0: 1, 1: 4, 2: 10}


def _poly_rows(delta, degree):
    n = len(delta)
    cols = [np.ones(n)]
    if degree >= 1:
        cols += [delta[:, 0], delta[:, 1], delta[:, 2]]
    if degree >= 2:
        x, y, z = delta[:, 0], delta[:, 1], delta[:, 2]
        cols += [x * x, y * y, z * z, x * y, x * z, y * z]
    return np.column_stack(cols)


def regress_weights(old_points, old_weights, new_points, degree):
    """Weights for new sites, fit from nearest already-solved sites.

    Degree 0 copies the nearest weight; degrees 1 and 2 fit a local
    polynomial by least squares on the 10 or 20 nearest old sites,
    centered on the queried site so the constant term is the answer.
    Too few points or a rank-deficient fit fall back one degree.
    """
    if degree not in _DEG_MIN_PTS:
        raise InputError(f"regression degree must be 0, 1 or 2, got {degree}")
    old_points = np.asarray(old_points, dtype=np.float64)
    old_weights = np.asarray(old_weights, dtype=np.float64)
    new_points = np.asarray(new_points, dtype=np.float64)
    n_old = len(old_points)
    if n_old < 1:
        raise InputError("regression needs at least one solved site")
    while n_old < _DEG_MIN_PTS[degree]:
        degree -= 1
    tree = cKDTree(old_points)
    out = np.empty(len(new_points))
    neigh = {
        d: tree.query(new_points, k=min(_DEG_MIN_PTS[d], n_old))
        for d in range(degree + 1)
    }
    for n, p in enumerate(new_points):
        d = degree
        while True:
            _, idx = neigh[d]
            nn = np.atleast_1d(idx[n])
            if d == 0:
                out[n] = old_weights[nn[0]]
                break
            delta = old_points[nn] - p
            scale = np.abs(delta).max()
            if scale == 0.0:
                scale = 1.0
            rows = _poly_rows(delta / scale, d)
            coef, _, rank, _ = np.linalg.lstsq(rows, old_weights[nn], rcond=None)
            if rank == _DEG_TERMS[d]:
                out[n] = coef[0]
                break
            d -= 1
    return out


def solve_multilevel(
    mesh,
    sites,
    eps_factor=0.01,
    degree=1,
    seed=0,
    ratio=0.125,
    min_coarsest=100,
    max_iter=2000,
    mode=EXACT,
    provider="knn",
    n_workers=1,
):
    """Coarse-to-fine solve over nested site prefixes (uniform nu).

    Every level prescribes nu_i = mu(M)/e_l for its active prefix and
    warm-starts the new sites' weights by regression from the solved
    ones.  The returned weights follow the input site order; the
    convergence flag is the last level's.
    """
    check_mode(mode)
    measure = mesh.measure()
    validate_masses(sites, measure)
    plan = build_level_plan(sites, ratio=ratio, min_coarsest=min_coarsest, seed=seed)
    pts = sites.points[plan.order]
    w = np.zeros(sites.k)
    levels = []
    iterations = 0
    evaluations = 0
    for b, e in plan.ranges():
        if b > 0:
            w[b:e] = regress_weights(pts[:b], w[:b], pts[b:e], degree)
        level_sites = SiteSet(pts[:e], w[:e], np.full(e, measure / e))
        rep = solve_single_level(
            mesh,
            level_sites,
            w0=w[:e],
            eps_factor=eps_factor,
            max_iter=max_iter,
            mode=mode,
            provider=provider,
            n_workers=n_workers,
        )
        w[:e] = rep.weights
        iterations += rep.iterations
        evaluations += rep.evaluations
        levels.append(rep)
    final = np.empty(sites.k)
    final[plan.order] = w
    last = levels[-1]
    return SolveReport(
        weights=final,
        iterations=iterations,
        gradient_norm=last.gradient_norm,
        evaluations=evaluations,
        converged=last.converged,
        elapsed=math.fsum(lv.elapsed for lv in levels),
        levels=levels,
    )


def load_weights(path):
    """Read a `.weights` file; see save_weights for the format."""
    from .tetmesh import _parse_floats, _tokenized_lines

    lines = _tokenized_lines(path)
    if not lines:
        raise InputError("empty weights file", path, 1)
    lineno, head = lines[0]
    if len(head) != 2 or head[0] != "weights":
        raise InputError("expected header 'weights <k>'", path, lineno)
    try:
        k = int(head[1])
    except ValueError:
        raise InputError("bad weight count", path, lineno) from None
    if k < 1:
        raise InputError("bad weight count", path, lineno)
    if len(lines) != 1 + k:
        raise InputError(f"expected {k} weight lines", path, lineno)
    out = np.empty(k)
    for n in range(k):
        lineno, toks = lines[1 + n]
        out[n] = _parse_floats(toks, 1, path, lineno, "weight")[0]
    return out


def save_weights(weights, path):
    """Write a `.weights` file: header `weights <k>`, one repr per line."""
    weights = np.asarray(weights, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"weights {len(weights)}\n")
        for v in weights:
            fh.write(f"{float(v)!r}\n")
