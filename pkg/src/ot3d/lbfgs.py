"""Limited-memory BFGS with a strong Wolfe line search.

Minimizes f from a (value, gradient) callable.  The two-loop recursion
keeps the last 7 curvature pairs by default; the line search brackets
then zooms with quadratic interpolation, enforcing

    f(x + a d) <= f(x) + c1 a <grad, d>      (sufficient decrease)
    |<grad(x + a d), d>| <= c2 |<grad, d>|   (curvature)

with c1=1e-4, c2=0.9.  The very first step is scaled by 1/||grad||,
later iterations try a=1 first.  A failed line search ends the run
with the current (best so far, by monotonicity) iterate and
converged=False.
"""

from dataclasses import dataclass

import numpy as np

_C1 = 1e-4
_C2 = 0.9
_MAX_BRACKET = 30
_MAX_ZOOM = 40
_CURV_SKIP = 1e-10


@dataclass
class MinimizeResult:
    x: np.ndarray
    value: float
    gradient: np.ndarray
    iterations: int
    evaluations: int
    converged: bool


class _Counted:
    def __init__(self, fun):
        self.fun = fun
        self.n = 0

    def __call__(self, x):
        self.n += 1
        f, g = self.fun(x)
        return float(f), np.asarray(g, dtype=np.float64)


def _interp_quadratic(a_lo, f_lo, d_lo, a_hi, f_hi):
    """Minimizer of the quadratic through (a_lo, f_lo, d_lo), (a_hi, f_hi)."""
    den = 2.0 * (f_hi - f_lo - d_lo * (a_hi - a_lo))
    if den == 0.0:
        return 0.5 * (a_lo + a_hi)
    a = a_lo - d_lo * (a_hi - a_lo) ** 2 / den
    lo, hi = min(a_lo, a_hi), max(a_lo, a_hi)
    span = hi - lo
    # Keep a safe distance from the bracket ends or fall back to bisection.
    if not np.isfinite(a) or a < lo + 0.1 * span or a > hi - 0.1 * span:
        return 0.5 * (a_lo + a_hi)
    return a


def _zoom(fun, x, d, a_lo, a_hi, f_lo, d_lo, f_hi, f0, d0):
    """Wolfe point inside a bracket whose low end satisfies Armijo."""
    for _ in range(_MAX_ZOOM):
        a = _interp_quadratic(a_lo, f_lo, d_lo, a_hi, f_hi)
        f, g = fun(x + a * d)
        da = float(np.dot(g, d))
        if f > f0 + _C1 * a * d0 or f >= f_lo:
            a_hi, f_hi = a, f
        else:
            if abs(da) <= -_C2 * d0:
                return a, f, g
            if da * (a_hi - a_lo) >= 0.0:
                a_hi, f_hi = a_lo, f_lo
            a_lo, f_lo, d_lo = a, f, da
        if abs(a_hi - a_lo) <= 1e-16 * max(1.0, abs(a_lo)):
            return None
    return None


def _line_search(fun, x, d, f0, g0, a_first):
    """Strong Wolfe step along d; returns (a, f, g) or None."""
    d0 = float(np.dot(g0, d))
    if d0 >= 0.0:
        return None
    a_prev, f_prev, d_prev = 0.0, f0, d0
    a = a_first
    for it in range(_MAX_BRACKET):
        f, g = fun(x + a * d)
        da = float(np.dot(g, d))
        if f > f0 + _C1 * a * d0 or (it > 0 and f >= f_prev):
            return _zoom(fun, x, d, a_prev, a, f_prev, d_prev, f, f0, d0)
        if abs(da) <= -_C2 * d0:
            return a, f, g
        if da >= 0.0:
            return _zoom(fun, x, d, a, a_prev, f, da, f_prev, f0, d0)
        a_prev, f_prev, d_prev = a, f, da
        a = 2.0 * a
        if not np.isfinite(a) or a > 1e20:
            return None
    return None


def minimize(fun, x0, gtol, max_iter, history=7, callback=None):
    """Minimize fun: x -> (f, grad); stop when ||grad||_2 <= gtol.

    Returns the last accepted iterate on line-search failure, with
    converged=False; max_iter counts accepted L-BFGS updates, not
    function evaluations.  callback(x, f, gnorm) fires once per
    accepted iterate.
    """
    fun = _Counted(fun)
    x = np.array(x0, dtype=np.float64)
    f, g = fun(x)
    gnorm = float(np.linalg.norm(g))
    pairs = []  # (s, y, 1/(y.s)) newest last
    it = 0
    converged = gnorm <= gtol
    while not converged and it < max_iter:
        d = -g
        if pairs:
            alpha = np.empty(len(pairs))
            for m in range(len(pairs) - 1, -1, -1):
                s, y, rho = pairs[m]
                alpha[m] = rho * np.dot(s, d)
                d -= alpha[m] * y
            s, y, rho = pairs[-1]
            d *= np.dot(s, y) / np.dot(y, y)
            for m in range(len(pairs)):
                s, y, rho = pairs[m]
                beta = rho * np.dot(y, d)
                d += (alpha[m] - beta) * s
        if np.dot(g, d) >= 0.0:
            # Stale curvature turned d uphill; restart from steepest descent.
            pairs.clear()
            d = -g
        a_first = 1.0 if pairs else min(1.0, 1.0 / gnorm)
        hit = _line_search(fun, x, d, f, g, a_first)
        if hit is None:
            break
        a, f_new, g_new = hit
        s = a * d
        y = g_new - g
        sy = float(np.dot(s, y))
        if sy > _CURV_SKIP * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            pairs.append((s, y, 1.0 / sy))
            if len(pairs) > history:
                pairs.pop(0)
        x = x + s
        f, g = f_new, g_new
        gnorm = float(np.linalg.norm(g))
        it += 1
        if callback is not None:
            callback(x, f, gnorm)
        converged = gnorm <= gtol
    return MinimizeResult(
        x=x,
        value=f,
        gradient=g,
        iterations=it,
        evaluations=fun.n,
        converged=converged,
    )
