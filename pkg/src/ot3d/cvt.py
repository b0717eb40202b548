"""Centroidal Voronoi sampling of the mesh measure.

The quantization noise power of a point set Y is

    Q(Y) = integral over M of min_i ||x - y_i||^2 dmu

which is the restricted power diagram's total cost at zero weights.
Its gradient is 2 m_i (y_i - g_i) with m_i, g_i the mass and centroid
of the Voronoi cell of y_i restricted to M, so Lloyd's move y_i <- g_i
is a gradient-descent step and Q never increases.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .predicates import EXACT, check_mode
from .restricted import evaluate
from .sites import SiteSet, lifted_points


@dataclass
class CvtState:
    """Snapshot of one Lloyd evaluation: Q, cell masses and centroids."""

    points: np.ndarray
    value: float
    masses: np.ndarray
    centroids: np.ndarray


def cvt_state(mesh, points, mode=EXACT, provider="knn", n_workers=1):
    """Evaluate the zero-weight diagram of Y restricted to the mesh.

    Zero-mass cells keep their own point as centroid so the arrays
    stay total; Lloyd replaces those points anyway.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    acc = evaluate(
        mesh, SiteSet(points), mode=mode, provider=provider, n_workers=n_workers
    )
    m = acc.masses
    centroids = np.where(
        (m > 0.0)[:, None], acc.moments / np.where(m > 0.0, m, 1.0)[:, None], points
    )
    return CvtState(
        points=points,
        value=math.fsum(acc.costs.tolist()),
        masses=m,
        centroids=centroids,
    )


def quantization_energy(mesh, points, mode=EXACT, provider="knn", n_workers=1):
    """Q(Y) and its gradient 2 m_i (y_i - g_i); zero-mass cells get 0."""
    st = cvt_state(mesh, points, mode=mode, provider=provider, n_workers=n_workers)
    grad = 2.0 * st.masses[:, None] * (st.points - st.centroids)
    return st.value, grad


def sample_mesh(mesh, k, rng):
    """k points distributed over the mesh: tets by mass, then uniform
    barycentric coordinates inside the chosen tet."""
    if k < 1:
        raise InputError("need at least one sample point")
    masses = mesh.tet_masses
    total = masses.sum()
    if total <= 0.0:
        raise InputError("mesh measure is zero, nothing to sample")
    t = rng.choice(len(masses), size=k, p=masses / total)
    bary = rng.dirichlet(np.ones(4), size=k)
    return np.einsum("kc,kcj->kj", bary, mesh.corners[t])


def lloyd(
    mesh,
    k,
    iters=30,
    seed=0,
    mode=EXACT,
    provider="knn",
    n_workers=1,
    callback=None,
):
    """k-point CVT sampling of the mesh by Lloyd relaxation.

    Starts from a random mass-proportional sampling, then iters times
    moves every point to its restricted Voronoi cell centroid;
    zero-mass points are re-seeded from fresh random draws.
    callback(iteration, points, Q) fires after each evaluation, before
    the points move.
    """
    check_mode(mode)
    if iters < 0:
        raise InputError("iteration count must be >= 0")
    rng = np.random.default_rng(seed)
    pts = sample_mesh(mesh, k, rng)
    for it in range(iters):
        st = cvt_state(mesh, pts, mode=mode, provider=provider, n_workers=n_workers)
        if callback is not None:
            callback(it, pts, st.value)
        pts = st.centroids.copy()
        dead = st.masses == 0.0
        if dead.any():
            pts[dead] = sample_mesh(mesh, int(dead.sum()), rng)
    return pts


def lifted_energy(mesh, sites, mode=EXACT, provider="knn", n_workers=1):
    """Quantization energy of the sites lifted to 4D.

    Each site rises to height h_i = sqrt(w_max - w_i), which turns its
    power cell into the Voronoi cell of the lifted point; the cost
    integral gains the constant h_i^2 per unit mass:

        Q_hat = sum_i (cost_i + h_i^2 m_i)
              = f(W) + w_max mu(M)

    where f(W) = sum_i integral (||x - y_i||^2 - w_i) dmu.
    """
    acc = evaluate(mesh, sites, mode=mode, provider=provider, n_workers=n_workers)
    h2 = lifted_points(sites)[:, 3] ** 2
    return math.fsum(acc.costs.tolist()) + math.fsum((h2 * acc.masses).tolist())
