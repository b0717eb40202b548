import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from ot3d.lbfgs import minimize


def rosenbrock(x):
    f = np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1.0 - x[:-1]) ** 2)
    g = np.zeros_like(x)
    g[:-1] = -400.0 * x[:-1] * (x[1:] - x[:-1] ** 2) - 2.0 * (1.0 - x[:-1])
    g[1:] += 200.0 * (x[1:] - x[:-1] ** 2)
    return float(f), g


def test_rosenbrock_converges():
    res = minimize(rosenbrock, np.full(10, -1.2), gtol=1e-8, max_iter=500)
    assert res.converged
    assert np.abs(res.x - 1.0).max() < 1e-6
    assert res.evaluations >= res.iterations


def test_already_converged_takes_zero_iterations():
    def quad(x):
        return float(0.5 * x @ x), x.copy()

    res = minimize(quad, np.zeros(4), gtol=1e-12, max_iter=50)
    assert res.converged
    assert res.iterations == 0
    assert res.evaluations == 1


def test_max_iter_exhaustion_flags_unconverged():
    res = minimize(rosenbrock, np.full(6, -1.2), gtol=1e-12, max_iter=2)
    assert not res.converged
    assert res.iterations == 2


def test_unbounded_direction_fails_line_search():
    # Strong Wolfe curvature can never hold on a linear slope, so the
    # bracket grows until the search gives up.
    def slope(x):
        return float(x[0]), np.array([1.0])

    res = minimize(slope, np.array([3.0]), gtol=1e-10, max_iter=50)
    assert not res.converged
    assert res.x[0] == 3.0


def test_monotone_decrease_at_accepted_iterates():
    seen = []
    minimize(
        rosenbrock,
        np.full(8, -1.2),
        gtol=1e-9,
        max_iter=400,
        callback=lambda x, f, gnorm: seen.append(f),
    )
    assert len(seen) > 5
    assert all(b <= a for a, b in zip(seen, seen[1:]))


def test_singular_hessian_direction():
    # Gradient always orthogonal to (1,1,...): the flat direction must
    # not destabilize the two-loop recursion.
    def fun(x):
        c = x - x.mean()
        return float(0.5 * c @ c), c

    res = minimize(fun, np.arange(6.0), gtol=1e-12, max_iter=100)
    assert res.converged
    assert np.abs(res.x - res.x.mean()).max() < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 12))
def test_random_spd_quadratics_converge(seed, n):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, n))
    h = a.T @ a + np.eye(n)
    b = rng.normal(size=n)

    def quad(x):
        return float(0.5 * x @ h @ x - b @ x), h @ x - b

    # gtol must stay resolvable by f at double precision: near the
    # optimum df ~ gnorm^2 / (2 lambda_max) has to exceed eps * |f|.
    res = minimize(quad, rng.normal(size=n), gtol=1e-7, max_iter=300)
    assert res.converged
    assert np.abs(h @ res.x - b).max() < 1e-5
