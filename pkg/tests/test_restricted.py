import math

import numpy as np
import pytest

from ot3d.errors import InputError, NumericError
from ot3d.geometry import ConvexCell, integrate
from ot3d.predicates import FAST
from ot3d.restricted import brute_force_evaluate, evaluate
from ot3d.sites import ExhaustiveProvider, KnnProvider, SiteSet

from meshgen import delaunay_mesh, five_tet_cube, grid_mesh


def random_instance(rng, nt_points, k, weight_scale=0.02, density=False):
    if density:
        mesh = grid_mesh(
            2, 2, 2, density_fn=lambda x, y, z: 0.5 + x + y * z
        )
    else:
        mesh = delaunay_mesh(nt_points, seed=int(rng.integers(1 << 30)))
    pts = rng.uniform(0.1, 0.9, size=(k, 3))
    w = rng.uniform(-weight_scale, weight_scale, size=k)
    return mesh, SiteSet(pts, w)


def assert_close_accumulators(a, b, rel=1e-10):
    assert a.visited == b.visited
    scale_m = np.abs(b.masses).max()
    assert np.allclose(a.masses, b.masses, rtol=rel, atol=rel * scale_m)
    scale_mo = np.abs(b.moments).max()
    assert np.allclose(a.moments, b.moments, rtol=rel, atol=rel * scale_mo)
    scale_c = np.abs(b.costs).max()
    assert np.allclose(a.costs, b.costs, rtol=rel, atol=rel * scale_c)


def test_two_site_cube_oracle():
    mesh = five_tet_cube()
    s = SiteSet([(0.25, 0.5, 0.5), (0.75, 0.5, 0.5)], weights=[0.1, 0.0])
    acc = evaluate(mesh, s)
    assert acc.masses == pytest.approx([0.6, 0.4], rel=1e-12)
    # Closed forms over the two slabs split at x = 0.6.
    assert acc.costs == pytest.approx([0.1195, 0.073], rel=1e-12)
    assert acc.moments[0] == pytest.approx([0.18, 0.3, 0.3], rel=1e-12)
    assert acc.moments[1] == pytest.approx([0.32, 0.2, 0.2], rel=1e-12)
    bf = brute_force_evaluate(mesh, s)
    assert bf.masses == pytest.approx([0.6, 0.4], rel=1e-12)
    assert acc.visited == bf.visited == 10


def test_single_site_gets_everything():
    mesh = grid_mesh(2, 1, 1, density_fn=lambda x, y, z: 1.0 + x)
    s = SiteSet([(0.3, 0.7, 0.2)])
    acc = evaluate(mesh, s)
    assert acc.masses[0] == pytest.approx(mesh.measure(), rel=1e-12)
    want_cost = 0.0
    for t in range(len(mesh.tets)):
        cell = ConvexCell.from_tet(mesh.corners[t])
        want_cost += integrate(
            cell, density=mesh.tet_density(t), ref=(0.3, 0.7, 0.2)
        ).cost
    assert acc.costs[0] == pytest.approx(want_cost, rel=1e-12)
    assert acc.visited == len(mesh.tets)


def test_eight_symmetric_sites():
    mesh = five_tet_cube()
    offs = [(c & 1, (c >> 1) & 1, (c >> 2) & 1) for c in range(8)]
    pts = 0.25 + 0.5 * np.array(offs, dtype=float)
    acc = evaluate(mesh, SiteSet(pts))
    assert acc.masses == pytest.approx(np.full(8, 0.125), rel=1e-12)


def test_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(2024)
    for trial in range(8):
        k = int(rng.integers(2, 17))
        mesh, s = random_instance(rng, int(rng.integers(8, 28)), k)
        acc = evaluate(mesh, s, provider="knn")
        bf = brute_force_evaluate(mesh, s)
        assert_close_accumulators(acc, bf)


def test_matches_brute_force_with_density_and_duals():
    rng = np.random.default_rng(77)
    mesh, s = random_instance(rng, 0, 9, density=True)
    acc = evaluate(mesh, s, collect_duals=True)
    bf = brute_force_evaluate(mesh, s, collect_duals=True)
    assert_close_accumulators(acc, bf)
    assert acc.duals == bf.duals
    assert all(len(set(d)) == 4 for d in acc.duals)


def test_partition_of_measure_random_weights():
    rng = np.random.default_rng(5)
    mesh = delaunay_mesh(60, seed=8)
    total = mesh.measure()
    for _ in range(5):
        k = int(rng.integers(2, 40))
        s = SiteSet(
            rng.uniform(0, 1, size=(k, 3)), rng.uniform(-0.05, 0.05, size=k)
        )
        acc = evaluate(mesh, s)
        assert math.fsum(acc.masses.tolist()) == pytest.approx(total, rel=1e-9)
        assert acc.masses.min() >= 0.0


def test_centroids_inside_bounding_box():
    rng = np.random.default_rng(6)
    mesh = five_tet_cube()
    s = SiteSet(rng.uniform(0, 1, size=(20, 3)))
    acc = evaluate(mesh, s)
    have = acc.masses > 0
    cent = acc.moments[have] / acc.masses[have, None]
    assert cent.min() >= -1e-12
    assert cent.max() <= 1 + 1e-12


def test_knn_and_exhaustive_providers_agree():
    rng = np.random.default_rng(15)
    mesh = delaunay_mesh(25, seed=3)
    s = SiteSet(rng.uniform(0, 1, (24, 3)), rng.uniform(-0.02, 0.02, 24))
    a = evaluate(mesh, s, provider=KnnProvider(s))
    b = evaluate(mesh, s, provider=ExhaustiveProvider(s))
    assert a.visited == b.visited
    assert np.allclose(a.masses, b.masses, rtol=1e-12, atol=1e-15)
    assert np.allclose(a.costs, b.costs, rtol=1e-12, atol=1e-15)


def test_same_worker_count_is_bit_identical():
    rng = np.random.default_rng(9)
    mesh = delaunay_mesh(40, seed=11)
    s = SiteSet(rng.uniform(0, 1, (15, 3)), rng.uniform(-0.03, 0.03, 15))
    for n in (1, 3):
        a = evaluate(mesh, s, n_workers=n)
        b = evaluate(mesh, s, n_workers=n)
        assert np.array_equal(a.masses, b.masses)
        assert np.array_equal(a.moments, b.moments)
        assert np.array_equal(a.costs, b.costs)


def test_worker_counts_agree_closely():
    rng = np.random.default_rng(19)
    mesh = delaunay_mesh(50, seed=21)
    s = SiteSet(rng.uniform(0, 1, (18, 3)), rng.uniform(-0.02, 0.02, 18))
    one = evaluate(mesh, s, n_workers=1)
    for n in (2, 4, 7):
        many = evaluate(mesh, s, n_workers=n)
        assert many.visited == one.visited
        assert np.allclose(many.masses, one.masses, rtol=1e-12, atol=1e-14)
        assert np.allclose(many.costs, one.costs, rtol=1e-12, atol=1e-14)
        assert np.allclose(many.moments, one.moments, rtol=1e-12, atol=1e-14)


def test_mesh_flush_against_bisector_plane():
    # Mesh sits entirely right of the bisector plane x = 0.6; several
    # vertices lie exactly on it.  Site 0 may keep a few zero-volume
    # sliver cells (index ties break in its favor) but no mass.
    base = five_tet_cube()
    mesh_off = base.vertices + np.array([0.6, 0.0, 0.0])
    from ot3d.tetmesh import TetMesh

    mesh = TetMesh(mesh_off, base.tets)
    s = SiteSet([(0.25, 0.5, 0.5), (0.75, 0.5, 0.5)], weights=[0.1, 0.0])
    acc = evaluate(mesh, s)
    assert abs(acc.masses[0]) <= 1e-12
    assert acc.masses[1] == pytest.approx(1.0, rel=1e-12)
    bf = brute_force_evaluate(mesh, s)
    assert acc.visited == bf.visited
    assert np.allclose(acc.masses, bf.masses, rtol=0, atol=1e-12)


def test_rescue_scan_recovers_from_bad_seed(monkeypatch):
    # Inverting the seed ranking makes every fresh front start at the
    # worst possible site, so the fallback scan has to walk the list.
    import ot3d.restricted as restricted

    real = restricted._seed_powers
    monkeypatch.setattr(
        restricted, "_seed_powers", lambda p, w, v0: -real(p, w, v0)
    )
    mesh = five_tet_cube()
    s = SiteSet(
        [(0.1, 0.5, 0.5), (0.9, 0.5, 0.5), (5.0, 5.0, 5.0)],
        weights=[0.0, 0.0, -10.0],
    )
    acc = evaluate(mesh, s)
    assert acc.masses[2] == 0.0
    assert math.fsum(acc.masses.tolist()) == pytest.approx(1.0, rel=1e-12)
    assert np.allclose(
        acc.masses, brute_force_evaluate(mesh, s).masses, rtol=1e-12
    )


def test_uncoverable_tet_raises(monkeypatch):
    # A kernel that reports every couple empty starves the rescue scan.
    import types

    import ot3d.restricted as restricted

    class EmptyKernel:
        def __init__(self, *a, **kw):
            pass

        def clip_couple(self, *a, **kw):
            return restricted._EMPTY, None, 0, None

    monkeypatch.setattr(
        restricted,
        "_kernel",
        types.SimpleNamespace(CoupleKernel=EmptyKernel),
    )
    with pytest.raises(NumericError, match="covers tetrahedron"):
        evaluate(five_tet_cube(), SiteSet([(0.5, 0.5, 0.5)]))


def test_far_site_with_low_weight_gets_zero_mass():
    mesh = five_tet_cube()
    s = SiteSet(
        [(0.5, 0.5, 0.5), (5.0, 5.0, 5.0)], weights=[0.0, -1.0]
    )
    for result in (evaluate(mesh, s), brute_force_evaluate(mesh, s)):
        assert result.masses[1] == 0.0
        assert result.masses[0] == pytest.approx(1.0, rel=1e-12)


def test_fast_mode_close_to_exact():
    rng = np.random.default_rng(33)
    mesh = delaunay_mesh(30, seed=14)
    s = SiteSet(rng.uniform(0, 1, (10, 3)), rng.uniform(-0.02, 0.02, 10))
    fast = evaluate(mesh, s, mode=FAST)
    exact = evaluate(mesh, s)
    assert np.allclose(fast.masses, exact.masses, rtol=1e-9, atol=1e-12)


def test_brute_force_guard_rails():
    mesh = five_tet_cube()
    s = SiteSet(np.random.default_rng(0).uniform(0, 1, (257, 3)))
    with pytest.raises(InputError, match="256"):
        brute_force_evaluate(mesh, s)
    big = grid_mesh(9, 9, 9)
    assert len(big.tets) > 4096
    with pytest.raises(InputError, match="4096"):
        brute_force_evaluate(big, SiteSet([(0.5, 0.5, 0.5)]))


def test_visited_counts_match_brute_force_nonempty_cells():
    rng = np.random.default_rng(55)
    for _ in range(3):
        mesh, s = random_instance(rng, 12, int(rng.integers(2, 25)))
        acc = evaluate(mesh, s)
        bf = brute_force_evaluate(mesh, s)
        assert acc.visited == bf.visited
