"""Compiled vs pure clip kernel, compared bit for bit.

The compiled kernel promises the same float operations in the same
order as the reference implementation, so statuses, face lists and
the compensated accumulator arrays must match exactly, not just to
tolerance.  Duals are compared as sets; their discovery order is an
internal detail.
"""

import os
import subprocess
import sys

import numpy as np
import pytest

import ot3d._kernel_py as pure
from ot3d.sites import SiteSet

from meshgen import delaunay_mesh, five_tet_cube, grid_mesh

compiled = pytest.importorskip("ot3d._kernel")


def sorted_candidates(sites):
    """Owner-excluded candidate rows by Euclidean distance."""
    pts = sites.points
    k = len(pts)
    idx_rows = []
    dist_rows = []
    for i in range(k):
        delta = pts - pts[i]
        d = np.sqrt(np.einsum("ij,ij->i", delta, delta))
        order = np.argsort(d, kind="stable")
        order = order[order != i].astype(np.int64)
        idx_rows.append(order)
        dist_rows.append(d[order])
    return idx_rows, dist_rows


def drive(K, mesh, sites, mode, use_certificate, block, want_duals):
    """Run every couple through one kernel, mimicking the worker loop."""
    k = sites.k
    w_max = float(sites.weights.max())
    sums = np.zeros((k, 5))
    comps = np.zeros((k, 5))
    kern = K.CoupleKernel(
        mesh, sites.points, sites.weights, mode, use_certificate, w_max, sums, comps
    )
    idx_rows, dist_rows = sorted_candidates(sites)
    log = []
    for t in range(len(mesh.tets)):
        for i in range(k):
            need = block
            while True:
                n = min(need, k - 1)
                idx = idx_rows[i][:n]
                dist = dist_rows[i][:n]
                status, bis, fmask, duals = kern.clip_couple(
                    t, i, idx, dist, n >= k - 1, want_duals
                )
                log.append((t, i, n, status))
                if status != pure.NEED_MORE:
                    break
                need = 2 * n
            log.append((bis, fmask, sorted(duals) if duals else duals))
    return log, sums, comps


def assert_bit_identical(mesh, sites, mode, use_certificate=False, block=None,
                         want_duals=False):
    if block is None:
        block = sites.k
    lc, sc, cc = drive(compiled, mesh, sites, mode, use_certificate, block, want_duals)
    lp, sp, cp = drive(pure, mesh, sites, mode, use_certificate, block, want_duals)
    assert lc == lp
    assert np.array_equal(sc, sp)
    assert np.array_equal(cc, cp)


def test_backend_tags():
    assert pure.BACKEND == "pure"
    assert compiled.BACKEND == "compiled"
    assert (compiled.EMPTY, compiled.OK, compiled.NEED_MORE) == (
        pure.EMPTY,
        pure.OK,
        pure.NEED_MORE,
    )


@pytest.mark.parametrize("mode", ["exact", "fast"])
def test_random_instances_bitwise(mode):
    rng = np.random.default_rng(7)
    for trial in range(4):
        mesh = delaunay_mesh(40, seed=trial)
        k = int(rng.integers(2, 14))
        sites = SiteSet(
            rng.uniform(0.05, 0.95, (k, 3)), rng.uniform(-0.05, 0.05, k)
        )
        assert_bit_identical(mesh, sites, mode, want_duals=True)


def test_certificate_and_partial_blocks():
    # Small blocks force the NEED_MORE retry protocol through both
    # kernels; the certificate decisions have to land identically.
    rng = np.random.default_rng(11)
    mesh = delaunay_mesh(60, seed=5)
    k = 48
    sites = SiteSet(rng.uniform(0.1, 0.9, (k, 3)), rng.uniform(-0.01, 0.01, k))
    for block in (1, 4, 16):
        assert_bit_identical(
            mesh, sites, "exact", use_certificate=True, block=block
        )


def test_density_gradient_bitwise():
    rng = np.random.default_rng(3)
    mesh = grid_mesh(3, 2, 2, density_fn=lambda x, y, z: 0.25 + 2 * x + y * y + z)
    sites = SiteSet(rng.uniform(0, 1, (9, 3)), rng.uniform(-0.02, 0.02, 9))
    assert_bit_identical(mesh, sites, "exact", want_duals=True)
    assert_bit_identical(mesh, sites, "fast")


def test_flush_bisector_ties_bitwise():
    # Mesh vertices exactly on the bisector plane drive the exact
    # fallback and its index perturbation in both kernels.
    mesh = five_tet_cube()
    sites = SiteSet(
        np.array([[0.25, 0.5, 0.5], [0.75, 0.5, 0.5]]), np.zeros(2)
    )
    assert_bit_identical(mesh, sites, "exact", want_duals=True)


def test_far_site_empty_everywhere():
    mesh = five_tet_cube()
    sites = SiteSet(
        np.array([[0.5, 0.5, 0.5], [40.0, 40.0, 40.0]]),
        np.array([0.0, -3.0]),
    )
    assert_bit_identical(mesh, sites, "exact")
    assert_bit_identical(mesh, sites, "fast")


_EVAL_SNIPPET = """
import sys
import numpy as np
sys.path.insert(0, {tests_dir!r})
from meshgen import delaunay_mesh
from ot3d.restricted import KERNEL_BACKEND, evaluate
from ot3d.sites import SiteSet

assert KERNEL_BACKEND == sys.argv[2], KERNEL_BACKEND
mesh = delaunay_mesh(70, seed=12)
rng = np.random.default_rng(42)
sites = SiteSet(rng.uniform(0, 1, (17, 3)), rng.uniform(-0.03, 0.03, 17))
acc = evaluate(mesh, sites, provider="knn", n_workers=2, collect_duals=True)
np.savez(
    sys.argv[1],
    masses=acc.masses,
    moments=acc.moments,
    costs=acc.costs,
    visited=acc.visited,
    duals=np.array(sorted(acc.duals)),
)
"""


def test_public_evaluate_matches_across_backends(tmp_path):
    script = tmp_path / "run_eval.py"
    script.write_text(
        _EVAL_SNIPPET.format(tests_dir=os.path.dirname(os.path.abspath(__file__)))
    )
    outs = {}
    for tag, env_val in (("compiled", ""), ("pure", "1")):
        env = dict(os.environ)
        env["OT3D_PURE"] = env_val
        out = tmp_path / f"{tag}.npz"
        subprocess.run(
            [sys.executable, str(script), str(out), tag],
            check=True,
            env=env,
        )
        outs[tag] = np.load(out)
    a, b = outs["compiled"], outs["pure"]
    for key in ("masses", "moments", "costs", "visited", "duals"):
        assert np.array_equal(a[key], b[key]), key
