"""Acceptance gate: one test per shipping criterion.

Each test prints a single machine-greppable line

    [acceptance] criterion=<n> name=<slug> status=PASS|FAIL ...

directly to the terminal (bypassing capture) before asserting.
"""

import math
import subprocess
import sys
import time

import numpy as np
import pytest

from meshgen import ball_mesh, delaunay_mesh, five_tet_cube, grid_mesh
from ot3d.cli import main as cli_main
from ot3d.cvt import lloyd, quantization_energy
from ot3d.morphing import build_morph
from ot3d.restricted import brute_force_evaluate, evaluate
from ot3d.sites import SiteSet, lifted_points, save_sites
from ot3d.tetmesh import save_mesh
from ot3d.transport import (
    load_weights,
    objective,
    solve_multilevel,
    solve_single_level,
)


def report(criterion, name, ok, **kv):
    extra = "".join(f" {k}={v}" for k, v in kv.items())
    print(
        f"[acceptance] criterion={criterion} name={name} "
        f"status={'PASS' if ok else 'FAIL'}{extra}",
        file=sys.__stdout__,
        flush=True,
    )
    return ok


def random_instance(rng, n_points, k, weight_scale=0.1):
    lo = rng.uniform(-1.0, 0.0, 3)
    hi = lo + rng.uniform(0.5, 2.0, 3)
    mesh = delaunay_mesh(n_points, seed=int(rng.integers(1 << 31)), lo=lo, hi=hi)
    pts = rng.uniform(lo - 0.2, hi + 0.2, (k, 3))
    w = rng.uniform(-weight_scale, weight_scale, k)
    return mesh, SiteSet(pts, w)


def rel_close(a, b, tol):
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-300)
    return np.abs(a - b).max() <= tol * scale


def test_criterion_1_oracle_equivalence():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    checked = 0
    worst = 0.0
    # span the contract corners: tiny and large meshes, k extremes
    plans = [(5, 2), (5, 64), (120, 64)]
    while len(plans) < 100:
        plans.append(
            (int(rng.integers(5, 121)), int(rng.integers(2, 65)))
        )
    for n_points, k in plans:
        mesh, sites = random_instance(rng, n_points, k)
        fast = evaluate(mesh, sites, n_workers=2)
        slow = brute_force_evaluate(mesh, sites)
        for a, b in (
            (fast.masses, slow.masses),
            (fast.moments, slow.moments),
            (fast.costs, slow.costs),
        ):
            scale = max(np.abs(a).max(), np.abs(b).max(), 1e-300)
            worst = max(worst, np.abs(a - b).max() / scale)
        checked += 1
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and checked >= 100 and elapsed < 60
    assert report(
        1,
        "oracle-equivalence",
        ok,
        instances=checked,
        worst_rel=f"{worst:.2e}",
        time=f"{elapsed:.1f}s",
    )


def test_criterion_2_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst_g = 0.0
    worst_q = 0.0
    for _ in range(20):
        k = int(rng.integers(2, 33))
        mesh = delaunay_mesh(int(rng.integers(20, 60)), seed=int(rng.integers(1 << 31)))
        mu = mesh.measure()
        pts = rng.uniform(0.1, 0.9, (k, 3))
        w = rng.uniform(-0.05, 0.05, k)
        nu = rng.uniform(0.5, 1.5, k)
        nu *= mu / math.fsum(nu.tolist())
        sites = SiteSet(pts, w, nu)

        grad = objective(mesh, sites).gradient
        h = 1e-6
        for i in rng.choice(k, size=min(k, 5), replace=False):
            up = w.copy(); up[i] += h
            dn = w.copy(); dn[i] -= h
            fd = (
                objective(mesh, sites, up).value
                - objective(mesh, sites, dn).value
            ) / (2 * h)
            denom = max(abs(grad[i]), abs(fd), 1e-9)
            worst_g = max(worst_g, abs(grad[i] - fd) / denom)

        _, gq = quantization_energy(mesh, pts)
        for i in rng.choice(k, size=min(k, 3), replace=False):
            for ax in range(3):
                up = pts.copy(); up[i, ax] += h
                dn = pts.copy(); dn[i, ax] -= h
                fd = (
                    quantization_energy(mesh, up)[0]
                    - quantization_energy(mesh, dn)[0]
                ) / (2 * h)
                denom = max(abs(gq[i, ax]), abs(fd), 1e-9)
                worst_q = max(worst_q, abs(gq[i, ax] - fd) / denom)
    elapsed = time.perf_counter() - t0
    ok = worst_g <= 1e-4 and worst_q <= 1e-4 and elapsed < 120
    assert report(
        2,
        "gradient-vs-fd",
        ok,
        worst_transport=f"{worst_g:.2e}",
        worst_cvt=f"{worst_q:.2e}",
        time=f"{elapsed:.1f}s",
    )


def test_criterion_3_two_site_analytic_solve():
    mesh = grid_mesh(1, 1, 1)
    sites = SiteSet(
        np.array([[0.25, 0.5, 0.5], [0.75, 0.5, 0.5]]),
        masses=np.array([0.6, 0.4]),
    )
    t0 = time.perf_counter()
    rep = solve_single_level(mesh, sites)
    elapsed = time.perf_counter() - t0
    gap = rep.weights[0] - rep.weights[1]
    ok = rep.converged and abs(gap - 0.1) <= 1e-3 and elapsed < 1.0
    assert report(
        3,
        "two-site-cube",
        ok,
        w1_minus_w2=f"{gap:.6f}",
        time=f"{elapsed:.3f}s",
    )


def test_criterion_4_concavity_and_shift_invariance():
    rng = np.random.default_rng(99)
    mesh = delaunay_mesh(25, seed=5)
    mu = mesh.measure()
    k = 10
    pts = rng.uniform(0.1, 0.9, (k, 3))
    sites = SiteSet(pts, masses=np.full(k, mu / k))

    def g(w):
        return objective(mesh, sites, w).value

    worst_chord = -np.inf
    cache = {}

    def g_cached(key, w):
        if key not in cache:
            cache[key] = g(w)
        return cache[key]

    for trial in range(1000):
        wa = rng.uniform(-0.3, 0.3, k)
        wb = rng.uniform(-0.3, 0.3, k)
        lam = rng.uniform()
        ga = g(wa)
        gb = g(wb)
        gm = g(lam * wa + (1 - lam) * wb)
        scale = max(abs(ga), abs(gb), abs(gm))
        # concave: g(lam a + (1-lam) b) >= lam g(a) + (1-lam) g(b)
        worst_chord = max(worst_chord, (lam * ga + (1 - lam) * gb - gm) / scale)

    worst_shift = 0.0
    for c in (-0.7, -0.1, 0.25, 1.3):
        w = rng.uniform(-0.3, 0.3, k)
        base = g(w)
        worst_shift = max(worst_shift, abs(g(w + c) - base) / abs(base))

    ok = worst_chord <= 1e-9 and worst_shift <= 1e-12
    assert report(
        4,
        "concavity-shift",
        ok,
        worst_chord=f"{worst_chord:.2e}",
        worst_shift=f"{worst_shift:.2e}",
    )


def test_criterion_5_masses_partition_the_measure():
    rng = np.random.default_rng(17)
    worst = 0.0
    for trial in range(25):
        mesh, sites = random_instance(
            rng, int(rng.integers(10, 80)), int(rng.integers(2, 40)),
            weight_scale=0.5,
        )
        mu = mesh.measure()
        acc = evaluate(mesh, sites, n_workers=2)
        worst = max(worst, abs(math.fsum(acc.masses.tolist()) - mu) / mu)
    ok = worst <= 1e-9
    assert report(5, "mass-partition", ok, worst_rel=f"{worst:.2e}")


def test_criterion_6_lifting_identity():
    rng = np.random.default_rng(23)
    worst = 0.0
    for trial in range(20):
        mesh, sites = random_instance(
            rng, int(rng.integers(10, 60)), int(rng.integers(2, 30))
        )
        mu = mesh.measure()
        from ot3d.cvt import lifted_energy

        q_hat = lifted_energy(mesh, sites)
        acc = evaluate(mesh, sites)
        f = math.fsum(acc.costs.tolist())
        w_max = sites.weights.max()
        expect = f + w_max * mu
        worst = max(worst, abs(q_hat - expect) / max(abs(expect), 1e-300))
    ok = worst <= 1e-9
    assert report(6, "lifting-identity", ok, worst_rel=f"{worst:.2e}")


@pytest.mark.slow
def test_criterion_7_translated_sphere_scaling():
    t0 = time.perf_counter()
    mesh = ball_mesh(200, 230, seed=0)
    shifted = ball_mesh(200, 230, seed=0, center=(3.0, 0.0, 0.0))
    mu = mesh.measure()
    results = {}
    from ot3d.cvt import sample_mesh

    for k in (100, 1000):
        rng = np.random.default_rng(42)
        sites = SiteSet(
            sample_mesh(shifted, k, rng), masses=np.full(k, mu / k)
        )
        rep = solve_single_level(
            mesh, sites, eps_factor=0.01, max_iter=2000, n_workers=4
        )
        results[k] = rep

    k = 1000
    rng = np.random.default_rng(42)
    sites = SiteSet(sample_mesh(shifted, k, rng), masses=np.full(k, mu / k))
    multi = solve_multilevel(
        mesh, sites, eps_factor=0.01, degree=1, seed=0, max_iter=2000,
        n_workers=4,
    )
    elapsed = time.perf_counter() - t0
    ok = (
        results[100].converged
        and results[100].iterations <= 2000
        and results[1000].converged
        and results[1000].iterations <= 2000
        and multi.converged
        and multi.evaluations < results[1000].evaluations
        and elapsed < 600
    )
    assert report(
        7,
        "translated-sphere",
        ok,
        single_100=results[100].evaluations,
        single_1000=results[1000].evaluations,
        multi_1000=multi.evaluations,
        time=f"{elapsed:.0f}s",
    )


def test_criterion_8_lloyd_monotone():
    mesh = five_tet_cube()
    ok = True
    drops = {}
    for k in (10, 100):
        values = []
        lloyd(
            mesh, k, iters=30, seed=0,
            callback=lambda it, pts, q: values.append(q),
        )
        v = np.array(values)
        worst = (np.diff(v) / v[:-1]).max()
        drops[k] = worst
        ok = ok and worst <= 1e-12
    assert report(
        8,
        "lloyd-monotone",
        ok,
        worst_k10=f"{drops[10]:.2e}",
        worst_k100=f"{drops[100]:.2e}",
    )


@pytest.mark.slow
def test_criterion_9_morph_identity_and_translation():
    mesh = grid_mesh(3, 3, 3)
    morph = build_morph(mesh, mesh, 200, cvt_iters=25, seed=0, n_workers=4)
    diag = math.sqrt(3.0)
    disp = float(np.linalg.norm(morph.p1 - morph.p0, axis=1).mean())
    identity_ok = disp <= 0.05 * diag and len(morph.tets) > 0

    shift = np.array([1.5, 0.75, -0.5])
    dst = grid_mesh(3, 3, 3, lo=shift, hi=1.0 + shift)
    tm = build_morph(mesh, dst, 200, cvt_iters=25, seed=0, n_workers=4)
    mean_disp = (tm.p1 - tm.p0).mean(axis=0)
    translation_err = float(
        np.linalg.norm(mean_disp - shift) / np.linalg.norm(shift)
    )
    translation_ok = translation_err <= 0.05
    ok = identity_ok and translation_ok
    assert report(
        9,
        "morph-identity-translation",
        ok,
        identity_disp=f"{disp:.4f}",
        kept_tets=len(morph.tets),
        translation_err=f"{translation_err:.4f}",
    )


def test_criterion_10_determinism(tmp_path):
    mesh_path = str(tmp_path / "m.tetmesh")
    save_mesh(grid_mesh(2, 2, 2), mesh_path)
    tgt_path = str(tmp_path / "t.tetmesh")
    save_mesh(grid_mesh(2, 2, 2, lo=(0.3, 0.0, 0.0), hi=(1.3, 1.0, 1.0)), tgt_path)
    rng = np.random.default_rng(31)
    sites_path = str(tmp_path / "y.sites")
    save_sites(SiteSet(rng.uniform(0.1, 0.9, (40, 3))), sites_path)

    def transport(tag, threads):
        out = str(tmp_path / f"{tag}.weights")
        rc = cli_main([
            "transport", "--mesh", mesh_path, "--sites", sites_path,
            "--out", out, "--seed", "5", "--threads", str(threads),
        ])
        assert rc == 0
        return out

    w1a = open(transport("a", 2), "rb").read()
    w1b = open(transport("b", 2), "rb").read()
    weights_identical = w1a == w1b

    def morph(tag):
        out = str(tmp_path / f"{tag}.morph")
        rc = cli_main([
            "morph", "--source", mesh_path, "--target", tgt_path,
            "-k", "30", "--out", out, "--seed", "5", "--threads", "2",
            "--lloyd-iters", "8",
        ])
        assert rc == 0
        return out

    m1 = open(morph("ma"), "rb").read()
    m2 = open(morph("mb"), "rb").read()
    morph_identical = m1 == m2

    wa = load_weights(transport("t1", 1))
    wb = load_weights(transport("t4", 4))
    scale = max(np.abs(wa).max(), 1.0)
    thread_rel = float(np.abs(wa - wb).max() / scale)
    ok = weights_identical and morph_identical and thread_rel <= 1e-12
    assert report(
        10,
        "determinism",
        ok,
        weights_bitwise=int(weights_identical),
        morph_bitwise=int(morph_identical),
        thread_rel=f"{thread_rel:.2e}",
    )
