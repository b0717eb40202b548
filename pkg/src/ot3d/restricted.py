"""Power cells restricted to a tet mesh, by simultaneous propagation.

For each tet the owning couples are discovered by walking the diagram:
a nonempty cell of site i in tet t pushes (t, j) for every bisector
face against j and (t', i) across every surviving mesh facet into the
neighbor t'.  Every tet left untouched seeds a fresh front with the
site of smallest power distance to its vertex 0 (exhaustive rescue
scan when that cell is empty).  Workers own contiguous ranges of the
Hilbert-ordered tet sequence and never push couples outside their
range; their compensated per-site sums are merged in partition order,
so a run is bit-reproducible for a fixed worker count.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericError
from .predicates import EXACT, check_mode
from .sites import make_provider

if os.environ.get("OT3D_PURE", "") == "1":
    from . import _kernel_py as _kernel
else:
    try:
        from . import _kernel
    except ImportError:
        from . import _kernel_py as _kernel

KERNEL_BACKEND = _kernel.BACKEND

_EMPTY = _kernel.EMPTY
_NEED_MORE = _kernel.NEED_MORE

_FIRST_BLOCK = 16


@dataclass
class CellAccumulators:
    """Per-site integrals of the restricted power diagram."""

    masses: np.ndarray
    moments: np.ndarray
    costs: np.ndarray
    visited: int
    duals: list | None = None

    @property
    def k(self):
        return len(self.masses)


def _seed_powers(points, weights, v0):
    delta = points - v0
    return np.einsum("ij,ij->i", delta, delta) - weights


def _worker(mesh, sites, provider, mode, collect_duals, order, inv, lo, hi, w_max):
    k = sites.k
    weights = sites.weights
    sums = np.zeros((k, 5))
    comps = np.zeros((k, 5))
    kern = _kernel.CoupleKernel(
        mesh, sites.points, weights, mode, provider.use_certificate, w_max, sums, comps
    )
    adjacency = mesh.adjacency
    marks = set()
    touched = np.zeros(len(mesh.tets), dtype=bool)
    stack = []
    visited = 0
    duals = set() if collect_duals else None
    # Per-site candidate-count memory, kept on the provider so it
    # carries across evaluations of a solve.  Starting from the count
    # that sufficed last time skips the doubling retries, which re-clip
    # the couple from scratch each round.  The clip outcome never
    # depends on surplus candidates (the scan stops at the certificate
    # or the cut set either way), so results stay bit-identical; races
    # between workers can only cost a retry, not change the answer.
    hints = provider.__dict__.setdefault("_need_hints", {})

    def process(t, i):
        nonlocal visited
        need = hints.get(i, _FIRST_BLOCK)
        while True:
            idx, dist = provider.candidate_block(i, weights, need)
            exhausted = len(idx) >= k - 1
            status, bis, fmask, dl = kern.clip_couple(
                t, i, idx, dist, exhausted, collect_duals
            )
            if status != _NEED_MORE:
                break
            need = max(2 * len(idx), _FIRST_BLOCK)
        if need > _FIRST_BLOCK:
            hints[i] = need
        if status == _EMPTY:
            return False
        visited += 1
        touched[t] = True
        base = t * k
        for j in bis:
            key = base + j
            if key not in marks:
                marks.add(key)
                stack.append(key)
        for f in range(4):
            if fmask >> f & 1:
                tn = int(adjacency[t, f])
                if tn >= 0 and lo <= inv[tn] < hi:
                    key = tn * k + i
                    if key not in marks:
                        marks.add(key)
                        stack.append(key)
        if dl:
            duals.update(dl)
        return True

    def propagate_from(t, i):
        key = t * k + i
        if key not in marks:
            marks.add(key)
            stack.append(key)
        while stack:
            cur = stack.pop()
            process(cur // k, cur % k)
        return bool(touched[t])

    points = sites.points
    for pos in range(lo, hi):
        t = int(order[pos])
        if touched[t]:
            continue
        power = _seed_powers(points, weights, mesh.corners[t, 0])
        if propagate_from(t, int(np.argmin(power))):
            continue
        for j in np.argsort(power, kind="stable"):
            if propagate_from(t, int(j)):
                break
        else:
            raise NumericError(f"no site cell covers tetrahedron {t}")
    return sums, comps, visited, duals


def evaluate(mesh, sites, mode=EXACT, provider="knn", n_workers=1, collect_duals=False):
    """Masses, moments, and costs of every Pow_W(y_i) ∩ M cell."""
    check_mode(mode)
    if isinstance(provider, str):
        provider = make_provider(sites, provider)
    nt = len(mesh.tets)
    n_workers = max(1, min(int(n_workers), nt))
    order = mesh.tet_order
    inv = np.empty(nt, dtype=np.int64)
    inv[order] = np.arange(nt)
    ranges = mesh.partition(n_workers)
    w_max = float(sites.weights.max())

    def run(rng):
        return _worker(
            mesh, sites, provider, mode, collect_duals, order, inv, rng[0], rng[1], w_max
        )

    if n_workers == 1:
        results = [run(ranges[0])]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(run, ranges))

    totals = np.zeros((sites.k, 5))
    for sums, comps, _, _ in results:
        totals += sums + comps
    visited = sum(r[2] for r in results)
    duals = None
    if collect_duals:
        merged = set()
        for r in results:
            merged.update(r[3])
        duals = sorted(merged)
    return CellAccumulators(
        masses=np.maximum(totals[:, 0], 0.0),
        moments=totals[:, 1:4].copy(),
        costs=totals[:, 4].copy(),
        visited=visited,
        duals=duals,
    )


def brute_force_evaluate(mesh, sites, mode=EXACT, collect_duals=False):
    """Clip every (tet, site) couple by all other bisectors.  Oracle.

    Shares only the single-couple clip kernel with evaluate; there is
    no propagation, no neighbor provider (candidates are simply all
    other sites in index order), no security certificate, and sums use
    plain per-site fsum instead of compensated accumulation.
    """
    import math

    check_mode(mode)
    k = sites.k
    nt = len(mesh.tets)
    if k > 256 or nt > 4096:
        raise InputError(
            f"brute force limited to 256 sites and 4096 tets, got k={k}, tets={nt}"
        )
    weights = sites.weights
    per_site = [[[] for _ in range(5)] for _ in range(k)]
    visited = 0
    duals = set() if collect_duals else None
    all_idx = np.arange(k, dtype=np.int64)
    no_dist = np.zeros(k - 1)
    for i in range(k):
        sums = np.zeros((k, 5))
        comps = np.zeros((k, 5))
        kern = _kernel.CoupleKernel(
            mesh, sites.points, weights, mode, False, 0.0, sums, comps
        )
        cand = all_idx[all_idx != i]
        bucket = per_site[i]
        for t in range(nt):
            status, _, _, dl = kern.clip_couple(t, i, cand, no_dist, True, collect_duals)
            if status == _EMPTY:
                continue
            visited += 1
            bucket[0].append(sums[i, 0] + comps[i, 0])
            bucket[1].append(sums[i, 1] + comps[i, 1])
            bucket[2].append(sums[i, 2] + comps[i, 2])
            bucket[3].append(sums[i, 3] + comps[i, 3])
            bucket[4].append(sums[i, 4] + comps[i, 4])
            sums[i] = 0.0
            comps[i] = 0.0
            if collect_duals:
                duals.update(dl)
    masses = np.array([math.fsum(b[0]) for b in per_site])
    moments = np.array(
        [[math.fsum(b[1]), math.fsum(b[2]), math.fsum(b[3])] for b in per_site]
    )
    costs = np.array([math.fsum(b[4]) for b in per_site])
    return CellAccumulators(
        masses=masses,
        moments=moments,
        costs=costs,
        visited=visited,
        duals=sorted(duals) if collect_duals else None,
    )
