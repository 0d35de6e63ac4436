"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -rP`` to see the lines.
"""

import time

import numpy as np
import pytest

from gmra import linalg
from gmra.datasets import GeneratorSpec, generate
from gmra.genmodel import fit_scale_model, hausdorff, sample
from gmra.model import (DimensionPolicy, approximation_error, construct_gmra, project_to_scale,
                        spectral_error)
from gmra.ortho import construct_ortho, dominant_frequencies, path_orthogonality
from gmra.pruning import (PARENT_ONLY, forest_encode, gmra_cost, prune, rms_error,
                          svd_baseline)
from gmra.transforms import (fgwt_batch, fgwt_direct, igwt_batch, scale_magnitudes,
                             threshold_sweep)
from gmra.tree import build_tree

from conftest import oracle_options

MANIFOLDS = ("swissroll", "smanifold", "oscillating2dwave")


def report(number, ok, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
    assert ok, detail


def loglog_slope(x, y, base=2.0):
    return float(np.polyfit(np.log(x) / np.log(base), np.log(y) / np.log(base), 1)[0])


def middle_scales(J):
    cut = (J + 1) // 4
    return list(range(cut, J + 1 - cut))


@pytest.fixture(scope="module")
def roll10k():
    return generate(GeneratorSpec("swissroll", 10000, 50, seed=0))


def test_c01_round_trip(roll10k):
    t0 = time.perf_counter()
    X = roll10k.coords
    model = construct_gmra(roll10k, build_tree(roll10k), DimensionPolicy.fixed(2))
    R = igwt_batch(model, fgwt_batch(model, X))
    elapsed = time.perf_counter() - t0
    ratio = np.linalg.norm(R - project_to_scale(model, X, model.max_scale), axis=1) \
        / (1 + np.linalg.norm(X, axis=1))
    ok = ratio.max() <= 1e-9 and elapsed < 60
    report(1, ok, f"max |igwt(fgwt(x)) - x_J| / (1+|x|) = {ratio.max():.2e}, {elapsed:.1f} s")


def _telescoping(cloud):
    X = cloud.coords
    model = construct_gmra(cloud, build_tree(cloud), DimensionPolicy.fixed(2))
    J = model.max_scale
    # definitional details Q_j(x) = P_j(x) - P_{j-1}(x), summed per cell at exact scale j
    total = project_to_scale(model, X, 0)
    for j in range(1, J + 1):
        for cell in model.tree.nodes_at(j):
            node, parent = model.nodes[cell.id], model.nodes[cell.parent]
            Y = X[cell.indices]
            total[cell.indices] += (node.center + (Y - node.center) @ node.basis @ node.basis.T
                                    - parent.center
                                    - (Y - parent.center) @ parent.basis @ parent.basis.T)
    XJ = project_to_scale(model, X, J)
    scale = 1 + np.linalg.norm(X, axis=1)
    literal = np.linalg.norm(XJ - total, axis=1) / scale
    # the same identity rebuilt from wavelet coefficients of x_J, finest detail first
    coeffs = fgwt_batch(model, X)
    rebuilt = np.empty_like(X)
    two_scale = 0.0
    for i, c in enumerate(coeffs):
        finer = np.zeros(X.shape[1])
        for depth in range(len(c.path) - 1, 0, -1):
            node, parent = model.nodes[c.path[depth]], model.nodes[c.path[depth - 1]]
            Q = (node.wavelet @ c.block_at(depth) + node.translation
                 - parent.basis @ (parent.basis.T @ finer))
            if i % 50 == 0:
                hi = node.center + node.basis @ (node.basis.T @ (XJ[i] - node.center))
                lo = parent.center + parent.basis @ (parent.basis.T @ (XJ[i] - parent.center))
                two_scale = max(two_scale, np.linalg.norm(Q - (hi - lo)) / scale[i])
            finer = finer + Q
        root = model.nodes[c.path[0]]
        rebuilt[i] = root.center + root.basis @ c.block_at(0) + finer
    wavelet = np.linalg.norm(XJ - rebuilt, axis=1) / scale
    return float(literal.max()), float(wavelet.max()), float(two_scale)


def test_c02_telescoping():
    worst = {}
    for kind in MANIFOLDS:
        worst[kind] = _telescoping(generate(GeneratorSpec(kind, 10000, 50, seed=1)))
    ok = all(max(v) <= 1e-9 for v in worst.values())
    detail = ", ".join(f"{k} {max(v):.1e}" for k, v in worst.items())
    report(2, ok, f"max relative telescoping residual: {detail}")


def test_c03_quadratic_decay():
    slopes = {}
    for kind in MANIFOLDS:
        cloud = generate(GeneratorSpec(kind, 10000, 50, seed=0))
        model = construct_gmra(cloud, build_tree(cloud, levels_per_scale=2),
                               DimensionPolicy.fixed(2))
        js = middle_scales(model.max_scale)
        mags = scale_magnitudes(fgwt_batch(model, cloud.coords))
        errs = [approximation_error(model, cloud, j) for j in js]
        slopes[kind] = (loglog_slope(2.0 ** np.array(js), [mags[j] for j in js]),
                        loglog_slope(2.0 ** np.array(js), errs))
    ok = all(-2.4 <= s <= -1.6 for pair in slopes.values() for s in pair)
    detail = ", ".join(f"{k} coef {a:.2f} err {b:.2f}" for k, (a, b) in slopes.items())
    report(3, ok, f"log2 slopes over the middle scales: {detail}")


def test_c04_flat_collapse():
    n, D, d = 2000, 50, 3
    rng = np.random.default_rng(4)
    basis, _ = np.linalg.qr(rng.standard_normal((D, d)))
    X = rng.uniform(-1, 1, (n, d)) @ basis.T + rng.standard_normal(D)
    tree = build_tree(X)
    model = construct_gmra(X, tree, DimensionPolicy.fixed(d))
    wdims = max(node.wavelet_dim for key, node in model.nodes.items() if key[0] > 0)
    EJ = approximation_error(model, X, model.max_scale)
    forest = prune(X, tree, 1e-6)
    single = forest.roots == [(0, 0)] and forest.nodes[(0, 0)].is_leaf
    parent_only = all(r["chosen"] == PARENT_ONLY for r in forest.decisions.values())
    cost = forest.cost.total
    ok = wdims == 0 and EJ < 1e-9 and single and parent_only and cost <= d * (D + n) + 2 * D
    report(4, ok, f"max wavelet dim {wdims}, E_J {EJ:.1e}, roots {forest.roots}, "
                  f"cost {cost:.0f} vs d(D+n)+2D = {d * (D + n) + 2 * D}")


def test_c05_spectral_identity(roll10k):
    model = construct_gmra(roll10k, build_tree(roll10k), DimensionPolicy.fixed(2))
    worst = 0.0
    for j in range(model.max_scale + 1):
        e2 = approximation_error(model, roll10k, j) ** 2
        s = spectral_error(model, j)
        worst = max(worst, abs(e2 - s) / max(s, 1e-300))
    report(5, worst <= 1e-8, f"max relative gap between E_j^2 and the spectral sum: {worst:.1e}")


def test_c06_threshold_linearity(roll10k):
    model = construct_gmra(roll10k, build_tree(roll10k), DimensionPolicy.fixed(2), precision=1e-5)
    deltas = np.logspace(-4, -1, 13)
    reports = threshold_sweep(model, fgwt_batch(model, roll10k.coords), deltas)
    errs = np.array([r.mean_error for r in reports])
    monotone = bool(np.all(np.diff(errs) >= 0))
    slope = loglog_slope(deltas, errs, base=10.0)
    report(6, monotone and slope >= 0.7,
           f"RMS error vs delta monotone={monotone}, log-log slope {slope:.2f} (J={model.max_scale})")


def test_c07_ortho_paths():
    cloud = generate(GeneratorSpec("bandlimited", 10000, 64, seed=0))
    model = construct_ortho(cloud, build_tree(cloud), DimensionPolicy.fixed(2), precision=1e-3)
    worst = path_orthogonality(model)
    freqs = list(dominant_frequencies(model).values())
    pairs = list(zip(freqs, freqs[1:]))
    frac = sum(b >= a for a, b in pairs) / len(pairs)
    report(7, worst < 1e-8 and frac >= 0.9,
           f"max |U_a^T U_b|_F {worst:.1e}; dominant frequency nondecreasing in {frac:.0%} "
           f"of scale pairs {np.round(freqs, 2).tolist()}")


def test_c08_pruning_optimality():
    bad_nodes, worse = 0, []
    checked = 0
    for kind in ("swissroll", "smanifold", "oscillating2dwave", "sphere", "bandlimited"):
        cloud = generate(GeneratorSpec(kind, 2000, 32, seed=0))
        X, D = cloud.coords, cloud.ambient_dim
        tree = build_tree(cloud)
        radius = np.sqrt(((X - X.mean(axis=0)) ** 2).sum(axis=1).mean())
        for rel in (0.01, 0.03, 0.1, 0.3):
            eps = rel * radius
            forest = prune(cloud, tree, eps)
            # recompute every strategy cost from raw points, bottom-up
            achieved = {}
            for key in sorted(tree.nodes, key=lambda k: -k[0]):
                cell = tree[key]
                if cell.is_leaf:
                    opts = oracle_options(X, cell, [], [], eps, D, False)
                    achieved[key] = opts[PARENT_ONLY]
                    continue
                allowed = not any(forest.decisions.get(c, {}).get("chosen") == "ChildrenOnly"
                                  for c in cell.children)
                opts = oracle_options(X, cell, [tree[c] for c in cell.children],
                                      [achieved[c] for c in cell.children], eps, D, allowed)
                rec = forest.decisions[key]
                stored = rec["options"][rec["chosen"]].total
                if set(opts) != set(rec["options"]) or abs(stored - min(opts.values())) > 1e-6:
                    bad_nodes += 1
                achieved[key] = min(opts.values())
                checked += 1
            plain = construct_gmra(cloud, tree, DimensionPolicy.absolute(eps**2), precision=eps,
                                   tangential_corrections=False)
            if forest.cost.total > gmra_cost(plain).total:
                worse.append((kind, rel))
    report(8, bad_nodes == 0 and not worse,
           f"{checked} node decisions re-evaluated, {bad_nodes} not minimal; "
           f"pruned > plain total at {worse or 'no'} (set, eps) pairs")


def _envelope(curve, e):
    costs = [c for err, c in curve if err <= e]
    return min(costs) if costs else np.inf


def test_c09_cost_dominance(roll10k):
    X = roll10k.coords
    tree = build_tree(roll10k)
    radius = float(np.sqrt(((X - X.mean(axis=0)) ** 2).sum(axis=1).mean()))
    pruned = []
    for eps in np.logspace(-1, np.log10(5), 16):
        forest = prune(roll10k, tree, eps)
        recon, _ = forest_encode(forest, roll10k)
        pruned.append((rms_error(X, recon), forest.cost.coefficient_cost))
    svd = [(p.error, p.coefficient_cost) for p in svd_baseline(roll10k, deltas=np.logspace(-2, 2, 41))]
    grid = radius * np.logspace(-2, np.log10(0.3), 9)
    rows = [(e, _envelope(pruned, e), _envelope(svd, e)) for e in grid]
    ok = all(g < s for _, g, s in rows)
    detail = "; ".join(f"e={e:.3g}: {g:.0f} vs {s:.0f}" for e, g, s in rows[::2])
    report(9, ok, f"pruned GMRA vs SVD coefficient cost at shared errors ({detail})")


def test_c10_generative_model():
    fresh = generate(GeneratorSpec("swissroll", 4000, 50, seed=1000))
    fits = []
    for i, n in enumerate((500, 1000, 2000, 4000)):
        cloud = generate(GeneratorSpec("swissroll", n, 50, seed=i + 1))
        model = construct_gmra(cloud, build_tree(cloud, levels_per_scale=2),
                               DimensionPolicy.fixed(2))
        fits.append((cloud, model))
    J = min(m.max_scale for _, m in fits)
    dists, off = [], 0.0
    for cloud, model in fits:
        sm = fit_scale_model(model, cloud, J)
        s = sample(sm, 4000, seed=7)
        for i, cell in enumerate(sm.cells):
            Y = s.coords[s.meta["cell"] == i] - cell.center
            off = max(off, float(np.abs(Y - (Y @ cell.basis) @ cell.basis.T).max(initial=0.0)))
        dists.append(hausdorff(s, fresh, "median"))
    decreasing = all(b < a for a, b in zip(dists, dists[1:]))
    report(10, decreasing and off <= 1e-10,
           f"scale {J} Hausdorff-median {np.round(dists, 4).tolist()}, max off-plane {off:.1e}")


def test_c11_oracles():
    fgwt_gap = inter_gap = 0.0
    hausdorff_exact = True
    for seed in range(5):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((200, 10)) * np.linspace(3, 0.2, 10)
        for tangent in (True, False):
            model = construct_gmra(X, build_tree(X), DimensionPolicy.fixed(3),
                                   tangential_corrections=tangent)
            for i, c in enumerate(fgwt_batch(model, X)):
                ref = fgwt_direct(model, X[i], c.leaf)
                for a, b in zip(c.blocks, ref.blocks):
                    fgwt_gap = max(fgwt_gap, float(np.abs(a - b).max(initial=0.0)))
        Y = rng.standard_normal((200, 10))
        for mode in ("max", "median"):
            ab = [min(np.sqrt(np.sum((x - y) ** 2)) for y in Y) for x in X]
            ba = [min(np.sqrt(np.sum((y - x) ** 2)) for x in X) for y in Y]
            ref = max(max(ab), max(ba)) if mode == "max" else max(np.median(ab), np.median(ba))
            hausdorff_exact &= hausdorff(X, Y, mode) == ref
        # two 4-dim subspaces of R^10 sharing a known 2-dim part
        common = rng.standard_normal((10, 2))
        A = np.linalg.qr(np.hstack([common, rng.standard_normal((10, 2))]))[0]
        B = np.linalg.qr(np.hstack([common, rng.standard_normal((10, 2))]))[0]
        inter = linalg.subspace_intersection([A, B])
        U, s, _ = np.linalg.svd(A.T @ B)
        ref = A @ U[:, np.isclose(s, 1.0, atol=1e-8)]
        gap = np.linalg.norm(inter @ inter.T - ref @ ref.T) if inter.shape == ref.shape else np.inf
        inter_gap = max(inter_gap, float(gap))
    ok = fgwt_gap <= 1e-9 and hausdorff_exact and inter_gap <= 1e-8
    report(11, ok, f"fgwt vs direct {fgwt_gap:.1e}, Hausdorff exact={hausdorff_exact}, "
                   f"intersection vs principal angles {inter_gap:.1e}")


def test_c12_scaling():
    sizes = np.array([1000, 2000, 4000, 8000])
    times = []
    for n in sizes:
        cloud = generate(GeneratorSpec("swissroll", int(n), 100, seed=0))
        best = np.inf
        for _ in range(3):
            t0 = time.perf_counter()
            model = construct_gmra(cloud, build_tree(cloud), DimensionPolicy.fixed(2))
            fgwt_batch(model, cloud.coords)
            best = min(best, time.perf_counter() - t0)
        times.append(best)
    b = float(np.polyfit(np.log(sizes), np.log(times), 1)[0])
    report(12, b <= 1.3, f"t = a n^b with b = {b:.2f}; times {np.round(times, 3).tolist()} s")
