import numpy as np
import pytest

from gmra.datasets import GeneratorSpec, generate
from gmra.model import DimensionPolicy, construct_gmra
from gmra.tree import CellNode, PartitionTree, build_tree


def flat_cloud(n=400, D=12, d=2, seed=0, offset=3.0):
    """Points spread over a random d-dim affine subspace of R^D."""
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((D, d)))
    coords = rng.uniform(-1.0, 1.0, size=(n, d))
    return coords @ basis.T + offset, basis


def hand_tree(X, groups):
    """Root plus one child per index group."""
    n, D = X.shape
    kids = [(1, k) for k in range(len(groups))]
    nodes = {(0, 0): CellNode(0, 0, np.arange(n), X.mean(axis=0), kids, None)}
    for k, idx in enumerate(groups):
        idx = np.asarray(idx)
        nodes[(1, k)] = CellNode(1, k, idx, X[idx].mean(axis=0), [], (0, 0))
    return PartitionTree(nodes, n, D)


def _orth(A, tol=1e-10):
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    return U[:, s > tol * max(1.0, s.max(initial=0.0))]


def cell_plane(Y, eps):
    c = Y.mean(axis=0)
    _, s, Vt = np.linalg.svd(Y - c, full_matrices=False)
    lam = s**2 / Y.shape[0]
    d = 0
    while lam[d:].sum() > eps**2:
        d += 1
    return c, Vt[:d].T


def oracle_options(X, cell, kid_cells, kid_costs, eps, D, wavelet_allowed):
    """Spreadsheet-style strategy totals recomputed from raw points."""
    n = cell.size
    _, Phi = cell_plane(X[cell.indices], eps)
    d = Phi.shape[1]
    out = {"ParentOnly": n * d + D * d + D, "ChildrenOnly": sum(kid_costs)}
    if not wavelet_allowed:
        return out
    best = np.inf
    for dw in range(d + 1):
        Pw = Phi[:, :dw] @ Phi[:, :dw].T
        spaces = []
        for kc in kid_cells:
            _, Phk = cell_plane(X[kc.indices], eps)
            spaces.append((Phk.shape[1], kc.size, _orth((np.eye(D) - Pw) @ Phk)))
        # vectors lying in every space: eigenvalue m of the summed projectors
        S = sum(W @ W.T for _, _, W in spaces)
        lam = np.linalg.eigvalsh(S)
        d_cap = int((lam > len(spaces) - 1e-6).sum()) if all(W.shape[1] for *_, W in spaces) else 0
        total = (n + D) * (dw + d_cap) + D + len(spaces) * D
        for (dk, nk, W), phi in zip(spaces, kid_costs):
            d_perp = W.shape[1] - d_cap
            total += phi - (dk - d_perp) * (nk + D)
        best = min(best, total)
    out["Wavelet"] = best
    return out


@pytest.fixture(scope="session")
def swiss_small():
    return generate(GeneratorSpec("swissroll", 1500, 20, seed=3))


@pytest.fixture(scope="session")
def swiss_model(swiss_small):
    tree = build_tree(swiss_small)
    return construct_gmra(swiss_small, tree, DimensionPolicy.fixed(2))


@pytest.fixture(scope="session")
def swiss_model_notangent(swiss_small):
    tree = build_tree(swiss_small)
    return construct_gmra(swiss_small, tree, DimensionPolicy.fixed(2),
                          tangential_corrections=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
