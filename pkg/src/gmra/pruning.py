"""Encoding costs and bottom-up tree pruning for minimal epsilon-encodings.

Costs are raw number counts: coefficients stored per point plus dictionary
scalars (basis vectors, centers and translations at D numbers each). Every
strategy reconstructs the same leaf approximations, so pruning trades cost
only; the error is fixed by the leaf planes.

Reconstruction in a pruned tree works without tangential corrections. A
node that encodes its children with wavelets stores a plane ``B`` (the top
``d_w`` parent directions plus the directions shared by all children
wavelet spaces); each child stores the rest of its wavelet space ``Psi_perp``
and the translation ``w = (I - P_B)(c_child - c)``. A point is rebuilt as
``c_root + B_root a + sum (Psi_perp e + w)`` down its path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import CostModelViolation, DimMismatch
from .tree import PartitionTree, NodeKey

PARENT_ONLY = "ParentOnly"
CHILDREN_ONLY = "ChildrenOnly"
WAVELET = "Wavelet"
LEAF = "Leaf"
TIE_ORDER = (PARENT_ONLY, CHILDREN_ONLY, WAVELET)


@dataclass(frozen=True)
class EncodingCost:
    coefficient_cost: float
    dictionary_cost: float
    strategy: str = LEAF
    d_w: int | None = None

    @property
    def total(self) -> float:
        return self.coefficient_cost + self.dictionary_cost

    def __float__(self):
        return float(self.total)

    def __add__(self, other: "EncodingCost") -> "EncodingCost":
        return EncodingCost(self.coefficient_cost + other.coefficient_cost,
                            self.dictionary_cost + other.dictionary_cost, self.strategy)


def _check_counts(**counts):
    for name, value in counts.items():
        if value < 0:
            raise CostModelViolation(f"{name} must be >= 0, got {value}")


def leaf_cost(n_cell: int, d_eps: int, D: int) -> EncodingCost:
    """A cell encoded by its center and a d_eps-dimensional PCA plane: ``n d + D d + D``."""
    _check_counts(n_cell=n_cell, d_eps=d_eps, D=D)
    return EncodingCost(n_cell * d_eps, D * d_eps + D, LEAF)


def parent_only_cost(n_cell: int, d_eps: int, D: int) -> EncodingCost:
    """Same count as a leaf: the parent plane replaces the whole subtree."""
    c = leaf_cost(n_cell, d_eps, D)
    return EncodingCost(c.coefficient_cost, c.dictionary_cost, PARENT_ONLY)


def children_only_cost(children) -> EncodingCost:
    coef = sum(c.coefficient_cost for c in children)
    dic = sum(c.dictionary_cost for c in children)
    return EncodingCost(coef, dic, CHILDREN_ONLY)


def wavelet_cost(children, child_dims, child_sizes, n_parent: int, d_w: int, d_cap: int,
                 d_perp, D: int, d_eps: int | None = None) -> EncodingCost:
    """Cost of encoding children through the parent's top `d_w` directions.

    Parameters
    ----------
    children : sequence of EncodingCost or numbers
        Children costs. A bare number ``phi`` is read as a leaf-like cost
        whose coefficient part is ``n_k d_k``.
    child_dims, child_sizes : sequences
        Plane dimension d_k and point count n_k of each child.
    n_parent, d_w, D : int
    d_cap : int
        Dimension of the subspace shared by all children wavelet spaces.
    d_perp : sequence
        Per-child dimension of the wavelet part outside the shared subspace.
    d_eps : int, optional
        Parent's epsilon-dimension; if given, ``d_w <= d_eps`` is enforced.

    The total is ``sum_k [phi_k - (d_k - d_perp_k)(n_k + D)]
    + (n + D)(d_w + d_cap) + D + sum_k D``.
    """
    m = len(children)
    if not (len(child_dims) == len(child_sizes) == len(d_perp) == m):
        raise CostModelViolation("per-child sequences have different lengths")
    _check_counts(n_parent=n_parent, d_w=d_w, d_cap=d_cap, D=D)
    if d_eps is not None and d_w > d_eps:
        raise CostModelViolation(f"d_w={d_w} exceeds the parent dimension {d_eps}")
    coef = n_parent * (d_w + d_cap)
    dic = D * (d_w + d_cap) + D + m * D
    for child, d_k, n_k, dp in zip(children, child_dims, child_sizes, d_perp):
        _check_counts(d_k=d_k, n_k=n_k, d_perp=dp)
        if dp + d_cap > d_k:
            raise CostModelViolation(
                f"wavelet split {d_cap}+{dp} exceeds the child dimension {d_k}")
        if isinstance(child, EncodingCost):
            c_coef, c_dic = child.coefficient_cost, child.dictionary_cost
        else:
            c_coef = n_k * d_k
            c_dic = float(child) - c_coef
        coef += c_coef - (d_k - dp) * n_k
        dic += c_dic - (d_k - dp) * D
    return EncodingCost(coef, dic, WAVELET, d_w)


def eps_dimension(spectrum, eps: float) -> int:
    """Smallest d whose tail variance is within ``eps**2`` (d = 0 allowed)."""
    spectrum = np.clip(np.asarray(spectrum, dtype=float), 0.0, None)
    tails = np.concatenate([np.cumsum(spectrum[::-1])[::-1], [0.0]])
    d = int(np.argmax(tails <= eps**2))
    return min(d, linalg.numerical_rank(spectrum))


# -- pruned forest -----------------------------------------------------------

@dataclass
class PrunedNode:
    key: NodeKey
    indices: np.ndarray
    center: np.ndarray
    basis: np.ndarray                   # B: own plane (leaf) or [Phi_w, Psi_cap]
    cost: EncodingCost
    d_eps: int
    children: list = field(default_factory=list)
    parent: NodeKey | None = None
    specific_wavelet: np.ndarray = None  # Psi_perp w.r.t. the parent's B
    translation: np.ndarray = None       # (I - P_B_parent)(c - c_parent)
    options: dict = field(default_factory=dict)   # strategy -> evaluated EncodingCost

    @property
    def size(self) -> int:
        return int(self.indices.size)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class PrunedForest:
    roots: list
    nodes: dict
    eps: float
    ambient_dim: int
    n_points: int
    decisions: dict = field(default_factory=dict)   # every evaluated nonleaf, incl. removed ones

    def leaves(self) -> list:
        return [k for k, n in self.nodes.items() if n.is_leaf]

    def path(self, key: NodeKey) -> list:
        out = [key]
        while self.nodes[out[-1]].parent is not None:
            out.append(self.nodes[out[-1]].parent)
        return out[::-1]

    @property
    def cost(self) -> EncodingCost:
        total = EncodingCost(0, 0, "forest")
        for r in self.roots:
            total = total + self.nodes[r].cost
        return total

    def strategy_histogram(self) -> dict:
        hist = {s: 0 for s in (LEAF,) + TIE_ORDER}
        for rec in self.decisions.values():
            hist[rec["chosen"]] += 1
        hist[LEAF] = len(self.leaves())
        return hist


def _intersection(spaces, angle_tol):
    D = spaces[0].shape[0]
    if len(spaces) < 2 or any(s.shape[1] == 0 for s in spaces):
        return linalg.empty_basis(D)
    return linalg.subspace_intersection(spaces, angle_tol)


def _wavelet_option(phi, d_w, child_nodes, n, D, d_eps, angle_tol):
    """Evaluate the wavelet strategy for one d_w; returns (cost, B, [Psi_perp])."""
    phi_w = phi[:, :d_w]
    spaces = [linalg.orthonormal_complement_projection(phi_w, ch.basis) for ch in child_nodes]
    shared = _intersection(spaces, angle_tol)
    perps = [linalg.complement_within(s, shared) for s in spaces]
    cost = wavelet_cost([ch.cost for ch in child_nodes], [ch.dim for ch in child_nodes],
                        [ch.size for ch in child_nodes], n, d_w, shared.shape[1],
                        [p.shape[1] for p in perps], D, d_eps)
    return cost, np.hstack([phi_w, shared]), perps


def prune(cloud, tree: PartitionTree, eps: float, angle_tol: float = 1e-8) -> PrunedForest:
    """Bottom-up choice among ParentOnly / ChildrenOnly / Wavelet(d_w) at every nonleaf.

    Leaves get their minimal-dimension epsilon-plane (RMS residual over the
    cell <= eps). Ties prefer ParentOnly, then ChildrenOnly, then Wavelet
    with the smaller d_w. A node that chooses ChildrenOnly is removed and its
    children start separate trees; its parent then cannot use wavelets.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    X = np.asarray(getattr(cloud, "coords", cloud), dtype=float)
    if X.shape != (tree.n_points, tree.ambient_dim):
        raise DimMismatch(f"cloud shape {X.shape} does not match tree")
    D = tree.ambient_dim
    state: dict = {}
    removed: set = set()
    decisions: dict = {}

    for key in sorted(tree.nodes, key=lambda k: (-k[0], k[1])):
        cell = tree.nodes[key]
        phi, spectrum = linalg.local_pca(X[cell.indices], cell.center)
        d_eps = eps_dimension(spectrum, eps)
        base = PrunedNode(key, cell.indices, cell.center, phi[:, :d_eps].copy(),
                          leaf_cost(cell.size, d_eps, D), d_eps, parent=cell.parent)
        if cell.is_leaf:
            state[key] = base
            continue
        kids = [state[c] for c in cell.children]
        options = {PARENT_ONLY: parent_only_cost(cell.size, d_eps, D),
                   CHILDREN_ONLY: children_only_cost([k.cost for k in kids])}
        best_w = None
        if not any(c in removed for c in cell.children):
            for d_w in range(d_eps + 1):
                cand = _wavelet_option(phi, d_w, kids, cell.size, D, d_eps, angle_tol)
                if best_w is None or cand[0].total < best_w[0].total:
                    best_w = cand
            options[WAVELET] = best_w[0]
        chosen = min(options, key=lambda s: (options[s].total, TIE_ORDER.index(s)))
        decisions[key] = {"chosen": chosen, "options": options, "n": cell.size,
                          "d_eps": d_eps, "children": list(cell.children)}
        if chosen == PARENT_ONLY:
            base.cost = options[PARENT_ONLY]
            base.options = options
            state[key] = base
        elif chosen == CHILDREN_ONLY:
            removed.add(key)
            for k in kids:
                k.parent = None
                k.specific_wavelet = k.translation = None
            state[key] = PrunedNode(key, cell.indices, cell.center, linalg.empty_basis(D),
                                    options[CHILDREN_ONLY], d_eps, options=options)
        else:
            cost, B, perps = best_w
            node = PrunedNode(key, cell.indices, cell.center, B, cost, d_eps,
                              list(cell.children), cell.parent, options=options)
            for k, perp in zip(kids, perps):
                t = k.center - cell.center
                k.specific_wavelet = perp
                k.translation = t - B @ (B.T @ t)
            state[key] = node

    # collect surviving nodes top-down
    nodes, roots = {}, []
    stack = [(0, 0)]
    while stack:
        key = stack.pop()
        if key in removed:
            stack.extend(reversed(tree.nodes[key].children))
            continue
        node = state[key]
        if node.parent is None or node.parent in removed:
            node.parent = None
            roots.append(key)
        nodes[key] = node
        stack.extend(reversed(node.children))
    roots.sort()
    return PrunedForest(roots, dict(sorted(nodes.items())), eps, D, tree.n_points, decisions)


def forest_leaf_of(forest: PrunedForest) -> list:
    out = [None] * forest.n_points
    for key in forest.leaves():
        for i in forest.nodes[key].indices:
            out[i] = key
    return out


def forest_encode(forest: PrunedForest, cloud):
    """Coefficients and reconstructions of the training points.

    Returns ``(recon, coeffs)`` where ``coeffs[i]`` maps each path node to its
    block (root: ``B^T (y - c)``; others: ``Psi_perp^T (y - c)``).
    """
    X = np.asarray(getattr(cloud, "coords", cloud), dtype=float)
    recon = np.empty_like(X)
    coeffs = [None] * X.shape[0]
    for leaf in forest.leaves():
        L = forest.nodes[leaf]
        idx = L.indices
        Y = L.center + ((X[idx] - L.center) @ L.basis) @ L.basis.T
        path = forest.path(leaf)
        blocks = {}
        for key in reversed(path[1:]):
            node = forest.nodes[key]
            parent = forest.nodes[node.parent]
            blocks[key] = (Y - node.center) @ node.specific_wavelet
            Y = parent.center + ((Y - parent.center) @ parent.basis) @ parent.basis.T
        root = forest.nodes[path[0]]
        blocks[path[0]] = (Y - root.center) @ root.basis
        recon[idx] = forest_decode_blocks(forest, path, blocks)
        for r, i in enumerate(idx):
            coeffs[i] = {k: b[r] for k, b in blocks.items()}
    return recon, coeffs


def forest_decode_blocks(forest: PrunedForest, path: list, blocks: dict) -> np.ndarray:
    root = forest.nodes[path[0]]
    out = root.center + blocks[path[0]] @ root.basis.T
    for key in path[1:]:
        node = forest.nodes[key]
        out = out + blocks[key] @ node.specific_wavelet.T + node.translation
    return out


def forest_direct_cost(forest: PrunedForest) -> EncodingCost:
    """Cost counted from the stored forest itself, independent of the recursion."""
    D = forest.ambient_dim
    coef = dic = 0
    for key, node in forest.nodes.items():
        if node.parent is None:
            dic += D * node.dim + D
        else:
            dic += D * node.specific_wavelet.shape[1] + 2 * D
    for leaf in forest.leaves():
        path = forest.path(leaf)
        per_point = forest.nodes[path[0]].dim + sum(
            forest.nodes[k].specific_wavelet.shape[1] for k in path[1:])
        coef += per_point * forest.nodes[leaf].size
    return EncodingCost(coef, dic, "forest")


def rms_error(X: np.ndarray, R: np.ndarray) -> float:
    return float(np.sqrt(np.mean(((X - R) ** 2).sum(axis=1))))


# -- baselines ---------------------------------------------------------------

@dataclass
class CostPoint:
    method: str
    param: float
    coefficient_cost: float
    dictionary_cost: float
    error: float

    @property
    def total(self) -> float:
        return self.coefficient_cost + self.dictionary_cost


def svd_baseline(cloud, ranks=None, deltas=None) -> list[CostPoint]:
    """Global PCA encodings: every rank, and thresholded full-rank coefficients.

    Rank r costs ``r n`` coefficients and ``r D + D`` dictionary numbers (the
    basis and the mean). The thresholded variant zeroes full-rank
    coefficients below delta and drops basis vectors whose coefficients all
    vanish. Errors are RMS point distances.
    """
    X = np.asarray(getattr(cloud, "coords", cloud), dtype=float)
    n, D = X.shape
    mean = X.mean(axis=0)
    basis, spectrum = linalg.local_pca(X, mean)
    rank = linalg.numerical_rank(spectrum)
    basis = basis[:, :rank]
    out = []
    if ranks is None:
        ranks = range(rank + 1)
    tails = np.concatenate([np.cumsum(spectrum[::-1])[::-1], [0.0]])
    for r in ranks:
        r = min(int(r), rank)
        err = float(np.sqrt(max(tails[r], 0.0)))
        out.append(CostPoint("svd", r, r * n, r * D + D, err))
    if deltas is not None:
        C = (X - mean) @ basis
        base_sq = float(max(tails[rank], 0.0))
        for delta in deltas:
            keep = np.abs(C) >= delta
            dropped = np.where(keep, 0.0, C)
            err = float(np.sqrt(base_sq + (dropped**2).sum(axis=1).mean()))
            used = int(keep.any(axis=0).sum())
            out.append(CostPoint("svd_threshold", float(delta), int(keep.sum()), used * D + D, err))
    return out


def gmra_cost(model, coeffs=None) -> EncodingCost:
    """Counts for a plain GMRA: per-point block entries plus dictionary.

    Dictionary: D per basis vector in use (root scaling basis, wavelet
    bases), and 2D per node for its center and translation. With `coeffs`
    (possibly thresholded), only nonzero entries and basis vectors that
    multiply some nonzero entry are counted.
    """
    D = model.ambient_dim
    n_nodes = len(model.nodes)
    if coeffs is None:
        coef = 0
        for leaf in model.tree.leaves():
            path = model.path(leaf.id)
            coef += leaf.size * sum(model.nodes[k].wavelet_dim for k in path)
        vectors = sum(node.wavelet_dim for node in model.nodes.values())
        return EncodingCost(coef, D * vectors + 2 * D * n_nodes, "gmra")
    coef = 0
    used: dict = {}
    for c in coeffs:
        for j, key in enumerate(c.path):
            b = c.block_at(j)
            nz = b != 0
            coef += int(nz.sum())
            if nz.any():
                used[key] = used.get(key, np.zeros(b.size, bool)) | nz
    vectors = sum(int(u.sum()) for u in used.values())
    return EncodingCost(coef, D * vectors + 2 * D * n_nodes, "gmra")


def ortho_cost(model, coeffs=None) -> EncodingCost:
    """Counts for an orthogonal GMRA, same conventions as :func:`gmra_cost`."""
    D = model.ambient_dim
    n_nodes = len(model.nodes)
    coef = 0
    used: dict = {}
    if coeffs is None:
        for leaf in model.tree.leaves():
            coef += leaf.size * sum(model.nodes[k].dim for k in model.path(leaf.id))
        vectors = sum(node.dim for node in model.nodes.values())
        return EncodingCost(coef, D * vectors + 2 * D * n_nodes, "ortho")
    for c in coeffs:
        for j, key in enumerate(c.path):
            nz = c.block_at(j) != 0
            coef += int(nz.sum())
            if nz.any():
                used[key] = used.get(key, np.zeros(nz.size, bool)) | nz
    vectors = sum(int(u.sum()) for u in used.values())
    return EncodingCost(coef, D * vectors + 2 * D * n_nodes, "ortho")
