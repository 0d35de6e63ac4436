"""Orthogonal GMRA: each scale contributes only directions new to its path.

Along a root-to-leaf path the bases ``U`` are mutually orthogonal and their
concatenation ``S_j`` grows monotonically. The scale-j approximation of a
point is the affine projection ``s_j = c_j + P_{S_j}(x - c_j)``, and the
inverse transform is a plain sum of ``U q + w`` terms.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import DimMismatch, ModelMismatch
from .model import DimensionPolicy, select_dimension
from .tree import PartitionTree, CellNode, NodeKey

RMS = "rms"
MAX = "max"


@dataclass
class OrthoNode:
    key: NodeKey
    center: np.ndarray
    new_basis: np.ndarray      # U, (D, d_u)
    translation: np.ndarray    # w
    cum_dim: int               # dim S along the path down to this node
    size: int
    residual: float            # cell error of c + span(S), in the model's norm

    @property
    def dim(self) -> int:
        return self.new_basis.shape[1]


@dataclass
class OrthoGmraModel:
    tree: PartitionTree
    nodes: dict
    policy: DimensionPolicy
    precision: float
    norm: str = RMS
    model_id: str = ""

    @property
    def ambient_dim(self) -> int:
        return self.tree.ambient_dim

    @property
    def max_scale(self) -> int:
        return self.tree.max_scale

    def path(self, leaf: NodeKey) -> list:
        return self.tree.path(leaf)

    def leaves(self) -> list:
        return [n.id for n in self.tree.leaves()]

    def cumulative_basis(self, key: NodeKey) -> np.ndarray:
        """``S`` at `key`: the ancestor U bases side by side, root first."""
        blocks = [self.nodes[a].new_basis for a in self.path(key)]
        return np.hstack(blocks) if blocks else linalg.empty_basis(self.ambient_dim)


@dataclass
class OrthoCoefficients:
    path: list
    blocks: list          # fine to coarse, like GwtCoefficients
    ambient_dim: int
    model_id: str
    residual: float = 0.0

    @property
    def leaf(self) -> NodeKey:
        return self.path[-1]

    def block_at(self, j: int) -> np.ndarray:
        return self.blocks[len(self.path) - 1 - j]

    def copy(self) -> "OrthoCoefficients":
        return OrthoCoefficients(list(self.path), [b.copy() for b in self.blocks],
                                 self.ambient_dim, self.model_id, self.residual)


def _cell_error(R: np.ndarray, norm: str) -> float:
    sq = (R**2).sum(axis=1)
    if norm == RMS:
        return float(np.sqrt(sq.mean()))
    if norm == MAX:
        return float(np.sqrt(sq.max()))
    raise ValueError(f"unknown norm {norm!r}")


def construct_ortho(cloud, tree: PartitionTree, policy: DimensionPolicy | None = None,
                    precision: float = 1e-3, norm: str = RMS) -> OrthoGmraModel:
    """Coarse-to-fine orthogonal GMRA with offspring pruning at epsilon.

    A node whose cell is within `precision` of ``c + span(S)`` (RMS or max
    point distance, per `norm`) loses its offspring. Otherwise each child
    fits its own plane of dimension set by `policy`; the part of that plane
    orthogonal to ``S`` becomes the child's U, and the part of the center
    displacement orthogonal to ``S`` its translation.
    """
    X = np.asarray(getattr(cloud, "coords", cloud), dtype=float)
    if X.shape != (tree.n_points, tree.ambient_dim):
        raise DimMismatch(f"cloud shape {X.shape} does not match tree")
    policy = policy or DimensionPolicy.fixed(2)
    D = tree.ambient_dim

    def plane(cell: CellNode, is_leaf: bool):
        basis, spectrum = linalg.local_pca(X[cell.indices], cell.center)
        d = select_dimension(spectrum, policy, cell.scale, is_leaf=is_leaf)
        return basis[:, :d]

    def residual(cell: CellNode, S: np.ndarray) -> float:
        Y = X[cell.indices] - cell.center
        return _cell_error(Y - (Y @ S) @ S.T, norm)

    root = tree.root
    U0 = plane(root, root.is_leaf)
    nodes = {root.id: OrthoNode(root.id, root.center, U0, root.center.copy(), U0.shape[1],
                                root.size, residual(root, U0))}
    cum = {root.id: U0}
    kept = {}
    frontier = [root.id]
    while frontier:
        nxt = []
        for key in frontier:
            cell, S = tree[key], cum[key]
            node = nodes[key]
            if not cell.children or node.residual <= precision:
                kept[key] = []
                continue
            kept[key] = list(cell.children)
            for child in cell.children:
                cc = tree[child]
                U = linalg.orthonormal_complement_projection(S, plane(cc, cc.is_leaf))
                t = cc.center - cell.center
                w = t - S @ (S.T @ t)
                S_child = np.hstack([S, U])
                cum[child] = S_child
                nodes[child] = OrthoNode(child, cc.center, U, w, S_child.shape[1], cc.size,
                                         residual(cc, S_child))
                nxt.append(child)
        frontier = nxt

    pruned = {}
    for key, children in kept.items():
        src = tree[key]
        pruned[key] = CellNode(src.scale, src.key, src.indices, src.center, children, src.parent)
    pruned = dict(sorted(pruned.items()))
    ptree = PartitionTree(pruned, tree.n_points, D, tree.method, tree.seed, tree.stop,
                          tree.levels_per_scale, tree.radius_halving)
    nodes = dict(sorted(nodes.items()))
    h = hashlib.sha256(b"ortho")
    for key, node in nodes.items():
        h.update(repr(key).encode())
        h.update(np.ascontiguousarray(node.new_basis).tobytes())
        h.update(np.ascontiguousarray(node.translation).tobytes())
    return OrthoGmraModel(ptree, nodes, policy, precision, norm, h.hexdigest()[:16])


def ortho_fgwt_batch(model: OrthoGmraModel, X: np.ndarray, leaves=None) -> list[OrthoCoefficients]:
    """Residual recursion from the leaf up: ``q = U^T (r - c)``, ``r -= U q + w``."""
    X = np.atleast_2d(np.asarray(getattr(X, "coords", X), dtype=float))
    if X.shape[1] != model.ambient_dim:
        raise DimMismatch(f"point has dimension {X.shape[1]}, model expects {model.ambient_dim}")
    if leaves is None:
        if X.shape[0] == model.tree.n_points:
            leaves = model.tree.leaf_of
        else:
            leaves = nearest_ortho_leaf(model, X)
    groups: dict = {}
    for i, leaf in enumerate(leaves):
        groups.setdefault(tuple(leaf), []).append(i)
    out = [None] * X.shape[0]
    for leaf, idx in groups.items():
        path = model.path(leaf)
        R = X[idx].copy()
        blocks = []
        for key in reversed(path):
            node = model.nodes[key]
            q = (R - node.center) @ node.new_basis
            R -= q @ node.new_basis.T + node.translation
            blocks.append(q)
        res = np.linalg.norm(R, axis=1)
        for r, i in enumerate(idx):
            out[i] = OrthoCoefficients(path, [b[r].copy() for b in blocks],
                                       model.ambient_dim, model.model_id, float(res[r]))
    return out


def ortho_fgwt(model: OrthoGmraModel, x: np.ndarray, leaf: NodeKey | None = None) -> OrthoCoefficients:
    x = np.asarray(x, dtype=float).ravel()
    return ortho_fgwt_batch(model, x[None, :], None if leaf is None else [leaf])[0]


def ortho_igwt_batch(model: OrthoGmraModel, coeffs: list[OrthoCoefficients],
                     max_scale: int | None = None) -> np.ndarray:
    """Plain sum of ``U q + w`` from the root down (to `max_scale` if given)."""
    out = np.zeros((len(coeffs), model.ambient_dim))
    for i, c in enumerate(coeffs):
        if c.model_id != model.model_id:
            raise ModelMismatch(f"coefficients from model {c.model_id!r}, not {model.model_id!r}")
        depth = len(c.path) - 1
        top = depth if max_scale is None else min(depth, max_scale)
        for j in range(top + 1):
            node = model.nodes[c.path[j]]
            out[i] += node.new_basis @ c.block_at(j) + node.translation
    return out


def ortho_igwt(model: OrthoGmraModel, coeffs: OrthoCoefficients, max_scale: int | None = None):
    return ortho_igwt_batch(model, [coeffs], max_scale)[0]


def nearest_ortho_leaf(model: OrthoGmraModel, X: np.ndarray) -> list:
    order = sorted(model.leaves(), key=lambda key: (key[1], key[0]))
    C = np.stack([model.nodes[k].center for k in order])
    chunk = max(1, 2**22 // C.size)
    out = []
    for start in range(0, X.shape[0], chunk):
        d2 = ((X[start:start + chunk, None, :] - C[None, :, :]) ** 2).sum(axis=2)
        out.extend(order[i] for i in np.argmin(d2, axis=1))
    return out


def path_orthogonality(model: OrthoGmraModel) -> float:
    """Largest ``|U_a^T U_b|_F`` over distinct nodes a, b on a common root-to-leaf path."""
    worst = 0.0
    for leaf in model.leaves():
        S = model.cumulative_basis(leaf)
        if S.shape[1] == 0:
            continue
        G = S.T @ S
        dims = [model.nodes[a].dim for a in model.path(leaf)]
        bounds = np.cumsum([0] + dims)
        for a in range(len(dims)):
            for b in range(a + 1, len(dims)):
                block = G[bounds[a]:bounds[a + 1], bounds[b]:bounds[b + 1]]
                if block.size:
                    worst = max(worst, float(np.linalg.norm(block)))
    return worst


def dominant_frequencies(model: OrthoGmraModel) -> dict:
    """Mean dominant Fourier index of the U basis vectors at each scale.

    Each basis vector is treated as a function sampled on a uniform periodic
    grid; its dominant index is the argmax of ``|rfft|``. Scales without new
    directions are omitted.
    """
    freqs: dict = {}
    for key, node in model.nodes.items():
        if node.dim == 0:
            continue
        spec = np.abs(np.fft.rfft(node.new_basis, axis=0))
        freqs.setdefault(key[0], []).extend(np.argmax(spec, axis=0).tolist())
    return {j: float(np.mean(v)) for j, v in sorted(freqs.items())}


def ortho_scale_errors(model: OrthoGmraModel, cloud) -> list[float]:
    """RMS of ``|x - s_j|`` over training points for every scale j."""
    X = np.asarray(getattr(cloud, "coords", cloud), dtype=float)
    coeffs = ortho_fgwt_batch(model, X)
    return [float(np.sqrt(np.mean(((X - ortho_igwt_batch(model, coeffs, j)) ** 2).sum(axis=1))))
            for j in range(model.max_scale + 1)]
