"""Geometric multi-resolution analysis: scaling bases, wavelet bases, translations.

For every cell (j, k) of a partition tree the model stores the cell mean
``c``, an orthonormal basis ``Phi`` of its best-fitting local plane, and for
non-root cells the wavelet basis ``Psi`` of ``(I - P_parent) span(Phi)``
together with the translation ``w = (I - P_parent)(c - c_parent)``. The root
carries ``Psi = Phi`` and ``w = c``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import linalg
from .errors import DimensionExceedsCell, NodeNotFound, NotApplicable, DimMismatch
from .tree import PartitionTree, NodeKey

FIXED = "fixed"
RELATIVE = "relative"
ABSOLUTE = "absolute"

NONLEAF_KEEP_DEFAULT = 0.5   # relative threshold keeping 50% of the variance
LEAF_KEEP_DEFAULT = 0.05     # relative threshold keeping 95% of the variance


@dataclass
class DimensionPolicy:
    """Rule choosing the local dimension d_{j,k} from a cell spectrum.

    ``eps`` is a constant, a per-scale sequence (last entry reused beyond its
    end) or a callable ``j -> eps_j``. ``leaf`` optionally overrides the rule
    at leaves.
    """

    kind: str = FIXED
    d: int = 2
    eps: float | Sequence[float] | Callable[[int], float] | None = None
    leaf: "DimensionPolicy | None" = None

    def __post_init__(self):
        if self.kind == FIXED:
            if self.d < 1:
                raise ValueError("fixed dimension must be >= 1")
        elif self.kind in (RELATIVE, ABSOLUTE):
            if self.eps is None:
                raise ValueError(f"{self.kind} threshold needs eps")
            if not callable(self.eps):
                values = np.atleast_1d(np.asarray(self.eps, dtype=float))
                if (values <= 0).any() or (self.kind == RELATIVE and (values > 1).any()):
                    raise ValueError(f"invalid {self.kind} threshold {self.eps!r}")
        else:
            raise ValueError(f"unknown policy kind {self.kind!r}")

    @classmethod
    def fixed(cls, d: int) -> "DimensionPolicy":
        return cls(FIXED, d=d)

    @classmethod
    def relative(cls, eps=None, leaf: "DimensionPolicy | None" = None) -> "DimensionPolicy":
        if eps is None:
            return cls(RELATIVE, eps=NONLEAF_KEEP_DEFAULT,
                       leaf=leaf or cls(RELATIVE, eps=LEAF_KEEP_DEFAULT))
        return cls(RELATIVE, eps=eps, leaf=leaf)

    @classmethod
    def absolute(cls, eps, leaf: "DimensionPolicy | None" = None) -> "DimensionPolicy":
        return cls(ABSOLUTE, eps=eps, leaf=leaf)

    def threshold(self, j: int) -> float:
        if callable(self.eps):
            return float(self.eps(j))
        values = np.atleast_1d(np.asarray(self.eps, dtype=float))
        return float(values[min(j, values.size - 1)])

    def for_node(self, is_leaf: bool) -> "DimensionPolicy":
        return self.leaf if (is_leaf and self.leaf is not None) else self

    def describe(self) -> dict:
        eps = self.eps
        if callable(eps):
            eps = "callable"
        elif eps is not None and not np.isscalar(eps):
            eps = [float(v) for v in eps]
        return {"kind": self.kind, "d": self.d, "eps": eps,
                "leaf": None if self.leaf is None else self.leaf.describe()}

    @classmethod
    def from_description(cls, desc: dict) -> "DimensionPolicy":
        leaf = desc.get("leaf")
        return cls(desc["kind"], d=desc.get("d", 2), eps=desc.get("eps"),
                   leaf=None if leaf is None else cls.from_description(leaf))


def select_dimension(spectrum, policy: DimensionPolicy, j: int = 0, is_leaf: bool = False) -> int:
    """Local dimension for a cell with the given (nonincreasing) spectrum.

    Fixed(d) gives ``min(d, numerical rank)``; the thresholds give the
    smallest d whose tail variance is within ``eps_j`` (times the total for the
    relative rule). The result is floored at 1 unless the spectrum is zero.
    """
    spectrum = np.clip(np.asarray(spectrum, dtype=float), 0.0, None)
    policy = policy.for_node(is_leaf)
    rank = linalg.numerical_rank(spectrum)
    if rank == 0:
        return 0
    if policy.kind == FIXED:
        return min(policy.d, rank)
    tails = np.concatenate([np.cumsum(spectrum[::-1])[::-1], [0.0]])  # tails[d] = sum_{l>d}
    limit = policy.threshold(j)
    if policy.kind == RELATIVE:
        limit *= spectrum.sum()
    d = int(np.argmax(tails <= limit))
    return min(max(d, 1), rank)


@dataclass
class GmraNode:
    key: NodeKey
    center: np.ndarray
    basis: np.ndarray                 # Phi, (D, d)
    spectrum: np.ndarray              # full local spectrum
    size: int
    wavelet: np.ndarray = None        # Psi, (D, d_w)
    translation: np.ndarray = None    # w
    psi_phi: np.ndarray = None        # Psi^T Phi, (d_w, d)
    parent_phi: np.ndarray = None     # Phi_parent^T Phi, (d_parent, d)
    parent_shift: np.ndarray = None   # Phi_parent^T (c - c_parent)
    shared_wavelet: np.ndarray = None     # intersection of children wavelet spaces
    specific_wavelet: np.ndarray = None   # complement of the parent's shared part

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def wavelet_dim(self) -> int:
        return self.wavelet.shape[1]

    @property
    def sigma(self) -> np.ndarray:
        return self.spectrum[: self.dim]

    @property
    def tail_variance(self) -> float:
        return float(self.spectrum[self.dim:].sum())


@dataclass
class GmraModel:
    tree: PartitionTree
    nodes: dict
    policy: DimensionPolicy
    tangential_corrections: bool = True
    split_shared_wavelets: bool = False
    precision: float | None = None
    model_id: str = ""
    _leaf_cache: dict = field(default_factory=dict, repr=False)

    @property
    def ambient_dim(self) -> int:
        return self.tree.ambient_dim

    @property
    def max_scale(self) -> int:
        return self.tree.max_scale

    def node(self, j: int, k: int | None = None) -> GmraNode:
        key = tuple(j) if k is None else (j, k)
        try:
            return self.nodes[key]
        except KeyError:
            raise NodeNotFound(key) from None

    def leaves(self) -> list[NodeKey]:
        return [n.id for n in self.tree.leaves()]

    def path(self, leaf: NodeKey) -> list[NodeKey]:
        return self.tree.path(leaf)

    def leaf_cache(self, leaf: NodeKey):
        """Per-ancestor ``(Phi_a^T Phi_leaf, Phi_a^T (c_leaf - c_a))`` along the root path."""
        if leaf not in self._leaf_cache:
            L = self.nodes[leaf]
            mats, shifts = [], []
            for a in self.path(leaf):
                A = self.nodes[a]
                mats.append(A.basis.T @ L.basis)
                shifts.append(A.basis.T @ (L.center - A.center))
            self._leaf_cache[leaf] = (mats, shifts)
        return self._leaf_cache[leaf]

    def check_point(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.ambient_dim:
            raise DimMismatch(f"point has dimension {x.shape[-1]}, model expects {self.ambient_dim}")
        return x


def _cell_pca(X, tree):
    return {key: linalg.local_pca(X[node.indices], node.center) for key, node in tree.nodes.items()}


def _model_id(nodes: dict, flags: tuple = ()) -> str:
    h = hashlib.sha256(repr(flags).encode())
    for key in sorted(nodes):
        node = nodes[key]
        h.update(repr(key).encode())
        h.update(np.ascontiguousarray(node.center).tobytes())
        h.update(np.ascontiguousarray(node.basis).tobytes())
        h.update(np.ascontiguousarray(node.wavelet).tobytes())
    return h.hexdigest()[:16]


def precision_truncate(X, tree: PartitionTree, policy: DimensionPolicy, precision: float,
                       pca: dict | None = None) -> PartitionTree:
    """Make a leaf of every cell whose RMS distance to its own leaf-policy plane is <= precision."""
    pca = pca or _cell_pca(X, tree)

    def good_enough(node):
        _, spectrum = pca[node.id]
        d = select_dimension(spectrum, policy, node.scale, is_leaf=True)
        return spectrum[d:].sum() <= precision**2

    return tree.truncate(good_enough)


def construct_gmra(cloud, tree: PartitionTree, policy: DimensionPolicy | None = None,
                   precision: float | None = None, *, tangential_corrections: bool = True,
                   split_shared_wavelets: bool = False, strict_dims: bool = False) -> GmraModel:
    """Build scaling functions, wavelet bases and translations on every cell.

    With `precision`, the finest scale is chosen adaptively: a cell whose RMS
    residual to its local plane is within `precision` keeps no offspring.
    `strict_dims` raises :class:`DimensionExceedsCell` when a fixed policy
    asks for more dimensions than a cell has points, instead of capping at the
    numerical rank.
    """
    X = np.asarray(getattr(cloud, "coords", cloud), dtype=float)
    if X.shape != (tree.n_points, tree.ambient_dim):
        raise DimMismatch(f"cloud shape {X.shape} does not match tree "
                          f"({tree.n_points}, {tree.ambient_dim})")
    policy = policy or DimensionPolicy.fixed(2)
    pca = _cell_pca(X, tree)
    if precision is not None:
        tree = precision_truncate(X, tree, policy, precision, pca)

    nodes = {}
    # fine-to-coarse order matches the construction; results do not depend on it
    for key in sorted(tree.nodes, reverse=True):
        cell = tree.nodes[key]
        basis, spectrum = pca[key]
        d = select_dimension(spectrum, policy, cell.scale, is_leaf=cell.is_leaf)
        if strict_dims:
            p = policy.for_node(cell.is_leaf)
            if p.kind == "fixed" and p.d > cell.size:
                raise DimensionExceedsCell(key, p.d, cell.size)
        nodes[key] = GmraNode(key, cell.center, basis[:, :d].copy(), spectrum, cell.size)

    for key, node in nodes.items():
        parent = tree.nodes[key].parent
        if parent is None:
            node.wavelet = node.basis
            node.translation = node.center.copy()
            node.psi_phi = np.eye(node.dim)
            continue
        P = nodes[parent]
        node.wavelet = linalg.orthonormal_complement_projection(P.basis, node.basis)
        t = node.center - P.center
        node.translation = t - P.basis @ (P.basis.T @ t)
        node.psi_phi = node.wavelet.T @ node.basis
        node.parent_phi = P.basis.T @ node.basis
        node.parent_shift = P.basis.T @ t

    model = GmraModel(tree, dict(sorted(nodes.items())), policy, tangential_corrections,
                      split_shared_wavelets, precision)
    if split_shared_wavelets:
        for key, cell in tree.nodes.items():
            if len(cell.children) < 2:
                continue
            shared, specific = split_shared_wavelets_at(model, *key)
            model.nodes[key].shared_wavelet = shared
            for child, spec in zip(cell.children, specific):
                ch = model.nodes[child]
                ch.specific_wavelet = spec
                ch.wavelet = np.hstack([shared, spec])
                ch.psi_phi = ch.wavelet.T @ ch.basis
    model.model_id = _model_id(model.nodes, (tangential_corrections, split_shared_wavelets))
    return model


def split_shared_wavelets_at(model: GmraModel, j: int, k: int, angle_tol: float = 1e-8):
    """Split children wavelet spaces of (j, k) into a shared part and per-child complements.

    Returns ``(shared, [specific_child, ...])`` in child order; each child's
    wavelet space is the orthogonal sum ``span(shared) + span(specific)``.
    """
    cell = model.tree[(j, k)]
    if len(cell.children) < 2:
        raise NotApplicable(f"node {(j, k)} has fewer than two children")
    D = model.ambient_dim
    psis = [model.nodes[c].wavelet for c in cell.children]
    if any(p.shape[1] == 0 for p in psis):
        shared = linalg.empty_basis(D)
    else:
        shared = linalg.subspace_intersection(psis, angle_tol)
    specific = [linalg.complement_within(p, shared) for p in psis]
    return shared, specific


# -- projections and errors ------------------------------------------------

def scaling_projection(model: GmraModel, j: int, k: int, x: np.ndarray) -> np.ndarray:
    """Affine projection ``c + Phi Phi^T (x - c)`` onto the plane of cell (j, k)."""
    node = model.node(j, k)
    x = model.check_point(x)
    return node.center + (x - node.center) @ node.basis @ node.basis.T


def wavelet_detail(model: GmraModel, j: int, k: int, x: np.ndarray) -> np.ndarray:
    """``x_{j} - x_{j-1}`` for cell (j, k) and its parent, from the two projections."""
    parent = model.tree[(j, k)].parent if (j, k) in model.tree else None
    if parent is None:
        raise NodeNotFound((j, k)) if (j, k) not in model.tree else NotApplicable("root has no detail")
    return scaling_projection(model, j, k, x) - scaling_projection(model, *parent, x)


def point_path(model: GmraModel, leaf: NodeKey, j: int) -> NodeKey:
    """Cell of the path to `leaf` used at scale j (the leaf itself beyond its depth)."""
    return model.tree.ancestor_at(leaf, j)


def project_to_scale(model: GmraModel, X: np.ndarray, j: int, leaves=None) -> np.ndarray:
    """``P_{M_j}`` applied to each row of X, using the training leaf assignment by default."""
    X = model.check_point(np.atleast_2d(X))
    leaves = model.tree.leaf_of if leaves is None else leaves
    out = np.empty_like(X)
    groups: dict = {}
    for i, leaf in enumerate(leaves):
        groups.setdefault(point_path(model, leaf, j), []).append(i)
    for key, idx in groups.items():
        node = model.nodes[key]
        Y = X[idx] - node.center
        out[idx] = node.center + (Y @ node.basis) @ node.basis.T
    return out


def approximation_error(model: GmraModel, cloud, j: int, norm: str = "absolute") -> float:
    """Training-set approximation error of ``P_{M_j}``.

    ``"absolute"``: sqrt of the mean squared distance (cells weighted by
    n_{j,k}/n). ``"relative"``: sqrt of the mean of ``(|x - x_j| / |x|)**2``.
    """
    X = np.asarray(getattr(cloud, "coords", cloud), dtype=float)
    R = X - project_to_scale(model, X, j)
    sq = (R**2).sum(axis=1)
    if norm == "absolute":
        return float(np.sqrt(sq.mean()))
    if norm == "relative":
        return float(np.sqrt((sq / (X**2).sum(axis=1)).mean()))
    raise ValueError(f"unknown norm {norm!r}")


def spectral_error(model: GmraModel, j: int) -> float:
    """``sum_k mu(C_jk) sum_{l > d_jk} lambda_l(cov_jk)``: the squared scale-j error."""
    n = model.tree.n_points
    return float(sum(model.nodes[c.id].size / n * model.nodes[c.id].tail_variance
                     for c in model.tree.cut(j)))


def weighted_frobenius_sq(model: GmraModel, j: int) -> float:
    """Cell-weighted mean centered energy ``sum_k mu(C_jk) tr(cov_jk)``."""
    n = model.tree.n_points
    return float(sum(model.nodes[c.id].size / n * model.nodes[c.id].spectrum.sum()
                     for c in model.tree.cut(j)))


def scale_stats(model: GmraModel, cloud) -> list[dict]:
    """Per-scale cell count, mean dimensions and approximation errors."""
    rows = []
    for j in range(model.max_scale + 1):
        cut = [model.nodes[c.id] for c in model.tree.cut(j)]
        at_j = [model.nodes[c.id] for c in model.tree.nodes_at(j)]
        rows.append({
            "scale": j,
            "cells": len(at_j),
            "mean_dim": float(np.mean([n.dim for n in at_j])),
            "mean_wavelet_dim": float(np.mean([n.wavelet_dim for n in at_j])),
            "error_abs": approximation_error(model, cloud, j, "absolute"),
            "error_rel": approximation_error(model, cloud, j, "relative"),
            "error_spectral": float(np.sqrt(spectral_error(model, j))),
            "cut_cells": len(cut),
        })
    return rows


def leaf_order(model: GmraModel) -> list[NodeKey]:
    """Leaves sorted by (k, j): the tie-breaking order of nearest-center assignment."""
    return sorted(model.leaves(), key=lambda key: (key[1], key[0]))


def nearest_leaf(model: GmraModel, X: np.ndarray) -> list[NodeKey]:
    """Leaf whose center is closest to each row of X (exact scan; ties to smallest k)."""
    X = model.check_point(np.atleast_2d(X))
    order = leaf_order(model)
    C = np.stack([model.nodes[key].center for key in order])
    chunk = max(1, 2**22 // C.size)
    out = []
    for start in range(0, X.shape[0], chunk):
        block = X[start:start + chunk]
        d2 = ((block[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
        out.extend(order[i] for i in np.argmin(d2, axis=1))
    return out
