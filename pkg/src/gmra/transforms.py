"""Forward and inverse geometric wavelet transforms and coefficient thresholding.

A point's coefficients are the blocks ``q_J, q_{J-1}, ..., q_1, p_0`` along
the path from its leaf up to the root (fine to coarse). The forward
transform only touches the small cached matrices ``Phi_a^T Phi_leaf`` and
``Psi^T Phi``; nothing of size D x D is formed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ModelMismatch
from .model import GmraModel, nearest_leaf, NodeKey


@dataclass
class GwtCoefficients:
    """Wavelet coefficients of one point.

    ``path`` runs root to leaf; ``blocks`` runs the other way (``blocks[0]``
    belongs to the leaf, ``blocks[-1]`` is the root scaling block ``p_0``).
    ``residual`` is ``|x - x_J|``, the part of the input the model cannot see.
    """

    path: list
    blocks: list
    ambient_dim: int
    model_id: str
    residual: float = 0.0

    @property
    def leaf(self) -> NodeKey:
        return self.path[-1]

    @property
    def size(self) -> int:
        return int(sum(b.size for b in self.blocks))

    def block_at(self, j: int) -> np.ndarray:
        """Block belonging to path scale j (0 = root)."""
        return self.blocks[len(self.path) - 1 - j]

    def copy(self) -> "GwtCoefficients":
        return GwtCoefficients(list(self.path), [b.copy() for b in self.blocks],
                               self.ambient_dim, self.model_id, self.residual)


def _groups(leaves) -> dict:
    groups: dict = {}
    for i, leaf in enumerate(leaves):
        groups.setdefault(tuple(leaf), []).append(i)
    return groups


def _forward_group(model: GmraModel, X: np.ndarray, leaf: NodeKey):
    """Blocks (fine to coarse) for the rows of X, all assigned to `leaf`."""
    path = model.path(leaf)
    L = model.nodes[leaf]
    P = (X - L.center) @ L.basis                     # p_J
    resid = np.linalg.norm(X - L.center - P @ L.basis.T, axis=1)
    blocks = []
    if model.tangential_corrections:
        mats, shifts = model.leaf_cache(leaf)
        for i in range(len(path) - 1, -1, -1):
            node = model.nodes[path[i]]
            p = P @ mats[i].T + shifts[i]            # p_j = Phi_j^T Phi_J p_J + Phi_j^T (c_J - c_j)
            blocks.append(p if i == 0 else p @ node.psi_phi.T)
    else:
        p = P
        for i in range(len(path) - 1, -1, -1):
            node = model.nodes[path[i]]
            blocks.append(p if i == 0 else p @ node.psi_phi.T)
            if i:
                p = p @ node.parent_phi.T + node.parent_shift
    return path, blocks, resid


def fgwt_batch(model: GmraModel, X: np.ndarray, leaves=None) -> list[GwtCoefficients]:
    """Forward transform of every row of X.

    `leaves` defaults to the training assignment when X is the training cloud
    (same row count) and to the nearest leaf center otherwise.
    """
    X = model.check_point(np.atleast_2d(np.asarray(getattr(X, "coords", X), dtype=float)))
    if leaves is None:
        leaves = model.tree.leaf_of if X.shape[0] == model.tree.n_points else nearest_leaf(model, X)
    out = [None] * X.shape[0]
    for leaf, idx in _groups(leaves).items():
        path, blocks, resid = _forward_group(model, X[idx], leaf)
        for r, i in enumerate(idx):
            out[i] = GwtCoefficients(path, [b[r].copy() for b in blocks],
                                     model.ambient_dim, model.model_id, float(resid[r]))
    return out


def fgwt(model: GmraModel, x: np.ndarray, leaf: NodeKey | None = None) -> GwtCoefficients:
    """Forward transform of a single point (nearest-leaf assignment by default)."""
    x = model.check_point(np.asarray(x, dtype=float).ravel())
    if leaf is None:
        leaf = nearest_leaf(model, x[None, :])[0]
    return fgwt_batch(model, x[None, :], [leaf])[0]


def _inverse_group(model: GmraModel, path: list, blocks: list, max_scale: int | None = None):
    """Reconstruct from stacked blocks (each block ``(m, d)``, fine to coarse)."""
    depth = len(path) - 1
    top = depth if max_scale is None else min(depth, max_scale)
    root = model.nodes[path[0]]
    m = blocks[-1].shape[0]
    x = np.tile(root.translation, (m, 1)) + blocks[-1] @ root.wavelet.T
    if model.tangential_corrections:
        if top < depth:
            raise ValueError("partial reconstruction requires the variant without tangential corrections")
        finer = np.zeros_like(x)                     # sum of Q_l for l > j
        for i in range(depth, 0, -1):
            node = model.nodes[path[i]]
            parent = model.nodes[path[i - 1]]
            Q = blocks[depth - i] @ node.wavelet.T + node.translation
            Q -= (finer @ parent.basis) @ parent.basis.T
            finer += Q
        return x + finer
    for i in range(1, top + 1):
        node = model.nodes[path[i]]
        x += blocks[depth - i] @ node.wavelet.T + node.translation
    return x


def igwt_batch(model: GmraModel, coeffs: list[GwtCoefficients],
               max_scale: int | None = None) -> np.ndarray:
    """Inverse transform of many coefficient sets; rows follow the input order.

    `max_scale` truncates the sum (variant without tangential corrections
    only), giving the coarse approximation ``x~_j``.
    """
    out = np.empty((len(coeffs), model.ambient_dim))
    groups: dict = {}
    for i, c in enumerate(coeffs):
        if c.model_id != model.model_id:
            raise ModelMismatch(f"coefficients from model {c.model_id!r}, not {model.model_id!r}")
        groups.setdefault(c.leaf, []).append(i)
    for leaf, idx in groups.items():
        path = coeffs[idx[0]].path
        stacked = [np.stack([coeffs[i].blocks[b] for i in idx]) for b in range(len(path))]
        out[idx] = _inverse_group(model, path, stacked, max_scale)
    return out


def igwt(model: GmraModel, coeffs: GwtCoefficients, max_scale: int | None = None) -> np.ndarray:
    return igwt_batch(model, [coeffs], max_scale)[0]


def fgwt_direct(model: GmraModel, x: np.ndarray, leaf: NodeKey) -> GwtCoefficients:
    """Slow reference transform from explicit affine projections.

    Tangential variant: ``p_j = Phi_j^T (x_J - c_j)``; no-tangent variant:
    ``p_j = Phi_j^T (x~_{j+1} - c_j)`` with ``x~_j = P_j(x~_{j+1})``. In both
    cases ``q_j = Psi_j^T (x_j - c_j)`` on the corresponding projection.
    """
    x = np.asarray(x, dtype=float)
    path = model.path(leaf)
    L = model.nodes[leaf]
    xJ = L.center + L.basis @ (L.basis.T @ (x - L.center))
    blocks = []
    current = xJ
    for i in range(len(path) - 1, -1, -1):
        node = model.nodes[path[i]]
        source = current if not model.tangential_corrections else xJ
        p = node.basis.T @ (source - node.center)
        xj = node.center + node.basis @ p
        blocks.append(p if i == 0 else node.wavelet.T @ (xj - node.center))
        current = xj
    return GwtCoefficients(path, blocks, model.ambient_dim, model.model_id,
                           float(np.linalg.norm(x - xJ)))


# -- coefficient statistics -------------------------------------------------

def scale_magnitudes(coeffs: list[GwtCoefficients]) -> dict:
    """Mean Euclidean norm of the wavelet block at each path scale j >= 1.

    Points whose leaf is coarser than j do not contribute at j.
    """
    sums: dict = {}
    counts: dict = {}
    for c in coeffs:
        for j in range(1, len(c.path)):
            sums[j] = sums.get(j, 0.0) + float(np.linalg.norm(c.block_at(j)))
            counts[j] = counts.get(j, 0) + 1
    return {j: sums[j] / counts[j] for j in sorted(sums)}


def coefficient_matrix(coeffs: list[GwtCoefficients]) -> tuple[np.ndarray, list]:
    """Dense (n_points, total slots) matrix with a zero-padded slot per path scale.

    Returns the matrix and ``[(j, width), ...]`` describing the column blocks.
    """
    widths: dict = {}
    for c in coeffs:
        for j in range(len(c.path)):
            widths[j] = max(widths.get(j, 0), c.block_at(j).size)
    layout = [(j, widths[j]) for j in sorted(widths)]
    offsets = np.cumsum([0] + [w for _, w in layout])
    M = np.zeros((len(coeffs), offsets[-1]))
    for r, c in enumerate(coeffs):
        for (j, _), off in zip(layout, offsets):
            if j < len(c.path):
                b = c.block_at(j)
                M[r, off:off + b.size] = b
    return M, layout


# -- thresholding -----------------------------------------------------------

@dataclass
class ThresholdReport:
    threshold: float
    kept: int
    total: int
    errors: np.ndarray = field(repr=False)
    mode: str = "entry"

    @property
    def ratio(self) -> float:
        return self.kept / self.total if self.total else 1.0

    @property
    def mean_error(self) -> float:
        return float(np.sqrt(np.mean(self.errors**2)))

    @property
    def max_error(self) -> float:
        return float(self.errors.max(initial=0.0))


def threshold_blocks(coeffs: list, delta: float, mode: str = "entry"):
    """Thresholded copies of coefficient sets plus kept/total entry counts.

    ``mode="entry"`` zeroes every wavelet entry with ``|value| < delta``;
    ``mode="block"`` zeroes whole blocks whose Euclidean norm is below
    `delta`. The root block (last in fine-to-coarse order) is never touched.
    """
    if delta < 0:
        raise ValueError("threshold must be >= 0")
    if mode not in ("entry", "block"):
        raise ValueError(f"unknown threshold mode {mode!r}")
    out, kept, total = [], 0, 0
    for c in coeffs:
        t = c.copy()
        for b in t.blocks[:-1]:
            if mode == "entry":
                small = np.abs(b) < delta
                b[small] = 0.0
                kept += int(b.size - small.sum())
            elif np.linalg.norm(b) < delta:
                b[:] = 0.0
            else:
                kept += b.size
        kept += t.blocks[-1].size
        total += sum(b.size for b in t.blocks)
        out.append(t)
    return out, kept, total


def threshold_coefficients(model: GmraModel, coeffs: list[GwtCoefficients], delta: float,
                           mode: str = "entry", reference: np.ndarray | None = None):
    """Zero small wavelet coefficients and measure the damage.

    See :func:`threshold_blocks` for the modes. Errors are distances between
    the thresholded reconstruction and `reference` (by default the
    unthresholded reconstruction ``x_J``).

    Returns ``(thresholded coefficients, ThresholdReport)``.
    """
    out, kept, total = threshold_blocks(coeffs, delta, mode)
    if reference is None:
        reference = igwt_batch(model, coeffs)
    errors = np.linalg.norm(igwt_batch(model, out) - reference, axis=1)
    return out, ThresholdReport(float(delta), kept, total, errors, mode)


def threshold_sweep(model: GmraModel, coeffs: list[GwtCoefficients], deltas,
                    mode: str = "entry", reference: np.ndarray | None = None) -> list[ThresholdReport]:
    if reference is None:
        reference = igwt_batch(model, coeffs)
    return [threshold_coefficients(model, coeffs, float(d), mode, reference)[1] for d in deltas]
