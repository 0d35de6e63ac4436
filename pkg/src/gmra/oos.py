"""Wavelet expansion of points outside the training set.

A query is attached to the leaf with the nearest center. Its projection onto
that leaf plane is transformed as usual; the normal residual
``e = x - P_J(x)`` is then projected greedily onto the wavelet spaces of the
leaf path, finest first, and finally onto the root scaling space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import GmraModel, nearest_leaf, NodeKey
from .transforms import GwtCoefficients, fgwt_batch, igwt_batch


@dataclass
class OosExpansion:
    leaf: NodeKey
    coefficients: GwtCoefficients       # transform of P_J(x)
    normal_blocks: list                 # fine to coarse: Psi_J..Psi_1, then Phi_0
    residual_norms: list                # |e| before the first step and after each step
    residual: np.ndarray = field(repr=False)

    @property
    def path(self) -> list:
        return self.coefficients.path


def assign_leaf(model: GmraModel, x: np.ndarray) -> NodeKey:
    """Leaf with the nearest center; ties go to the smallest k."""
    return nearest_leaf(model, np.asarray(x, dtype=float)[None, :])[0]


def expand_oos_batch(model: GmraModel, X: np.ndarray, leaves=None) -> list[OosExpansion]:
    X = model.check_point(np.atleast_2d(np.asarray(getattr(X, "coords", X), dtype=float)))
    if leaves is None:
        leaves = nearest_leaf(model, X)
    out = [None] * X.shape[0]
    groups: dict = {}
    for i, leaf in enumerate(leaves):
        groups.setdefault(tuple(leaf), []).append(i)
    for leaf, idx in groups.items():
        L = model.nodes[leaf]
        Xg = X[idx]
        XJ = L.center + ((Xg - L.center) @ L.basis) @ L.basis.T
        coeffs = fgwt_batch(model, XJ, [leaf] * len(idx))
        E = Xg - XJ
        norms = [np.linalg.norm(E, axis=1)]
        blocks = []
        path = model.path(leaf)
        for key in reversed(path):
            node = model.nodes[key]
            basis = node.wavelet if key != path[0] else node.basis
            b = E @ basis
            E = E - b @ basis.T
            blocks.append(b)
            norms.append(np.linalg.norm(E, axis=1))
        for r, i in enumerate(idx):
            coeffs[r].residual = float(norms[0][r])
            out[i] = OosExpansion(leaf, coeffs[r], [b[r].copy() for b in blocks],
                                  [float(n[r]) for n in norms], E[r].copy())
    return out


def expand_oos(model: GmraModel, x: np.ndarray, leaf: NodeKey | None = None) -> OosExpansion:
    """Expansion of one query point (see :func:`expand_oos_batch`)."""
    x = np.asarray(x, dtype=float).ravel()
    return expand_oos_batch(model, x[None, :], None if leaf is None else [leaf])[0]


def reconstruct_oos(model: GmraModel, expansions: list[OosExpansion],
                    include_normal: bool = True) -> np.ndarray:
    """In-model reconstruction, plus the normal components when requested."""
    R = igwt_batch(model, [e.coefficients for e in expansions])
    if include_normal:
        for i, e in enumerate(expansions):
            path = e.path
            for key, b in zip(reversed(path), e.normal_blocks):
                node = model.nodes[key]
                basis = node.wavelet if key != path[0] else node.basis
                R[i] += basis @ b
    return R
