"""Naive multiscale generative model and Hausdorff-type cloud distances.

At scale j, each cell of the scale-j partition gets weight n_{j,k}/n and a
Gaussian in the coordinates of its local plane. Sampling picks a cell by
weight and draws a point on that plane.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datasets import PointCloud
from .errors import EmptyInput
from .model import GmraModel

DIAGONAL = "diag"
FULL = "full"


@dataclass
class CellFactor:
    key: tuple
    weight: float
    center: np.ndarray
    basis: np.ndarray       # (D, d) local plane
    mean: np.ndarray        # (d,) in local coordinates
    scale: np.ndarray       # (d,) std for diag, (d, d) square-root factor for full


@dataclass
class ScaleModel:
    scale: int
    cells: list
    covariance: str = DIAGONAL
    ambient_dim: int = 0

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.cells])


def fit_scale_model(model: GmraModel, cloud, j: int, covariance: str = DIAGONAL) -> ScaleModel:
    """Per-cell weights and Gaussian factors on the scale-j planes."""
    if covariance not in (DIAGONAL, FULL):
        raise ValueError(f"unknown covariance {covariance!r}")
    if j < 0 or j > model.max_scale:
        raise ValueError(f"scale {j} outside [0, {model.max_scale}]")
    X = np.asarray(getattr(cloud, "coords", cloud), dtype=float)
    n = X.shape[0]
    cells = []
    for cell in model.tree.cut(j):
        node = model.nodes[cell.id]
        Y = (X[cell.indices] - node.center) @ node.basis
        mean = Y.mean(axis=0)
        if covariance == DIAGONAL:
            scale = Y.std(axis=0)
        else:
            Yc = Y - mean
            cov = Yc.T @ Yc / Y.shape[0]
            vals, vecs = np.linalg.eigh(cov)
            scale = vecs * np.sqrt(np.clip(vals, 0.0, None))
        cells.append(CellFactor(cell.id, cell.size / n, node.center, node.basis, mean, scale))
    return ScaleModel(j, cells, covariance, model.ambient_dim)


def sample(scale_model: ScaleModel, m: int, seed: int = 0) -> PointCloud:
    """Draw `m` points; ``meta["cell"]`` holds the index of each point's cell."""
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = np.random.default_rng(seed)
    w = scale_model.weights
    which = rng.choice(len(scale_model.cells), size=m, p=w / w.sum())
    out = np.empty((m, scale_model.ambient_dim))
    for i, cell in enumerate(scale_model.cells):
        idx = np.flatnonzero(which == i)
        if idx.size == 0:
            continue
        d = cell.basis.shape[1]
        z = rng.standard_normal((idx.size, d))
        if scale_model.covariance == DIAGONAL:
            local = cell.mean + z * cell.scale
        else:
            local = cell.mean + z @ cell.scale.T
        out[idx] = cell.center + local @ cell.basis.T
    return PointCloud(out, label=f"sample-scale-{scale_model.scale}", meta={"cell": which})


def nearest_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """For each row of `a`, the Euclidean distance to the closest row of `b`."""
    a = np.atleast_2d(np.asarray(getattr(a, "coords", a), dtype=float))
    b = np.atleast_2d(np.asarray(getattr(b, "coords", b), dtype=float))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise EmptyInput("distance to an empty cloud")
    chunk = max(1, 2**22 // max(1, b.size))
    out = np.empty(a.shape[0])
    for s in range(0, a.shape[0], chunk):
        d2 = ((a[s:s + chunk, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        out[s:s + chunk] = np.sqrt(d2.min(axis=1))
    return out


def hausdorff(a, b, mode: str = "max") -> float:
    """Symmetric Hausdorff distance, or the max of the two median NN distances."""
    ab = nearest_distances(a, b)
    ba = nearest_distances(b, a)
    if mode == "max":
        return float(max(ab.max(), ba.max()))
    if mode == "median":
        return float(max(np.median(ab), np.median(ba)))
    raise ValueError(f"unknown mode {mode!r}")
