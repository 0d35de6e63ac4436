"""Multiscale dyadic cell trees built by iterated PCA or iterated 2-means."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Callable, Iterator

import numpy as np

from .errors import EmptyInput
from .linalg import leading_directions

NodeKey = tuple  # (scale j, key k)

IteratedPCA = "pca"
IteratedKMeans = "kmeans"
SPLIT_METHODS = (IteratedPCA, IteratedKMeans)
KMEANS_MAX_ITER = 100


def key_str(key: NodeKey) -> str:
    return f"{key[0]},{key[1]}"


def parse_key(text: str) -> NodeKey:
    j, k = text.split(",")
    return (int(j), int(k))


@dataclass
class StoppingRule:
    """When a cell stops splitting.

    A cell is a leaf when it holds ``<= min_cell_size`` points, sits at
    ``max_scale``, has zero variance, or its mean squared residual beyond the
    top ``dim`` principal directions is ``<= homogeneity``.
    """

    min_cell_size: int | None = None
    max_scale: int = 64
    homogeneity: float = 0.0
    dim: int = 2

    def resolved_min_size(self) -> int:
        if self.min_cell_size is None:
            return max(10, 2 * self.dim)
        return self.min_cell_size


@dataclass
class CellNode:
    scale: int
    key: int
    indices: np.ndarray
    center: np.ndarray
    children: list = field(default_factory=list)
    parent: NodeKey | None = None

    @property
    def id(self) -> NodeKey:
        return (self.scale, self.key)

    @property
    def size(self) -> int:
        return int(self.indices.size)

    @property
    def is_leaf(self) -> bool:
        return not self.children


class PartitionTree:
    """A rooted tree of cells whose leaves partition the point indices."""

    def __init__(self, nodes: dict, n_points: int, ambient_dim: int,
                 method: str = IteratedPCA, seed: int = 0,
                 stop: StoppingRule | None = None, levels_per_scale: int = 1,
                 radius_halving: bool = False):
        self.nodes = nodes
        self.n_points = n_points
        self.ambient_dim = ambient_dim
        self.method = method
        self.seed = seed
        self.stop = stop or StoppingRule()
        self.levels_per_scale = levels_per_scale
        self.radius_halving = radius_halving
        self._leaf_of = None

    @property
    def root(self) -> CellNode:
        return self.nodes[(0, 0)]

    @property
    def max_scale(self) -> int:
        return max(j for j, _ in self.nodes)

    def __getitem__(self, key) -> CellNode:
        return self.nodes[tuple(key)]

    def __contains__(self, key) -> bool:
        return tuple(key) in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self) -> Iterator[CellNode]:
        return iter(self.nodes.values())

    def leaves(self) -> list[CellNode]:
        return [n for n in self.nodes.values() if n.is_leaf]

    def nodes_at(self, j: int) -> list[CellNode]:
        return sorted((n for n in self.nodes.values() if n.scale == j), key=lambda n: n.key)

    def cut(self, j: int) -> list[CellNode]:
        """Cells at scale j plus leaves at coarser scales: a partition of all points."""
        return sorted(
            (n for n in self.nodes.values() if n.scale == j or (n.is_leaf and n.scale < j)),
            key=lambda n: n.id,
        )

    def path(self, key: NodeKey) -> list[NodeKey]:
        """Keys from the root down to `key`."""
        out = [tuple(key)]
        while self.nodes[out[-1]].parent is not None:
            out.append(self.nodes[out[-1]].parent)
        return out[::-1]

    def ancestor_at(self, key: NodeKey, j: int) -> NodeKey:
        """Ancestor of `key` at scale j, or `key` itself when it is coarser."""
        key = tuple(key)
        while key[0] > j:
            key = self.nodes[key].parent
        return key

    @property
    def leaf_of(self) -> list:
        """Leaf key for every point index."""
        if self._leaf_of is None:
            out = [None] * self.n_points
            for leaf in self.leaves():
                for i in leaf.indices:
                    out[i] = leaf.id
            self._leaf_of = out
        return self._leaf_of

    def descendants(self, key: NodeKey) -> list[NodeKey]:
        out, stack = [], list(self.nodes[key].children)
        while stack:
            k = stack.pop()
            out.append(k)
            stack.extend(self.nodes[k].children)
        return out

    def truncate(self, make_leaf: Callable[[CellNode], bool]) -> "PartitionTree":
        """Copy of the tree where every node satisfying `make_leaf` loses its offspring."""
        nodes = {}
        stack = [(0, 0)]
        while stack:
            key = stack.pop()
            src = self.nodes[key]
            children = [] if (src.children and make_leaf(src)) else list(src.children)
            nodes[key] = CellNode(src.scale, src.key, src.indices, src.center, children, src.parent)
            stack.extend(children)
        nodes = dict(sorted(nodes.items()))
        return PartitionTree(nodes, self.n_points, self.ambient_dim, self.method,
                             self.seed, self.stop, self.levels_per_scale, self.radius_halving)

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": "gmra-tree",
            "version": 1,
            "n_points": self.n_points,
            "ambient_dim": self.ambient_dim,
            "method": self.method,
            "seed": self.seed,
            "levels_per_scale": self.levels_per_scale,
            "radius_halving": self.radius_halving,
            "stop": asdict(self.stop),
            "nodes": {
                key_str(n.id): {
                    "parent": None if n.parent is None else key_str(n.parent),
                    "children": [key_str(c) for c in n.children],
                    "indices": [int(i) for i in n.indices],
                    "center": [float(v) for v in n.center],
                }
                for n in self.nodes.values()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict) -> "PartitionTree":
        nodes = {}
        for text, rec in data["nodes"].items():
            key = parse_key(text)
            nodes[key] = CellNode(
                key[0], key[1],
                np.asarray(rec["indices"], dtype=np.int64),
                np.asarray(rec["center"], dtype=float),
                [parse_key(c) for c in rec["children"]],
                None if rec["parent"] is None else parse_key(rec["parent"]),
            )
        return cls(nodes, data["n_points"], data["ambient_dim"], data["method"],
                   data["seed"], StoppingRule(**data["stop"]), data.get("levels_per_scale", 1),
                   data.get("radius_halving", False))

    @classmethod
    def from_json(cls, text: str) -> "PartitionTree":
        return cls.from_dict(json.loads(text))


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    i = np.argmax(np.abs(v))
    return -v if v[i] < 0 else v


def _split_pca(points, component):
    center, basis, spectrum, total = leading_directions(points, component + 1)
    if total <= 0.0 or component >= basis.shape[1] or spectrum[component] <= 0.0:
        return None
    v = _canonical_sign(basis[:, component])
    return (points - center) @ v <= 0.0


def _split_kmeans(points, rng):
    n = points.shape[0]
    first = points[rng.integers(n)]
    d2 = ((points - first) ** 2).sum(axis=1)
    second = points[int(np.argmax(d2))]
    centers = np.stack([first, second])
    if np.array_equal(centers[0], centers[1]):
        return None
    labels = None
    for _ in range(KMEANS_MAX_ITER):
        dist = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = dist[:, 1] < dist[:, 0]
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        if labels.all() or not labels.any():
            return None
        centers = np.stack([points[~labels].mean(axis=0), points[labels].mean(axis=0)])
    return ~labels


def build_tree(cloud, method: str = IteratedPCA, stop: StoppingRule | None = None,
               seed: int = 0, *, levels_per_scale: int = 1,
               split_component: int = 0, radius_halving: bool = False) -> PartitionTree:
    """Recursively bisect a point cloud into a tree of cells.

    Parameters
    ----------
    cloud : PointCloud or array (n, D)
    method : ``"pca"`` splits by the sign of the centered coordinate along
        principal direction `split_component` (ties to the left child);
        ``"kmeans"`` runs seeded 2-means with farthest-point initialization.
    stop : StoppingRule
    seed : int
        Seeds the k-means initialization; the PCA split is deterministic.
    levels_per_scale : int
        Number of bisection rounds merged into one scale step. ``1`` yields a
        binary tree; ``d`` yields the ``2**d``-adic tree whose cell diameters
        halve per scale on a d-dimensional manifold.
    radius_halving : bool
        Instead of a fixed number of rounds, keep bisecting the pieces of a
        scale-j cell until every piece has radius (max distance to its mean)
        at most ``r0 * 2**-(j+1)``, with r0 the root radius. Pieces holding
        ``<= min_cell_size`` points are not bisected further. Overrides
        `levels_per_scale`.
    """
    X = np.asarray(getattr(cloud, "coords", cloud), dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyInput("cannot build a tree on an empty cloud")
    if method not in SPLIT_METHODS:
        raise ValueError(f"unknown split method {method!r}")
    stop = stop or StoppingRule()
    m0 = stop.resolved_min_size()
    rng = np.random.default_rng(seed)
    n, D = X.shape

    def splittable(idx):
        if idx.size <= m0 or idx.size < 2:
            return False
        _, _, top, total = leading_directions(X[idx], stop.dim)
        if total <= 0.0:
            return False
        if stop.homogeneity > 0.0 and total - top.sum() <= stop.homogeneity:
            return False
        return True

    def bisect(idx):
        pts = X[idx]
        if method == IteratedPCA:
            left = _split_pca(pts, split_component)
        else:
            left = _split_kmeans(pts, rng)
        if left is None or left.all() or not left.any():
            return None
        return [idx[left], idx[~left]]

    def radius(idx):
        pts = X[idx]
        return float(np.sqrt(((pts - pts.mean(axis=0)) ** 2).sum(axis=1).max()))

    root_radius = radius(np.arange(n))

    def split_radius(idx, scale):
        target = root_radius * 2.0 ** -(scale + 1)
        parts = bisect(idx)
        if not parts:
            return None
        done, todo = [], parts
        while todo:
            piece = todo.pop(0)
            if piece.size > m0 and radius(piece) > target:
                sub = bisect(piece)
                if sub:
                    todo.extend(sub)
                    continue
            done.append(piece)
        return sorted(done, key=lambda p: int(p[0]))

    def split(idx, scale):
        if radius_halving:
            return split_radius(idx, scale)
        pieces = [idx]
        for level in range(levels_per_scale):
            nxt = []
            for piece in pieces:
                parts = bisect(piece) if (level == 0 or splittable(piece)) else None
                nxt.extend(parts if parts else [piece])
            pieces = nxt
        return pieces if len(pieces) > 1 else None

    nodes = {}
    all_idx = np.arange(n, dtype=np.int64)
    nodes[(0, 0)] = CellNode(0, 0, all_idx, X.mean(axis=0))
    frontier = [(0, 0)]
    while frontier:
        next_frontier = []
        counter = 0
        for key in frontier:
            node = nodes[key]
            if node.scale >= stop.max_scale or not splittable(node.indices):
                continue
            pieces = split(node.indices, node.scale)
            if pieces is None:
                continue
            for piece in pieces:
                child = (node.scale + 1, counter)
                counter += 1
                nodes[child] = CellNode(child[0], child[1], piece, X[piece].mean(axis=0), [], key)
                node.children.append(child)
                next_frontier.append(child)
        frontier = next_frontier
    return PartitionTree(nodes, n, D, method, seed, stop, levels_per_scale, radius_halving)


def cell_diameter_stats(tree: PartitionTree, cloud) -> list[dict]:
    """Per-scale cell count and max/mean cell radius (max distance to center)."""
    X = np.asarray(getattr(cloud, "coords", cloud), dtype=float)
    rows = []
    for j in range(tree.max_scale + 1):
        radii = [
            float(np.sqrt(((X[node.indices] - node.center) ** 2).sum(axis=1).max()))
            for node in tree.nodes_at(j)
        ]
        rows.append({"scale": j, "count": len(radii),
                     "max_radius": max(radii), "mean_radius": float(np.mean(radii))})
    return rows
