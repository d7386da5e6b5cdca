"""Random-projection forest for approximate nearest neighbours, plus exact KNN.

Each tree splits a node by the perpendicular bisector of two randomly chosen
member points: ``x`` goes left iff ``<x - midpoint, normal> <= 0``. Nodes with
at most ``leaf_capacity`` points are leaves. A query's candidate set is the
union of the leaves it lands in across all trees.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import RecordingIOError, ValidationError

MAGIC = b"SCPF"
VERSION = 1
MAX_SPLIT_TRIES = 8


@dataclass
class Tree:
    mid: np.ndarray        # (n_internal, dim)
    normal: np.ndarray     # (n_internal, dim)
    children: np.ndarray   # (n_internal, 2); child >= 0 internal, < 0 leaf ~child
    leaves: list           # list of uint32 index arrays

    @property
    def n_internal(self) -> int:
        return self.mid.shape[0]


@dataclass
class ProjectionForest:
    trees: list
    leaf_capacity: int
    dim: int
    n_points: int
    seed: int

    @property
    def T(self) -> int:
        return len(self.trees)

    # -- queries --------------------------------------------------------
    def route(self, W: np.ndarray) -> np.ndarray:
        """Leaf id per tree for every query row; shape ``(T, n_queries)``."""
        W = np.atleast_2d(np.asarray(W, dtype=float))
        if W.shape[1] != self.dim:
            raise ValidationError(f"query dimension {W.shape[1]} != forest dimension {self.dim}")
        out = np.empty((self.T, W.shape[0]), dtype=np.int64)
        for t, tree in enumerate(self.trees):
            out[t] = _route_tree(tree, W)
        return out

    def candidates_from_leaves(self, leaf_ids) -> np.ndarray:
        parts = [tree.leaves[l] for tree, l in zip(self.trees, leaf_ids)]
        return np.unique(np.concatenate(parts)).astype(np.int64)

    def query(self, w) -> np.ndarray:
        return self.candidates_from_leaves(self.route(np.asarray(w)[None, :])[:, 0])

    # -- persistence ----------------------------------------------------
    def save(self, path) -> None:
        chunks = [MAGIC, struct.pack("<5I", VERSION, self.T, self.leaf_capacity,
                                     self.dim, self.n_points),
                  struct.pack("<q", self.seed)]
        for tree in self.trees:
            chunks.append(struct.pack("<2I", tree.n_internal, len(tree.leaves)))
            chunks.append(tree.mid.astype("<f4").tobytes())
            chunks.append(tree.normal.astype("<f4").tobytes())
            chunks.append(tree.children.astype("<i4").tobytes())
            for leaf in tree.leaves:
                chunks.append(struct.pack("<I", leaf.size))
                chunks.append(leaf.astype("<u4").tobytes())
        try:
            Path(path).write_bytes(b"".join(chunks))
        except OSError as exc:
            raise RecordingIOError(f"cannot write forest {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ProjectionForest":
        buf = Path(path).read_bytes()
        if buf[:4] != MAGIC:
            raise ValidationError(f"{path}: not a projection-forest file")
        version, T, cap, dim, npts = struct.unpack_from("<5I", buf, 4)
        if version != VERSION:
            raise ValidationError(f"{path}: unsupported forest version {version}")
        (seed,) = struct.unpack_from("<q", buf, 24)
        off = 32
        trees = []
        for _ in range(T):
            n_int, n_leaf = struct.unpack_from("<2I", buf, off)
            off += 8
            mid = np.frombuffer(buf, "<f4", n_int * dim, off).reshape(n_int, dim)
            off += 4 * n_int * dim
            normal = np.frombuffer(buf, "<f4", n_int * dim, off).reshape(n_int, dim)
            off += 4 * n_int * dim
            children = np.frombuffer(buf, "<i4", n_int * 2, off).reshape(n_int, 2)
            off += 8 * n_int
            leaves = []
            for _ in range(n_leaf):
                (size,) = struct.unpack_from("<I", buf, off)
                off += 4
                leaves.append(np.frombuffer(buf, "<u4", size, off).copy())
                off += 4 * size
            trees.append(Tree(mid.astype(float), normal.astype(float),
                              children.astype(np.int64), leaves))
        return cls(trees, cap, dim, npts, seed)


def _route_tree(tree: Tree, W: np.ndarray) -> np.ndarray:
    leaf_of = np.empty(W.shape[0], dtype=np.int64)
    if tree.n_internal == 0:
        leaf_of[:] = 0
        return leaf_of
    stack = [(0, np.arange(W.shape[0]))]
    while stack:
        node, idx = stack.pop()
        go_left = (W[idx] - tree.mid[node]) @ tree.normal[node] <= 0
        for child, sub in zip(tree.children[node], (idx[go_left], idx[~go_left])):
            if sub.size == 0:
                continue
            if child < 0:
                leaf_of[sub] = ~child
            else:
                stack.append((child, sub))
    return leaf_of


def _grow_tree(X: np.ndarray, capacity: int, rng: np.random.Generator) -> Tree:
    mids, normals, children, leaves = [], [], [], []

    def new_leaf(idx):
        leaves.append(idx.astype(np.uint32))
        return ~(len(leaves) - 1)

    def try_split(idx):
        for _ in range(MAX_SPLIT_TRIES):
            i, j = rng.choice(idx.size, size=2, replace=False)
            a, b = X[idx[i]], X[idx[j]]
            diff = a - b
            norm = np.linalg.norm(diff)
            if norm == 0:
                continue
            # float32-rounded so a reloaded forest routes identically
            mid = ((a + b) / 2).astype(np.float32).astype(float)
            normal = (diff / norm).astype(np.float32).astype(float)
            left = (X[idx] - mid) @ normal <= 0
            if left.all() or not left.any():
                continue
            return mid, normal, left
        return None

    if X.shape[0] <= capacity:
        new_leaf(np.arange(X.shape[0]))
        return Tree(np.zeros((0, X.shape[1])), np.zeros((0, X.shape[1])),
                    np.zeros((0, 2), np.int64), leaves)

    # (node slot, side, indices) work list; root handled as a pseudo-parent
    root = np.arange(X.shape[0])
    split = try_split(root)
    if split is None:
        new_leaf(root)
        return Tree(np.zeros((0, X.shape[1])), np.zeros((0, X.shape[1])),
                    np.zeros((0, 2), np.int64), leaves)
    mids.append(split[0]); normals.append(split[1]); children.append([0, 0])
    work = [(0, 0, root[split[2]]), (0, 1, root[~split[2]])]
    while work:
        parent, side, idx = work.pop()
        if idx.size <= capacity:
            children[parent][side] = new_leaf(idx)
            continue
        split = try_split(idx)
        if split is None:
            children[parent][side] = new_leaf(idx)
            continue
        node = len(mids)
        mids.append(split[0]); normals.append(split[1]); children.append([0, 0])
        children[parent][side] = node
        work.append((node, 0, idx[split[2]]))
        work.append((node, 1, idx[~split[2]]))
    return Tree(np.array(mids), np.array(normals), np.array(children, np.int64), leaves)


def build_forest(pool, T: int = 50, leaf_capacity: int = 500, seed: int = 0) -> ProjectionForest:
    """Grow ``T`` trees over the rows of ``pool`` (``n_points x dim``)."""
    X = np.asarray(pool, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValidationError("need at least two pooled points")
    if T < 1 or leaf_capacity < 1:
        raise ValidationError("T and leaf_capacity must be positive")
    streams = np.random.SeedSequence(seed).spawn(T)
    trees = [_grow_tree(X, leaf_capacity, np.random.Generator(np.random.Philox(s)))
             for s in streams]
    return ProjectionForest(trees, leaf_capacity, X.shape[1], X.shape[0], seed)


def query_candidates(forest: ProjectionForest, w) -> np.ndarray:
    return forest.query(w)


def knn(pool, candidates, w, K: int) -> np.ndarray:
    """The ``K`` candidates nearest to ``w`` (Euclidean), ties to lower index."""
    cand = np.asarray(candidates, dtype=np.int64)
    if cand.size == 0:
        raise ValidationError("empty candidate set")
    diff = np.asarray(pool)[cand] - np.asarray(w, dtype=float)
    d2 = np.einsum("ij,ij->i", diff, diff)
    return cand[nearest_order(d2, cand, K)]


def nearest_order(d2: np.ndarray, labels: np.ndarray, K: int) -> np.ndarray:
    """Positions of the ``K`` smallest ``d2`` ordered by (distance, label)."""
    K = min(K, d2.size)
    if K < d2.size:
        kth = np.partition(d2, K - 1)[K - 1]
        sel = np.flatnonzero(d2 <= kth)
    else:
        sel = np.arange(d2.size)
    order = np.lexsort((labels[sel], d2[sel]))
    return sel[order[:K]]
