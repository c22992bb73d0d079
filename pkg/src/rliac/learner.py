"""Incrementally re-trained random forest and its capped sample reservoir.

Each frame contributes at most ``per_frame`` labelled cells to the store;
each update rebuilds a few randomly chosen trees from scratch on a random
fraction of the store. Trees are Gini CARTs over quantile-binned features,
stored as flat node arrays.
"""

from dataclasses import dataclass, field
from pathlib import Path
import struct

import numpy as np

from . import _cart
from .segmentation import Label, resize_nearest

FOREST_MAGIC = b"RLFR"
FOREST_VERSION = 1


class SampleStore:
    """Reservoir of (feature vector, binary label) pairs, never larger than ``cap``."""

    def __init__(self, dim: int, cap: int = 100_000):
        if cap < 1:
            raise ValueError("cap must be positive")
        self.dim = dim
        self.cap = cap
        self._X = np.empty((0, dim), dtype=np.float32)
        self._y = np.empty(0, dtype=np.uint8)

    def __len__(self):
        return len(self._y)

    @property
    def X(self):
        return self._X

    @property
    def y(self):
        return self._y

    def add(self, X, y, rng):
        X = np.asarray(X, dtype=np.float32).reshape(-1, self.dim)
        y = np.asarray(y, dtype=np.uint8)
        if len(X) != len(y):
            raise ValueError("X and y lengths differ")
        if np.any(y > 1):
            raise ValueError("labels must be 0 or 1")
        self._X = np.concatenate([self._X, X])
        self._y = np.concatenate([self._y, y])
        excess = len(self._y) - self.cap
        if excess > 0:
            drop = np.zeros(len(self._y), dtype=bool)
            drop[rng.choice(len(self._y), excess, replace=False)] = True
            self._X = self._X[~drop]
            self._y = self._y[~drop]


def ingest_frame(store: SampleStore, grid, mask, rng, per_frame: int = 500) -> int:
    """Add up to ``per_frame`` randomly chosen Salient/NotSalient cells of a frame to the store."""
    if mask.shape != grid.shape:
        mask = resize_nearest(mask, grid.factor)
    flat = mask.ravel()
    eligible = np.flatnonzero((flat == Label.SALIENT) | (flat == Label.NOT_SALIENT))
    if not len(eligible):
        return 0
    if len(eligible) > per_frame:
        eligible = np.sort(rng.choice(eligible, per_frame, replace=False))
    store.add(grid.flat()[eligible], (flat[eligible] == Label.SALIENT).astype(np.uint8), rng)
    return len(eligible)


@dataclass
class Tree:
    feature: np.ndarray    # int32, -1 at leaves
    threshold: np.ndarray  # float64, go left when x <= threshold
    left: np.ndarray       # int32, -1 at leaves
    right: np.ndarray
    value: np.ndarray      # float64, fraction of salient samples at each node

    @property
    def n_nodes(self):
        return len(self.feature)

    def same_as(self, other) -> bool:
        if other is None or self.n_nodes != other.n_nodes:
            return False
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ("feature", "threshold", "left", "right", "value"))


def grow_tree(X, y, max_depth=12, min_leaf=5) -> Tree:
    return Tree(*_cart.grow(np.asarray(X, dtype=np.float32), y, max_depth, min_leaf))


@dataclass
class Forest:
    n_trees: int = 50
    trees_per_update: int = 4
    subsample: float = 0.7
    with_replacement: bool = False
    max_depth: int = 12
    min_leaf: int = 5
    trees: list = field(default=None)

    def __post_init__(self):
        if self.trees is None:
            self.trees = [None] * self.n_trees
        if len(self.trees) != self.n_trees:
            raise ValueError("tree list length must equal n_trees")
        self._packed = None

    @property
    def n_trained(self):
        return sum(t is not None for t in self.trees)

    def update(self, store: SampleStore, rng) -> list:
        """Rebuild ``trees_per_update`` random trees; returns their indices (empty on no-op)."""
        y = store.y
        if len(y) == 0 or y.min() == y.max():
            return []
        chosen = sorted(rng.choice(self.n_trees, min(self.trees_per_update, self.n_trees), replace=False).tolist())
        n = len(y)
        k = max(1, int(round(self.subsample * n)))
        # split candidates come from the whole store, shared by this update's trees
        edges = _cart.bin_edges(store.X)
        xb = _cart.binarize(store.X, edges)
        for i in chosen:
            if self.with_replacement:
                idx = rng.integers(0, n, k)
            else:
                idx = np.sort(rng.choice(n, k, replace=False))
            self.trees[i] = Tree(*_cart.grow_binned(xb[idx], y[idx], edges, self.max_depth, self.min_leaf))
        self._packed = None
        return chosen

    def _pack(self):
        trained = [t for t in self.trees if t is not None]
        offsets = np.cumsum([0] + [t.n_nodes for t in trained])
        cat = lambda k: np.concatenate([getattr(t, k) for t in trained])
        left, right = cat("left"), cat("right")
        shift = np.repeat(offsets[:-1], [t.n_nodes for t in trained])
        left = np.where(left >= 0, left + shift, -1)
        right = np.where(right >= 0, right + shift, -1)
        feature = np.maximum(cat("feature"), 0)
        self._packed = (offsets[:-1].astype(np.int64), feature.astype(np.int64), cat("threshold"),
                        left.astype(np.int64), right.astype(np.int64), cat("value"))

    def predict(self, X) -> np.ndarray:
        """Probability of being salient for each row of X (mean leaf fraction over trained trees)."""
        X = np.asarray(X, dtype=np.float32)
        single = X.ndim == 1
        X = X.reshape(-1, X.shape[-1]) if X.size else X.reshape(0, 1)
        if self.n_trained == 0:
            out = np.full(len(X), 0.5)
            return out[0] if single else out
        if self._packed is None:
            self._pack()
        out = np.clip(_cart.predict_packed(np.ascontiguousarray(X), *self._packed), 0.0, 1.0)
        return out[0] if single else out

    def save(self, path):
        Path(path).write_bytes(dump_forest(self))

    @classmethod
    def load(cls, path):
        return load_forest(Path(path).read_bytes())


def update(forest: Forest, store: SampleStore, rng) -> list:
    return forest.update(store, rng)


def predict(forest: Forest, x) -> np.ndarray:
    return forest.predict(x)


def dump_forest(forest: Forest) -> bytes:
    parts = [FOREST_MAGIC, struct.pack("<IIIIId?", FOREST_VERSION, forest.n_trees, forest.trees_per_update,
                                       forest.max_depth, forest.min_leaf, forest.subsample,
                                       forest.with_replacement)]
    for t in forest.trees:
        if t is None:
            parts.append(struct.pack("<I", 0))
            continue
        parts.append(struct.pack("<I", t.n_nodes))
        parts += [t.feature.astype("<i4").tobytes(), t.threshold.astype("<f8").tobytes(),
                  t.left.astype("<i4").tobytes(), t.right.astype("<i4").tobytes(),
                  t.value.astype("<f8").tobytes()]
    return b"".join(parts)


def load_forest(raw: bytes) -> Forest:
    if raw[:4] != FOREST_MAGIC:
        raise ValueError("not a forest checkpoint")
    head = struct.Struct("<IIIIId?")
    version, n_trees, per_update, depth, min_leaf, subsample, repl = head.unpack_from(raw, 4)
    if version != FOREST_VERSION:
        raise ValueError(f"unsupported forest version {version}")
    pos = 4 + head.size
    trees = []
    for _ in range(n_trees):
        (n,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        if n == 0:
            trees.append(None)
            continue
        arrays = []
        for dtype in ("<i4", "<f8", "<i4", "<i4", "<f8"):
            a = np.frombuffer(raw, dtype=dtype, count=n, offset=pos)
            pos += a.nbytes
            arrays.append(a.astype(np.int32 if dtype == "<i4" else np.float64))
        trees.append(Tree(*arrays))
    return Forest(n_trees=n_trees, trees_per_update=per_update, subsample=subsample, with_replacement=repl,
                  max_depth=depth, min_leaf=min_leaf, trees=trees)
