"""Low-resolution saliency maps and superpixel upsampling to full resolution."""

from dataclasses import dataclass
import math

import numpy as np
from numba import njit
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .pnm import write_pgm


class DimensionMismatch(ValueError):
    pass


@dataclass
class SaliencyMap:
    values: np.ndarray   # float64 in [0, 1]
    resolution: str      # "low" or "full"

    @property
    def shape(self):
        return self.values.shape


@dataclass
class SuperpixelLabels:
    labels: np.ndarray     # H x W int32, ids 0..n-1
    centroids: np.ndarray  # n x 2 (row, col)

    @property
    def count(self):
        return len(self.centroids)


def predict_map(forest, grid) -> SaliencyMap:
    gh, gw = grid.shape
    return SaliencyMap(forest.predict(grid.flat()).reshape(gh, gw), "low")


def default_superpixel_count(height, width):
    return max(1, int(round(350 * height * width / (640 * 480))))


def _seed_grid(h, w, k):
    """Rows x cols of seeds closest to k with roughly square spacing."""
    best = None
    for ny in range(1, k + 1):
        nx = max(1, int(round(k / ny)))
        if ny > h or nx > w:
            continue
        err = abs(ny * nx - k) / k + 0.25 * abs(math.log((w / nx) / (h / ny)))
        if best is None or err < best[0]:
            best = (err, ny, nx)
    return best[1], best[2]


@njit(cache=True)
def _local_kmeans(img, centers, radius, spatial_weight, n_iter):
    h, w, nc = img.shape
    k = centers.shape[0]
    labels = np.full((h, w), -1, np.int64)
    dist = np.empty((h, w))
    for _ in range(n_iter):
        dist[:, :] = np.inf
        for c in range(k):
            cy = centers[c, 0]
            cx = centers[c, 1]
            r0 = max(0, int(cy - radius))
            r1 = min(h, int(cy + radius) + 1)
            q0 = max(0, int(cx - radius))
            q1 = min(w, int(cx + radius) + 1)
            for r in range(r0, r1):
                for q in range(q0, q1):
                    d = ((r - cy) ** 2 + (q - cx) ** 2) * spatial_weight
                    for ch in range(nc):
                        d += (img[r, q, ch] - centers[c, 2 + ch]) ** 2
                    if d < dist[r, q]:
                        dist[r, q] = d
                        labels[r, q] = c
        sums = np.zeros((k, 2 + nc))
        counts = np.zeros(k)
        for r in range(h):
            for q in range(w):
                c = labels[r, q]
                counts[c] += 1
                sums[c, 0] += r
                sums[c, 1] += q
                for ch in range(nc):
                    sums[c, 2 + ch] += img[r, q, ch]
        for c in range(k):
            if counts[c] > 0:
                for j in range(2 + nc):
                    centers[c, j] = sums[c, j] / counts[c]
    return labels


def _components(labels):
    """4-connected components of equal-label pixels: (component id per pixel, count)."""
    h, w = labels.shape
    ids = np.arange(h * w).reshape(h, w)
    same_h = labels[:, :-1] == labels[:, 1:]
    same_v = labels[:-1, :] == labels[1:, :]
    r = np.concatenate([ids[:, :-1][same_h], ids[:-1, :][same_v]])
    c = np.concatenate([ids[:, 1:][same_h], ids[1:, :][same_v]])
    g = coo_matrix((np.ones(len(r), np.int8), (r, c)), shape=(h * w, h * w))
    n, comp = connected_components(g, directed=False)
    return comp.reshape(h, w), n


def _enforce_connectivity(labels):
    """Reassign every non-largest fragment of a label to its best-touching neighbour."""
    for _ in range(100):
        comp, n = _components(labels)
        sizes = np.bincount(comp.ravel(), minlength=n)
        comp_label = np.zeros(n, dtype=labels.dtype)
        comp_label[comp.ravel()] = labels.ravel()
        # keep the largest component of each label
        order = np.lexsort((-sizes, comp_label))
        kept = np.zeros(n, dtype=bool)
        first = np.ones(n, dtype=bool)
        first[1:] = comp_label[order][1:] != comp_label[order][:-1]
        kept[order[first]] = True
        if kept.all():
            return labels
        a = np.concatenate([comp[:, :-1].ravel(), comp[:-1, :].ravel()])
        b = np.concatenate([comp[:, 1:].ravel(), comp[1:, :].ravel()])
        diff = a != b
        a, b = a[diff], b[diff]
        pairs = np.concatenate([np.stack([a, b], 1), np.stack([b, a], 1)])
        pairs = pairs[~kept[pairs[:, 0]]]
        if not len(pairs):
            return labels
        uniq, border = np.unique(pairs, axis=0, return_counts=True)
        # prefer kept neighbours, then the longest shared border
        score = kept[uniq[:, 1]].astype(np.int64) * labels.size + border
        order = np.lexsort((-score, uniq[:, 0]))
        uniq = uniq[order]
        firsts = np.ones(len(uniq), dtype=bool)
        firsts[1:] = uniq[1:, 0] != uniq[:-1, 0]
        target = np.arange(n)
        target[uniq[firsts, 0]] = uniq[firsts, 1]
        labels = comp_label[target[comp]]
    return labels


def compute_superpixels(image, k: int, compactness: float = 0.1, n_iter: int = 10) -> SuperpixelLabels:
    """Grid-seeded local k-means over (row, col, colour) with connectivity enforcement.

    ``image`` is an H x W x C float array or a Frame. ``compactness`` weighs one
    seed spacing of spatial distance against colour distance.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    img = getattr(image, "appearance", image)
    img = np.ascontiguousarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if k == 1:
        labels = np.zeros((h, w), dtype=np.int32)
    else:
        ny, nx = _seed_grid(h, w, k)
        sy, sx = h / ny, w / nx
        gy, gx = np.meshgrid((np.arange(ny) + 0.5) * sy, (np.arange(nx) + 0.5) * sx, indexing="ij")
        gy, gx = gy.ravel(), gx.ravel()
        iy = np.clip(gy.astype(int), 0, h - 1)
        ix = np.clip(gx.astype(int), 0, w - 1)
        centers = np.concatenate([np.stack([gy, gx], 1), img[iy, ix]], axis=1)
        step = max(sy, sx)
        labels = _local_kmeans(img, centers, step, (compactness / step) ** 2, n_iter)
        labels = _enforce_connectivity(labels)
    _, labels = np.unique(labels, return_inverse=True)
    labels = labels.reshape(h, w).astype(np.int32)
    n = labels.max() + 1
    rows, cols = np.indices((h, w))
    counts = np.bincount(labels.ravel(), minlength=n)
    centroids = np.stack([np.bincount(labels.ravel(), rows.ravel(), n) / counts,
                          np.bincount(labels.ravel(), cols.ravel(), n) / counts], axis=1)
    return SuperpixelLabels(labels, centroids)


def centroid_cells(centroids, factor, low_shape):
    """Low-resolution cell containing each superpixel centroid once scaled down by ``factor``."""
    gh, gw = low_shape
    r = np.clip(np.floor((centroids[:, 0] + 0.5) / factor).astype(int), 0, gh - 1)
    c = np.clip(np.floor((centroids[:, 1] + 0.5) / factor).astype(int), 0, gw - 1)
    return r, c


def upsample(lowres: SaliencyMap, sp: SuperpixelLabels, factor: int) -> SaliencyMap:
    gh, gw = lowres.shape
    h, w = sp.labels.shape
    if gh * factor != h or gw * factor != w:
        raise DimensionMismatch(f"{gh}x{gw} * {factor} does not match {h}x{w}")
    r, c = centroid_cells(sp.centroids, factor, (gh, gw))
    per_sp = lowres.values[r, c]
    return SaliencyMap(per_sp[sp.labels], "full")


def export_saliency(path, smap: SaliencyMap):
    write_pgm(path, np.round(np.clip(smap.values, 0.0, 1.0) * 255.0).astype(np.uint8))
