"""Depth-only object segmentation producing the 4-state learning signal.

Pipeline: major plane (RANSAC + least squares, tracked over the run), wall
removal, blob extraction with depth breaks, geometric filtering of blobs.
"""

from dataclasses import dataclass, field
from enum import IntEnum
import math

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .pnm import write_pgm


class Label(IntEnum):
    NOT_SALIENT = 0
    SALIENT = 1
    UNDETERMINED = 2
    UNAVAILABLE = 3


# PGM gray levels for each label, indexed by Label value
LABEL_GRAY = np.array([0, 255, 128, 64], dtype=np.uint8)


class NoPlane(RuntimeError):
    """RANSAC found no plane supported by enough points."""


@dataclass(frozen=True)
class Plane:
    normal: np.ndarray
    d: float
    inliers: int = 0

    def distance(self, pts):
        """Signed distance of points (..., 3) to the plane."""
        return pts @ self.normal + self.d


@dataclass
class SegmentationConfig:
    ransac_iterations: int = 200
    inlier_threshold: float = 0.02
    min_inlier_ratio: float = 0.20
    ransac_sample: int = 3000
    track_angle_deg: float = 15.0
    track_offset: float = 0.10
    wall_angle_deg: float = 10.0
    wall_min_fraction: float = 0.05
    wall_min_height: float = 1.0
    depth_break: float = 0.05
    min_diag: float = 0.10
    max_diag: float = 1.80
    max_height: float = 2.0
    max_range: float = 4.0
    min_blob_fraction: float = 0.001


@dataclass
class PlaneTracker:
    reference: Plane | None = None
    status: list = field(default_factory=list)

    def check(self, plane: Plane, cfg: SegmentationConfig) -> bool:
        if self.reference is None:
            self.reference = plane
            self.status.append("init")
            return True
        cos = float(np.clip(plane.normal @ self.reference.normal, -1.0, 1.0))
        ok = (math.degrees(math.acos(cos)) <= cfg.track_angle_deg
              and abs(plane.d - self.reference.d) <= cfg.track_offset)
        self.status.append("ok" if ok else "lost")
        return ok


@dataclass
class Candidate:
    pixels: np.ndarray          # flat pixel indices
    bbox: tuple                 # x, y, w, h in pixels
    diagonal: float
    height: float               # centroid height above the major plane
    touches_border: bool
    accepted: bool


def _lstsq_plane(pts):
    c = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - c, full_matrices=False)
    n = vt[-1]
    return n, -float(n @ c)


def fit_major_plane(cloud, rng, up=(0.0, 0.0, 1.0), iterations=200, threshold=0.02,
                    min_inlier_ratio=0.20, sample=3000) -> Plane:
    """RANSAC plane with a least-squares refit on the inliers; normal oriented along ``up``."""
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    pts = pts[np.isfinite(pts).all(axis=1)]
    n_pts = len(pts)
    if n_pts < 3:
        raise NoPlane("fewer than 3 points")
    score_pts = pts if n_pts <= sample else pts[rng.choice(n_pts, sample, replace=False)]

    idx = rng.integers(0, n_pts, size=(iterations, 3))
    a, b, c = pts[idx[:, 0]], pts[idx[:, 1]], pts[idx[:, 2]]
    normals = np.cross(b - a, c - a)
    norm = np.linalg.norm(normals, axis=1)
    ok = norm > 1e-12
    if not ok.any():
        raise NoPlane("degenerate samples")
    normals = normals[ok] / norm[ok, None]
    ds = -(normals * a[ok]).sum(axis=1)
    counts = (np.abs(score_pts @ normals.T + ds) <= threshold).sum(axis=0)
    best = int(np.argmax(counts))
    n, d = normals[best], ds[best]

    inl = np.abs(pts @ n + d) <= threshold
    if inl.sum() >= 3:
        n, d = _lstsq_plane(pts[inl])
        inl = np.abs(pts @ n + d) <= threshold
    if n @ np.asarray(up) < 0:
        n, d = -n, -d
    count = int(inl.sum())
    if count < min_inlier_ratio * n_pts:
        raise NoPlane(f"best plane has {count}/{n_pts} inliers")
    return Plane(normal=n, d=float(d), inliers=count)


_NEIGHBOURS = (
    ((slice(None), slice(None, -1)), (slice(None), slice(1, None))),
    ((slice(None, -1), slice(None)), (slice(1, None), slice(None))),
    ((slice(None, -1), slice(None, -1)), (slice(1, None), slice(1, None))),
    ((slice(None, -1), slice(1, None)), (slice(1, None), slice(None, -1))),
)


def break_threshold(rng_m, depth_break):
    """Largest 3-D gap joining neighbouring pixels; grows with range since pixel footprints do."""
    return depth_break * np.maximum(1.0, rng_m) ** 1.5


def _pixel_graph_components(mask, pts, gap_limit, extra=None):
    """Connected components of ``mask`` pixels (8-neighbours) joined when their 3-D gap is small.

    ``gap_limit`` is an H x W array of per-pixel gap thresholds.
    """
    h, w = mask.shape
    ids = np.arange(h * w).reshape(h, w)
    rows, cols = [], []
    for sl_a, sl_b in _NEIGHBOURS:
        both = mask[sl_a] & mask[sl_b]
        with np.errstate(invalid="ignore"):
            gap = np.linalg.norm(pts[sl_a] - pts[sl_b], axis=-1)
            keep = both & (gap <= np.minimum(gap_limit[sl_a], gap_limit[sl_b]))
        if extra is not None:
            keep &= extra(sl_a, sl_b)
        rows.append(ids[sl_a][keep])
        cols.append(ids[sl_b][keep])
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    g = coo_matrix((np.ones(len(r), dtype=np.int8), (r, c)), shape=(h * w, h * w))
    _, labels = connected_components(g, directed=False)
    flat = np.flatnonzero(mask.ravel())
    # relabel to 0..k-1 over masked pixels only
    uniq, comp = np.unique(labels[flat], return_inverse=True)
    return flat, comp, len(uniq)


def pixel_normals(pts, max_gap):
    """Per-pixel surface normals from central differences; NaN across depth breaks and borders.

    ``max_gap`` is a scalar or an H x W array of neighbour gap limits.
    """
    h, w, _ = pts.shape
    n = np.full_like(pts, np.nan)
    lim = 2 * np.broadcast_to(np.asarray(max_gap, dtype=float), (h, w))[1:-1, 1:-1]
    dx = pts[1:-1, 2:] - pts[1:-1, :-2]
    dy = pts[2:, 1:-1] - pts[:-2, 1:-1]
    cr = np.cross(dx, dy)
    norm = np.linalg.norm(cr, axis=-1)
    with np.errstate(invalid="ignore"):
        bad = ~(norm > 1e-12) | ~(np.linalg.norm(dx, axis=-1) <= lim) | ~(np.linalg.norm(dy, axis=-1) <= lim)
    with np.errstate(invalid="ignore", divide="ignore"):
        inner = cr / norm[..., None]
    inner[bad] = np.nan
    n[1:-1, 1:-1] = inner
    return n


def _extent(pts, plane):
    """Diagonal of the floor-aligned bounding box (horizontal axes from PCA) and centroid height."""
    heights = plane.distance(pts)
    horiz = pts - heights[:, None] * plane.normal
    horiz = horiz - horiz.mean(axis=0)
    if len(pts) >= 2:
        _, _, vt = np.linalg.svd(horiz, full_matrices=False)
        proj = horiz @ vt[:2].T
    else:
        proj = np.zeros((len(pts), 2))
    span = np.ptp(proj, axis=0) if len(pts) else np.zeros(2)
    dh = np.ptp(heights) if len(pts) else 0.0
    # objects rest on the plane: measured height runs from the plane to the top
    top = heights.max() if len(pts) else 0.0
    vertical = max(dh, top)
    return float(math.sqrt(span[0] ** 2 + span[1] ** 2 + vertical ** 2)), float(heights.mean()) if len(pts) else 0.0


def segment(frame, tracker: PlaneTracker, rng, cfg: SegmentationConfig | None = None):
    """Label every pixel and list object candidates.

    Returns ``(labels, candidates)`` where labels is an H x W uint8 array of
    :class:`Label` values.
    """
    cfg = cfg or SegmentationConfig()
    h, w = frame.depth.shape
    valid = frame.valid
    labels = np.full((h, w), Label.UNDETERMINED, dtype=np.uint8)
    labels[~valid] = Label.UNAVAILABLE
    pts = frame.points()

    try:
        plane = fit_major_plane(pts[valid], rng, up=frame.camera.up, iterations=cfg.ransac_iterations,
                                threshold=cfg.inlier_threshold, min_inlier_ratio=cfg.min_inlier_ratio,
                                sample=cfg.ransac_sample)
    except NoPlane:
        tracker.status.append("no-plane")
        return labels, []
    if not tracker.check(plane, cfg):
        return labels, []

    with np.errstate(invalid="ignore"):
        dist = plane.distance(pts)
        floor = valid & (np.abs(dist) <= cfg.inlier_threshold)
    labels[floor] = Label.NOT_SALIENT
    rest = valid & ~floor

    gap_limit = break_threshold(frame.depth, cfg.depth_break)

    # walls: large planar clusters perpendicular to the major plane
    normals = pixel_normals(pts, gap_limit)
    sin_tol = math.sin(math.radians(cfg.wall_angle_deg))
    with np.errstate(invalid="ignore"):
        vertical = rest & (np.abs(normals @ plane.normal) <= sin_tol)
    cos_tol = math.cos(math.radians(cfg.wall_angle_deg))

    def same_normal(sa, sb):
        with np.errstate(invalid="ignore"):
            return np.abs((normals[sa] * normals[sb]).sum(axis=-1)) >= cos_tol

    wall = np.zeros((h, w), dtype=bool)
    if vertical.any():
        flat, comp, k = _pixel_graph_components(vertical, pts, gap_limit, same_normal)
        sizes = np.bincount(comp, minlength=k)
        flat_pts = pts.reshape(-1, 3)
        rest_flat = np.flatnonzero(rest.ravel())
        for c in np.flatnonzero(sizes >= cfg.wall_min_fraction * h * w):
            cp = flat_pts[flat[comp == c]]
            n, d = _lstsq_plane(cp)
            if abs(n @ plane.normal) > sin_tol:
                continue
            if np.sqrt(np.mean((cp @ n + d) ** 2)) > cfg.inlier_threshold:
                continue
            # object-sized, object-high clusters are left to the blob stage
            if _extent(cp, plane)[0] <= cfg.max_diag and plane.distance(cp).max() < cfg.wall_min_height:
                continue
            on_plane = np.abs(flat_pts[rest_flat] @ n + d) <= cfg.inlier_threshold
            wall.ravel()[rest_flat[on_plane]] = True
    labels[wall] = Label.NOT_SALIENT
    rest &= ~wall

    # blobs
    in_range = rest & (frame.depth <= cfg.max_range)
    candidates = []
    if in_range.any():
        flat, comp, k = _pixel_graph_components(in_range, pts, gap_limit)
        order = np.argsort(comp, kind="stable")
        bounds = np.searchsorted(comp[order], np.arange(k + 1))
        flat_pts = pts.reshape(-1, 3)
        lab_flat = labels.ravel()
        for c in range(k):
            pix = flat[order[bounds[c]:bounds[c + 1]]]
            if len(pix) < cfg.min_blob_fraction * h * w:
                continue
            ys, xs = np.divmod(pix, w)
            diag, height = _extent(flat_pts[pix], plane)
            border = bool((ys.min() == 0) | (xs.min() == 0) | (ys.max() == h - 1) | (xs.max() == w - 1))
            accepted = (not border and cfg.min_diag <= diag <= cfg.max_diag and height <= cfg.max_height)
            x0, y0 = int(xs.min()), int(ys.min())
            bbox = (x0, y0, int(xs.max()) - x0 + 1, int(ys.max()) - y0 + 1)
            candidates.append(Candidate(pix, bbox, diag, height, border, accepted))
            if accepted:
                lab_flat[pix] = Label.SALIENT
    return labels, candidates


def export_labels(path, labels):
    write_pgm(path, LABEL_GRAY[labels])


def resize_nearest(labels, factor):
    """Nearest-neighbour downsampling to the feature grid: the pixel at each cell centre."""
    off = factor // 2
    return labels[off::factor, off::factor]
