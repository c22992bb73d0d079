"""Saliency-consistency scoring and re-ranking of bounding-box proposals."""

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np


class OutOfBounds(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    x: int
    y: int
    w: int
    h: int
    ext_score: float = 1.0
    sc_score: float = 0.0
    final_score: float = 0.0

    @property
    def area(self):
        return self.w * self.h


def _values(smap):
    return getattr(smap, "values", smap)


def sc_score(box: Box, smap) -> float:
    """Mean saliency inside the box."""
    s = _values(smap)
    h, w = s.shape
    if box.w < 1 or box.h < 1 or box.x < 0 or box.y < 0 or box.x + box.w > w or box.y + box.h > h:
        raise OutOfBounds(f"{box} outside {w}x{h} map")
    return float(s[box.y:box.y + box.h, box.x:box.x + box.w].sum() / (box.w * box.h))


def _sort_key(b: Box):
    return (-b.final_score, -b.ext_score, b.area)


def rank_external(boxes, smap, threshold: float = 0.01) -> list:
    """Score = SC score times the proposal's own score; drop below ``threshold``; best first."""
    scored = []
    for b in boxes:
        sc = sc_score(b, smap)
        scored.append(replace(b, sc_score=sc, final_score=sc * b.ext_score))
    kept = [b for b in scored if b.final_score >= threshold]
    return sorted(kept, key=_sort_key)


def seg_boxes(candidates, smap, threshold: float = 0.2) -> list:
    """One box per segmentation candidate (accepted or not), kept when its SC score >= threshold."""
    out = []
    for c in candidates:
        x, y, w, h = c.bbox
        b = Box(x, y, w, h, ext_score=1.0)
        sc = sc_score(b, smap)
        if sc >= threshold:
            out.append(replace(b, sc_score=sc, final_score=sc))
    return sorted(out, key=_sort_key)


def iou(a: Box, b: Box) -> float:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def detection_rate(proposals, gt, n: int, iou_threshold: float = 0.5) -> float:
    """Fraction of ground-truth boxes matched (IoU >= threshold) by one of the top-n proposals."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not gt:
        return 1.0
    top = list(proposals)[:n]
    hits = sum(any(iou(g, p) >= iou_threshold for p in top) for g in gt)
    return hits / len(gt)


def gt_boxes(frame, min_pixels: int = 20) -> list:
    """Tight boxes around each visible object in a rendered frame."""
    ids = frame.object_ids
    out = []
    for oid in np.unique(ids[ids >= 0]):
        ys, xs = np.nonzero(ids == oid)
        if len(ys) < min_pixels:
            continue
        out.append(Box(int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1)))
    return out


def synthetic_proposals(frame, rng, total: int = 100, per_object: int = 5, jitter: float = 0.25) -> list:
    """Jittered copies of the ground-truth boxes plus random distractors, all with random scores."""
    h, w = frame.depth.shape
    out = []

    def clip_box(x0, y0, x1, y1):
        x0, y0 = int(np.clip(round(x0), 0, w - 1)), int(np.clip(round(y0), 0, h - 1))
        x1, y1 = int(np.clip(round(x1), x0 + 1, w)), int(np.clip(round(y1), y0 + 1, h))
        return x0, y0, x1 - x0, y1 - y0

    for g in gt_boxes(frame):
        for _ in range(per_object):
            dx, dy, sx, sy = rng.uniform(-jitter, jitter, 4)
            cx, cy = g.x + g.w / 2 + dx * g.w, g.y + g.h / 2 + dy * g.h
            bw, bh = g.w * (1 + sx), g.h * (1 + sy)
            out.append(Box(*clip_box(cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2),
                           ext_score=float(rng.uniform(0.0, 1.0))))
    while len(out) < total:
        bw, bh = rng.uniform(0.05, 0.5) * w, rng.uniform(0.05, 0.5) * h
        x0, y0 = rng.uniform(0, w - bw), rng.uniform(0, h - bh)
        out.append(Box(*clip_box(x0, y0, x0 + bw, y0 + bh), ext_score=float(rng.uniform(0.0, 1.0))))
    out = out[:total]
    return sorted(out, key=lambda b: -b.ext_score)


def read_proposals(path) -> list:
    """Read ``x,y,w,h,ext_score`` lines; a non-numeric first line is taken as a header."""
    boxes = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                x, y, w, h = (int(round(float(v))) for v in row[:4])
                ext = float(row[4])
            except ValueError:
                if i == 0:
                    continue
                raise
            boxes.append(Box(x, y, w, h, ext_score=ext))
    return boxes


def write_proposals(path, boxes, scored: bool = True):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        head = ["x", "y", "w", "h", "ext_score"] + (["sc_score", "final_score"] if scored else [])
        wr.writerow(head)
        for b in boxes:
            row = [b.x, b.y, b.w, b.h, f"{b.ext_score:.6g}"]
            if scored:
                row += [f"{b.sc_score:.6g}", f"{b.final_score:.6g}"]
            wr.writerow(row)
    return Path(path)
