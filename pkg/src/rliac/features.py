"""Per-cell appearance features at a fixed downsample factor.

Stands in for the deep feature maps: each F x F cell gets channel means and
standard deviations, the mean gradient magnitude and a 4-bin
orientation histogram (D = 11).
"""

from dataclasses import dataclass
from pathlib import Path
import struct

import numpy as np

N_FEATURES = 11
FEATURE_MAGIC = b"RLFT"


@dataclass
class FeatureGrid:
    values: np.ndarray  # (H/F, W/F, D) float32
    factor: int

    @property
    def shape(self):
        return self.values.shape[:2]

    @property
    def dim(self):
        return self.values.shape[2]

    def flat(self):
        return self.values.reshape(-1, self.dim)


def _cells(a, f):
    """Reshape (H, W, ...) into (H/F, W/F, F*F, ...)."""
    h, w = a.shape[:2]
    rest = a.shape[2:]
    a = a.reshape(h // f, f, w // f, f, *rest).swapaxes(1, 2)
    return a.reshape(h // f, w // f, f * f, *rest)


def extract_array(rgb: np.ndarray, factor: int = 8) -> FeatureGrid:
    h, w, _ = rgb.shape
    if h % factor or w % factor:
        raise ValueError(f"image {w}x{h} not divisible by {factor}")
    rgb = rgb.astype(np.float64)
    cells = _cells(rgb, factor)
    mean = cells.mean(axis=2)
    std = cells.std(axis=2)

    gray = rgb.mean(axis=2)
    gy, gx = np.gradient(gray)
    mag = np.hypot(gx, gy)
    # orientation modulo pi, 4 bins of 45 degrees weighted by magnitude
    theta = np.mod(np.arctan2(gy, gx), np.pi)
    bins = np.minimum((theta / (np.pi / 4)).astype(int), 3)
    hist = np.zeros((h, w, 4))
    np.put_along_axis(hist, bins[..., None], mag[..., None], axis=2)

    mag_c = _cells(mag, factor).mean(axis=2)
    hist_c = _cells(hist, factor).mean(axis=2)
    values = np.concatenate([mean, std, mag_c[..., None], hist_c], axis=2).astype(np.float32)
    return FeatureGrid(values, factor)


def extract(frame, factor: int | None = None) -> FeatureGrid:
    return extract_array(frame.appearance, factor or frame.camera.feature_factor)


class FileFeatureExtractor:
    """Replays precomputed per-cell vectors, keyed by frame timestamp or by call order."""

    def __init__(self, paths, factor: int):
        self.paths = [Path(p) for p in paths]
        self.factor = factor
        self._next = 0

    def __call__(self, frame) -> FeatureGrid:
        path = self.paths[self._next % len(self.paths)]
        self._next += 1
        return read_features(path, self.factor)


def write_features(path, grid: FeatureGrid):
    gh, gw = grid.shape
    header = FEATURE_MAGIC + struct.pack("<III", gh, gw, grid.dim)
    Path(path).write_bytes(header + grid.values.astype("<f4").tobytes())


def read_features(path, factor: int = 8) -> FeatureGrid:
    raw = Path(path).read_bytes()
    if raw[:4] != FEATURE_MAGIC:
        raise ValueError(f"{path}: not a feature file")
    gh, gw, d = struct.unpack_from("<III", raw, 4)
    vals = np.frombuffer(raw, dtype="<f4", count=gh * gw * d, offset=16).reshape(gh, gw, d)
    return FeatureGrid(vals.astype(np.float32), factor)
