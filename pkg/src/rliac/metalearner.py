"""Per-region error histories and learning progress."""

import csv
import math

import numpy as np

from .segmentation import Label, resize_nearest

LP_MAX = 1.0


class DeadRegion(KeyError):
    pass


def confusion(observed, predicted):
    """(tp, fp, fn) of boolean predictions against boolean observations."""
    observed = np.asarray(observed, dtype=bool)
    predicted = np.asarray(predicted, dtype=bool)
    tp = int(np.count_nonzero(observed & predicted))
    fp = int(np.count_nonzero(~observed & predicted))
    fn = int(np.count_nonzero(observed & ~predicted))
    return tp, fp, fn


def f1_error(tp, fp, fn) -> float:
    """1 - F1 with 2tp / (2tp + fp + fn); no positives anywhere counts as perfect."""
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 0.0
    return 1.0 - 2.0 * tp / denom


def binarize(values):
    return np.asarray(values) > 0.5


def frame_error(mask, lowres) -> float:
    """Error of a low-resolution saliency map on the Salient/NotSalient cells of a label mask."""
    values = getattr(lowres, "values", lowres)
    mask = np.asarray(mask)
    if mask.shape != values.shape:
        factor = mask.shape[0] // values.shape[0]
        mask = resize_nearest(mask, factor)
        if mask.shape != values.shape:
            raise ValueError(f"mask {mask.shape} does not match saliency {values.shape}")
    keep = (mask == Label.SALIENT) | (mask == Label.NOT_SALIENT)
    return f1_error(*confusion(mask[keep] == Label.SALIENT, binarize(values[keep])))


def ols_slope(y) -> float:
    y = np.asarray(y, dtype=float)
    n = np.arange(1, len(y) + 1, dtype=float)
    n -= n.mean()
    return float((n * (y - y.mean())).sum() / (n * n).sum())


def lp_from_slope(beta) -> float:
    return (2.0 / math.pi) * abs(math.atan(-beta))


class ErrorHistory:
    """Error records per region, indexed by the region-local observation count n.

    With ``interpolate`` (default) regions with 3..tau-1 samples regress over all
    of them; otherwise they keep the R-MAX value until the window is full.
    """

    def __init__(self, tau: int = 10, min_samples: int = 3, interpolate: bool = True):
        if tau < 2:
            raise ValueError("tau must be >= 2")
        self.tau = tau
        self.min_samples = min_samples
        self.interpolate = interpolate
        self._errs: dict[int, list] = {}
        self._dead: set[int] = set()
        self.log: list[tuple] = []  # (region, n, err, beta, lp, sim_time_s)

    def __contains__(self, region):
        return region in self._errs

    def errors(self, region) -> list:
        return list(self._errs.get(region, []))

    def count(self, region) -> int:
        return len(self._errs.get(region, []))

    def kill(self, region):
        """Mark a region dead (merged away); later records to it are rejected."""
        self._dead.add(region)
        self._errs.pop(region, None)

    def record(self, region, err, sim_time=0.0) -> int:
        if region in self._dead:
            raise DeadRegion(region)
        if not 0.0 <= err <= 1.0:
            raise ValueError(f"error {err} outside [0, 1]")
        hist = self._errs.setdefault(region, [])
        hist.append(float(err))
        beta = self.slope(region)
        self.log.append((region, len(hist), float(err), beta, self.progress(region), float(sim_time)))
        return len(hist)

    def slope(self, region) -> float:
        hist = self._errs.get(region, [])
        if len(hist) < self.min_samples or (not self.interpolate and len(hist) < self.tau):
            return float("nan")
        return ols_slope(hist[-self.tau:])

    def progress(self, region) -> float:
        beta = self.slope(region)
        if math.isnan(beta):
            return LP_MAX
        return lp_from_slope(beta)

    def rewards(self, regions) -> dict:
        return {r: self.progress(r) for r in regions}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["region", "n", "err", "beta", "lp", "sim_time_s"])
            for region, n, err, beta, lp, t in self.log:
                wr.writerow([region, n, f"{err:.6g}", "" if math.isnan(beta) else f"{beta:.6g}",
                             f"{lp:.6g}", f"{t:.6g}"])


def record(hist: ErrorHistory, region, err, sim_time=0.0) -> int:
    return hist.record(region, err, sim_time)


def progress(hist: ErrorHistory, region) -> float:
    return hist.progress(region)
