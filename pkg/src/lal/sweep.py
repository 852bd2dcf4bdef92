"""Test-time sweeps over the adversarial weight and what is derived from them.

A sweep evaluates the trained network on a grid ``0, step, ..., 1`` and keeps
the binarised mask and morphology metrics of every grid point. From it we get
a recommended weight (maximum curvature of the VDI curve), a per-pixel
uncertainty map and an uncertainty-guided denoiser.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .metrics import MetricRecord, compute_metrics
from .morphology import as_mask, binarize, connected_components
from .network import ModelParams, forward


TIE_RTOL = 1e-9


class DegenerateCurveError(ValueError):
    pass


def worker_count(workers: int | None = None) -> int:
    if workers is not None:
        return max(1, int(workers))
    return max(1, int(os.environ.get("LAL_THREADS", "1") or 1))


def make_grid(step: float = 0.01) -> np.ndarray:
    """``0, step, ..., 1`` built from integer hundredths so the endpoints are exact."""
    hundredths = round(step * 100)
    if hundredths <= 0 or abs(step * 100 - hundredths) > 1e-9 or 100 % hundredths:
        raise ValueError(f"step must divide 1 in whole hundredths, got {step}")
    return np.arange(0, 101, hundredths) / 100.0


@dataclass
class SweepResult:
    grid: np.ndarray
    masks: np.ndarray              # (len(grid), H, W) bool
    records: list[MetricRecord]

    def __post_init__(self):
        if not (len(self.grid) == len(self.masks) == len(self.records)):
            raise ValueError("grid, masks and records must have equal length")

    def __len__(self) -> int:
        return len(self.grid)

    def series(self, name: str) -> np.ndarray:
        """One metric across the grid, NaN where undefined."""
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name)
                         for r in self.records], dtype=np.float64)

    def at(self, w: float) -> tuple[np.ndarray, MetricRecord]:
        i = int(np.argmin(np.abs(self.grid - w)))
        return self.masks[i], self.records[i]


def sweep(
    params: ModelParams,
    image,
    step: float = 0.01,
    threshold: float = 0.5,
    gt=None,
    workers: int | None = None,
) -> SweepResult:
    """Forward, binarise and measure at every grid weight.

    Grid points are independent, so they are farmed out to ``workers``
    threads (default: ``$LAL_THREADS`` or 1); results are kept in grid order.
    """
    grid = make_grid(step)
    image = np.asarray(image, dtype=np.float64)
    gt = None if gt is None else as_mask(gt)

    def one(w):
        mask = binarize(forward(params, image, w), threshold)
        return mask, compute_metrics(mask, gt=gt)

    n = worker_count(workers)
    if n == 1:
        out = [one(w) for w in grid]
    else:
        with ThreadPoolExecutor(n) as pool:
            out = list(pool.map(one, grid))
    masks = np.stack([m for m, _ in out])
    return SweepResult(grid, masks, [r for _, r in out])


def moving_average(y: np.ndarray, window: int = 5) -> np.ndarray:
    """Centred moving average; near the ends the window shrinks symmetrically.

    Keeping the window centred means a straight line stays exactly straight,
    so the ends cannot invent curvature.
    """
    half = window // 2
    n = len(y)
    out = np.empty(n)
    for i in range(n):
        r = min(half, i, n - 1 - i)
        out[i] = y[i - r:i + r + 1].mean()
    return out


def curvature(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``|y''| / (1 + y'^2)^1.5`` by three-point central differences; NaN at the ends."""
    k = np.full(len(y), np.nan)
    h0 = x[1:-1] - x[:-2]
    h1 = x[2:] - x[1:-1]
    d1 = (y[2:] - y[:-2]) / (h0 + h1)
    d2 = 2.0 * (h0 * y[2:] - (h0 + h1) * y[1:-1] + h1 * y[:-2]) / (h0 * h1 * (h0 + h1))
    k[1:-1] = np.abs(d2) / (1.0 + d1 ** 2) ** 1.5
    return k


def recommend_w(result: SweepResult, window: int = 5) -> tuple[float, dict]:
    """Weight at which the smoothed VDI curve bends most.

    Degenerate grid points (empty masks) are dropped before smoothing. Ties go
    to the smaller weight; curvatures within ``TIE_RTOL`` of the maximum count
    as tied, so floating-point noise in the grid spacing cannot decide.
    """
    raw = result.series("vdi")
    ok = ~np.isnan(raw)
    if ok.sum() < 7:
        raise DegenerateCurveError(
            f"degenerate curve: only {int(ok.sum())} grid points have a defined VDI (need 7)")
    w = result.grid[ok]
    smooth = moving_average(raw[ok], window)
    kappa = curvature(w, smooth)
    top = np.nanmax(kappa)
    i = int(np.flatnonzero(kappa >= top * (1.0 - TIE_RTOL))[0])
    diagnostics = {"grid": w, "vdi": raw[ok], "vdi_smooth": smooth, "curvature": kappa,
                   "max_curvature": float(kappa[i])}
    if kappa[i] < 1e-9:
        raise DegenerateCurveError("degenerate curve: VDI has no curvature (flat or linear)")
    return float(w[i]), diagnostics


def uncertainty_map(result: SweepResult) -> np.ndarray:
    """``1 - f`` where f is the fraction of grid weights marking the pixel as vessel.

    Pixels that never change along the sweep get 0.
    """
    f = result.masks.sum(axis=0) / float(len(result))
    return np.where((f > 0) & (f < 1), 1.0 - f, 0.0)


def denoise(mask, uncertainty, max_area: int = 3, min_uncertainty: float = 0.7) -> np.ndarray:
    """Drop 8-connected components with area < ``max_area`` and mean uncertainty > ``min_uncertainty``."""
    m = as_mask(mask)
    u = np.asarray(uncertainty, dtype=np.float64)
    if u.shape != m.shape:
        raise ValueError(f"shape mismatch: mask {m.shape} vs uncertainty {u.shape}")
    lab = connected_components(m)
    if lab.count == 0:
        return m.copy()
    sums = np.bincount(lab.labels.ravel(), weights=u.ravel(), minlength=lab.count + 1)[1:]
    mean_u = sums / lab.sizes
    drop = np.concatenate([[False], (lab.sizes < max_area) & (mean_u > min_uncertainty)])
    return m & ~drop[lab.labels]
