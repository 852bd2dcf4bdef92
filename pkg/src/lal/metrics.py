"""Vessel morphology metrics and ground-truth agreement scores."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .morphology import as_mask, connected_components, skeletonize


class NoVesselError(ValueError):
    """Raised by metrics that are undefined on an empty segmentation."""

    def __init__(self, what: str = "metric"):
        super().__init__(f"no vessel: {what} is undefined for an empty segmentation")


CSV_COLUMNS = ("w", "vdi", "vd", "vlf", "fd", "vc", "ni", "dice", "accuracy")


@dataclass
class MetricRecord:
    vdi: float | None
    vd: float
    vlf: float
    fd: float | None
    vc: float
    ni: int
    dice: float | None = None
    accuracy: float | None = None

    @property
    def degenerate(self) -> bool:
        return self.vdi is None

    def as_row(self, w: float | None = None) -> list:
        """Values in CSV column order; ``None`` stands for an unavailable cell."""
        d = asdict(self)
        return [w] + [d[c] for c in CSV_COLUMNS[1:]]


def vd(mask) -> float:
    m = as_mask(mask)
    return float(m.sum()) / m.size


def vlf(skeleton) -> float:
    s = as_mask(skeleton)
    return float(s.sum()) / s.size


def vdi(mask, skeleton=None) -> float:
    """Vessel area over skeleton length, i.e. mean vessel width in pixels."""
    m = as_mask(mask)
    s = skeletonize(m) if skeleton is None else as_mask(skeleton)
    length = int(s.sum())
    if length == 0:
        raise NoVesselError("VDI")
    return float(m.sum()) / length


def box_counts(skeleton) -> tuple[np.ndarray, np.ndarray]:
    """Box sizes 1, 2, 4, ... (up to a quarter of the shorter side) and occupied-box counts.

    The grid is anchored at the image origin; partial boxes at the far edges count.
    """
    s = as_mask(skeleton)
    limit = max(1, min(s.shape) // 4)
    sizes, counts = [], []
    size = 1
    while size <= limit:
        h = -(-s.shape[0] // size) * size
        w = -(-s.shape[1] // size) * size
        padded = np.zeros((h, w), dtype=bool)
        padded[: s.shape[0], : s.shape[1]] = s
        occ = padded.reshape(h // size, size, w // size, size).any(axis=(1, 3))
        sizes.append(size)
        counts.append(int(occ.sum()))
        size *= 2
    return np.array(sizes), np.array(counts)


def fd(skeleton) -> float:
    """Box-counting dimension: least-squares slope of log N(s) against log(1/s)."""
    sizes, counts = box_counts(skeleton)
    if counts[0] == 0:
        raise NoVesselError("FD")
    if len(sizes) < 2:
        return 0.0
    slope = np.polyfit(np.log(1.0 / sizes), np.log(counts), 1)[0]
    return float(slope)


def vc(mask) -> float:
    """Reference-free connectivity: ``100 * (1 - min(1, (C - 1) / P))``.

    C is the number of 8-connected components and P the vessel pixel count.
    An empty mask scores 100.
    """
    lab = connected_components(mask)
    p = int(lab.sizes.sum())
    if p == 0:
        return 100.0
    return 100.0 * (1.0 - min(1.0, (lab.count - 1) / p))


def ni(mask) -> int:
    """Number of isolated pixels (8-connected components of size one)."""
    return int((connected_components(mask).sizes == 1).sum())


def eval_against_gt(pred, gt) -> tuple[float, float]:
    """(dice, accuracy). Dice of two empty masks is 1."""
    p, g = as_mask(pred), as_mask(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
    inter = int((p & g).sum())
    denom = int(p.sum()) + int(g.sum())
    dice = 1.0 if denom == 0 else 2.0 * inter / denom
    accuracy = float((p == g).sum()) / p.size
    return dice, accuracy


def compute_metrics(mask, skeleton=None, gt=None) -> MetricRecord:
    """All six morphology metrics, plus dice/accuracy when ``gt`` is given.

    VDI and FD are left as ``None`` when the mask is empty.
    """
    m = as_mask(mask)
    s = skeletonize(m) if skeleton is None else as_mask(skeleton)
    try:
        width = vdi(m, s)
        dim = fd(s)
    except NoVesselError:
        width, dim = None, None
    rec = MetricRecord(vdi=width, vd=vd(m), vlf=vlf(s), fd=dim, vc=vc(m), ni=ni(m))
    if gt is not None:
        rec.dice, rec.accuracy = eval_against_gt(m, gt)
    return rec


__all__ = [
    "CSV_COLUMNS", "MetricRecord", "NoVesselError", "box_counts", "compute_metrics",
    "eval_against_gt", "fd", "ni", "vc", "vd", "vdi", "vlf",
]
