"""Binary-mask primitives: thresholding, thinning, 8-connected components."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

EIGHT = np.ones((3, 3), dtype=bool)

# Neighbour offsets in Zhang-Suen order P2..P9: N, NE, E, SE, S, SW, W, NW.
_OFFSETS = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]


def as_mask(m) -> np.ndarray:
    m = np.asarray(m)
    if m.dtype == bool:
        return m
    if not np.isin(m, (0, 1)).all():
        raise ValueError("mask must be strictly binary {0, 1}")
    return m.astype(bool)


def binarize(prob, threshold: float = 0.5) -> np.ndarray:
    """``prob >= threshold`` (a value exactly at the threshold counts as vessel)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return np.asarray(prob) >= threshold


def _build_tables():
    """Lookup tables indexed by the 8-bit neighbourhood code (bit i = P(i+2))."""
    codes = np.arange(256)
    bits = (codes[:, None] >> np.arange(8)) & 1  # columns P2..P9
    b = bits.sum(axis=1)
    a = ((bits == 0) & (np.roll(bits, -1, axis=1) == 1)).sum(axis=1)
    p2, p4, p6, p8 = bits[:, 0], bits[:, 2], bits[:, 4], bits[:, 6]
    base = (b >= 2) & (b <= 6) & (a == 1)
    first = base & (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
    second = base & (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
    # Yokoi 8-connectivity number; a border pixel is simple iff it equals 1.
    inv = 1 - bits
    # reorder to x1..x8 = E, NE, N, NW, W, SW, S, SE
    x = inv[:, [2, 1, 0, 7, 6, 5, 4, 3]]
    nc8 = sum(x[:, k] - x[:, k] * x[:, (k + 1) % 8] * x[:, (k + 2) % 8] for k in (0, 2, 4, 6))
    simple = nc8 == 1
    return first, second, simple


_FIRST, _SECOND, _SIMPLE = _build_tables()


def _codes(img: np.ndarray) -> np.ndarray:
    pad = np.pad(img, 1).astype(np.uint8)
    h, w = img.shape
    code = np.zeros((h, w), dtype=np.uint8)
    for i, (dy, dx) in enumerate(_OFFSETS):
        code |= pad[1 + dy:1 + dy + h, 1 + dx:1 + dx + w] << i
    return code


def _code_at(pad: np.ndarray, y: int, x: int) -> int:
    c = 0
    for i, (dy, dx) in enumerate(_OFFSETS):
        c |= int(pad[y + dy, x + dx]) << i
    return c


def skeletonize(mask) -> np.ndarray:
    """Zhang-Suen thinning until a full iteration deletes nothing.

    Candidates of each sub-pass are found in parallel as in the original
    rule. Deletions are then applied in raster order, and a candidate is kept
    if removing it would no longer be topology-preserving given the deletions
    already made. Plain Zhang-Suen erases 2x2 squares and 2-pixel-thick
    diagonals; the check prevents that, so the number of 8-connected
    components never changes.
    """
    img = as_mask(mask).copy()
    if img.ndim != 2:
        raise ValueError("skeletonize expects a 2D mask")
    pad = np.pad(img, 1)
    while True:
        changed = False
        for table in (_FIRST, _SECOND):
            code = _codes(pad[1:-1, 1:-1])
            cand = np.argwhere(pad[1:-1, 1:-1] & table[code])
            if len(cand) == 0:
                continue
            # Fast path: candidates with no candidate neighbour can go together.
            flag = np.zeros_like(pad)
            flag[cand[:, 0] + 1, cand[:, 1] + 1] = True
            crowded = ndimage.convolve(flag.astype(np.uint8), EIGHT.astype(np.uint8),
                                       mode="constant")[cand[:, 0] + 1, cand[:, 1] + 1] > 1
            for (y, x), dense in zip(cand + 1, crowded):
                if not dense or _SIMPLE[_code_at(pad, y, x)]:
                    pad[y, x] = False
                    changed = True
        if not changed:
            return pad[1:-1, 1:-1].copy()


@dataclass
class ComponentLabeling:
    labels: np.ndarray  # 0 = background, ids dense from 1
    sizes: np.ndarray   # sizes[i] = pixel count of component i + 1
    connectivity: int = 8

    @property
    def count(self) -> int:
        return len(self.sizes)


def connected_components(mask) -> ComponentLabeling:
    """8-connected labelling."""
    m = as_mask(mask)
    labels, n = ndimage.label(m, structure=EIGHT)
    sizes = np.bincount(labels.ravel(), minlength=n + 1)[1:]
    return ComponentLabeling(labels, sizes)
