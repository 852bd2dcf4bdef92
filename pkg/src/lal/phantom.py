"""Synthetic vessel phantoms: branching trees, their masks, and noisy images.

A phantom is an (image, pixel label, skeleton label) triple. The skeleton
label is obtained by thinning the pixel label, not from the analytic
centrelines, so it has exactly the statistics the metrics see.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .morphology import skeletonize
from .training import LabelPair

LARGE_RADIUS = (2.0, 4.0)
CAPILLARY_RADIUS = (0.5, 1.0)


@dataclass(frozen=True)
class PhantomConfig:
    size: int = 64
    n_trees: int = 2
    capillary_density: float = 1.5
    noise_std: float = 0.08
    blur_radius: float = 0.7
    seed: int = 0
    branch_prob: float = 0.75
    large_generations: int = 3
    background: float = 0.1
    texture_strength: float = 0.15
    uniform_intensity: bool = False

    def __post_init__(self):
        if self.size <= 0 or self.size % 8:
            raise ValueError(f"size must be a positive multiple of 8, got {self.size}")
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if min(self.capillary_density, self.noise_std, self.blur_radius) < 0:
            raise ValueError("capillary_density, noise_std and blur_radius must be non-negative")
        if not 0.0 <= self.branch_prob <= 1.0:
            raise ValueError("branch_prob must lie in [0, 1]")


@dataclass
class Segment:
    start: tuple[int, int]  # (row, col) pixel centre
    end: tuple[int, int]
    radius: float
    parent: int | None = None
    capillary: bool = False


@dataclass
class VesselTree:
    segments: list[Segment] = field(default_factory=list)

    def add(self, seg: Segment) -> int:
        self.segments.append(seg)
        return len(self.segments) - 1

    def __len__(self) -> int:
        return len(self.segments)


def _clamp(p, size: int) -> tuple[int, int]:
    return (int(min(max(round(p[0]), 0), size - 1)), int(min(max(round(p[1]), 0), size - 1)))


def _border_point(rng, size: int) -> tuple[tuple[int, int], float]:
    """A random root on the image border and an inward heading."""
    side = rng.integers(4)
    t = rng.uniform(0.2, 0.8) * (size - 1)
    start = [(0, t), (size - 1, t), (t, 0), (t, size - 1)][side]
    centre = (size - 1) / 2
    heading = math.atan2(centre - start[0], centre - start[1]) + rng.uniform(-0.5, 0.5)
    return _clamp(start, size), heading


def _step(p, heading: float, length: float, size: int) -> tuple[tuple[int, int], bool]:
    """Next point and whether the step had to be cut at the border."""
    q = (p[0] + length * math.sin(heading), p[1] + length * math.cos(heading))
    inside = 0 <= q[0] <= size - 1 and 0 <= q[1] <= size - 1
    return _clamp(q, size), not inside


def generate_tree(config: PhantomConfig = PhantomConfig(), seed: int | None = None) -> VesselTree:
    """Deterministic forest of ``n_trees`` vessel trees rooted on the border.

    Large vessels branch in two with probability ``branch_prob`` per child;
    they sprout capillary random walks along their length (Poisson with mean
    ``capillary_density``) and at their tips. With ``branch_prob == 0`` the
    result is a single root segment per tree.
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    size = config.size
    scale = size / 64.0
    tree = VesselTree()

    def capillary_walk(start, heading, parent):
        n_steps = int(rng.integers(3, 7))
        prev, p = parent, start
        for _ in range(n_steps):
            radius = rng.uniform(*CAPILLARY_RADIUS)
            radius = min(radius, tree.segments[prev].radius)
            heading += rng.uniform(-0.6, 0.6)
            q, cut = _step(p, heading, rng.uniform(4, 8) * scale, size)
            if q == p:
                break
            prev = tree.add(Segment(p, q, radius, prev, capillary=True))
            p = q
            if cut:
                break

    def grow(start, heading, radius, gen, parent):
        length = rng.uniform(10, 18) * scale
        end, cut = _step(start, heading, length, size)
        idx = tree.add(Segment(start, end, radius, parent))
        if config.branch_prob == 0.0:
            return
        for _ in range(rng.poisson(config.capillary_density)):
            t = rng.uniform(0.2, 0.9)
            origin = _clamp((start[0] + t * (end[0] - start[0]), start[1] + t * (end[1] - start[1])), size)
            side = rng.choice((-1.0, 1.0))
            capillary_walk(origin, heading + side * rng.uniform(0.8, 1.6), idx)
        for sign in (-1.0, 1.0):
            if rng.random() >= config.branch_prob or cut:
                continue
            turn = heading + sign * rng.uniform(0.3, 0.8)
            child_r = radius * rng.uniform(0.7, 0.9)
            if gen + 1 < config.large_generations and child_r >= LARGE_RADIUS[0]:
                grow(end, turn, child_r, gen + 1, idx)
            else:
                capillary_walk(end, turn, idx)

    for _ in range(config.n_trees):
        start, heading = _border_point(rng, size)
        grow(start, heading, rng.uniform(2.6, LARGE_RADIUS[1]), 0, None)
    return tree


def _segment_distance(rows, cols, seg: Segment) -> np.ndarray:
    (r0, c0), (r1, c1) = seg.start, seg.end
    dr, dc = r1 - r0, c1 - c0
    L2 = dr * dr + dc * dc
    if L2 == 0:
        return np.hypot(rows - r0, cols - c0)
    t = np.clip(((rows - r0) * dr + (cols - c0) * dc) / L2, 0.0, 1.0)
    return np.hypot(rows - (r0 + t * dr), cols - (c0 + t * dc))


def rasterize(tree: VesselTree, size: int) -> LabelPair:
    """Pixel label = union of stadiums (distance to segment <= radius); skeleton = thinning of it."""
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    pixel = np.zeros((size, size), dtype=bool)
    for seg in tree.segments:
        pixel |= _segment_distance(rows, cols, seg) <= seg.radius + 1e-9
    return LabelPair(pixel=pixel, skeleton=skeletonize(pixel))


def synthesize_image(pixel_mask, config: PhantomConfig = PhantomConfig(), seed: int | None = None) -> np.ndarray:
    """Grey-level image in [0, 1] for a vessel mask.

    Vessel brightness grows with the Euclidean distance to the background
    (so thick vessels are brighter at their centre), on top of a dim background
    with multiplicative texture; then Gaussian blur and additive Gaussian noise.
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    m = np.asarray(pixel_mask, dtype=bool)
    if config.uniform_intensity or not m.any():
        vessel = m.astype(np.float64)
    else:
        dist = ndimage.distance_transform_edt(m)
        vessel = np.where(m, 0.5 + 0.5 * dist / dist.max(), 0.0)
    texture = ndimage.gaussian_filter(rng.standard_normal(m.shape), 3.0, mode="reflect")
    texture /= max(np.abs(texture).max(), 1e-12)
    img = np.where(m, vessel, config.background * (1.0 + config.texture_strength * texture))
    if config.blur_radius > 0:
        img = ndimage.gaussian_filter(img, config.blur_radius, mode="reflect")
    if config.noise_std > 0:
        img = img + rng.normal(0.0, config.noise_std, size=m.shape)
    return np.clip(img, 0.0, 1.0)


def generate_phantom(config: PhantomConfig = PhantomConfig(), seed: int | None = None):
    """(image, LabelPair) for one phantom; fully determined by ``config`` and ``seed``."""
    seed = config.seed if seed is None else seed
    tree_seed, image_seed = np.random.SeedSequence(seed).generate_state(2)
    tree = generate_tree(config, int(tree_seed))
    labels = rasterize(tree, config.size)
    return synthesize_image(labels.pixel, config, int(image_seed)), labels


def generate_dataset(config: PhantomConfig, count: int, start: int = 0):
    """``count`` phantoms with seeds ``config.seed + start + i``."""
    return [generate_phantom(config, config.seed + start + i) for i in range(count)]
