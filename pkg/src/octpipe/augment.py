"""Rotation and translation augmentation for image/label sample pairs.

A sample is (image, labels) over the same grid; either may be a single slice
(h, w) or a plane stack (planes, h, w), and stacked planes all receive the
same in-plane transform so inter-slice correspondence survives.

Positive angles rotate counter-clockwise about the slice centre ((n-1)/2 per
axis).  Images resample bilinearly, labels by nearest neighbour, and samples
falling outside the source slice read as 0.  A 90 degree rotation of a square
slice therefore reproduces ``np.rot90(a, 1)`` exactly for both kinds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

Sample = tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class AugmentConfig:
    rotation_deg: float = 10.0
    translate_px: int = 16
    copies_per_sample: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.rotation_deg < 0:
            raise ValueError(f"rotation_deg must be >= 0, got {self.rotation_deg}")
        if self.translate_px < 0:
            raise ValueError(f"translate_px must be >= 0, got {self.translate_px}")
        if self.copies_per_sample < 0:
            raise ValueError(f"copies_per_sample must be >= 0, got {self.copies_per_sample}")


def _source_coords(shape: tuple[int, int], degrees: float) -> tuple[np.ndarray, np.ndarray]:
    h, w = shape
    cy = (h - 1) / 2.0
    cx = (w - 1) / 2.0
    theta = math.radians(degrees)
    cos_t = math.cos(theta)
    sin_t = math.sin(theta)
    ys, xs = np.meshgrid(
        np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij"
    )
    dx = xs - cx
    dy = ys - cy
    # inverse map: for each output pixel, where it came from in the source
    src_x = cx + cos_t * dx - sin_t * dy
    src_y = cy + sin_t * dx + cos_t * dy
    return src_x, src_y


def _rotate_image_plane(image: np.ndarray, degrees: float) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    src_x, src_y = _source_coords((h, w), degrees)
    x0 = np.floor(src_x).astype(np.int64)
    y0 = np.floor(src_y).astype(np.int64)
    fx = src_x - x0
    fy = src_y - y0

    def sample_at(yi, xi):
        inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        vals = np.zeros_like(src_x)
        vals[inside] = image[yi[inside], xi[inside]]
        return vals

    v00 = sample_at(y0, x0)
    v01 = sample_at(y0, x0 + 1)
    v10 = sample_at(y0 + 1, x0)
    v11 = sample_at(y0 + 1, x0 + 1)
    top = v00 * (1 - fx) + v01 * fx
    bot = v10 * (1 - fx) + v11 * fx
    return top * (1 - fy) + bot * fy


def _rotate_label_plane(labels: np.ndarray, degrees: float) -> np.ndarray:
    labels = np.asarray(labels)
    h, w = labels.shape
    src_x, src_y = _source_coords((h, w), degrees)
    xi = np.floor(src_x + 0.5).astype(np.int64)
    yi = np.floor(src_y + 0.5).astype(np.int64)
    inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    out = np.zeros_like(labels)
    out[inside] = labels[yi[inside], xi[inside]]
    return out


def _per_plane(arr: np.ndarray, fn) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.ndim == 2:
        return fn(arr)
    if arr.ndim == 3:
        return np.stack([fn(plane) for plane in arr])
    raise ValueError(f"expected a 2-D slice or 3-D plane stack, got shape {arr.shape}")


def rotate(sample: Sample, degrees: float) -> Sample:
    """Rotate image and labels together; zero angle is an exact identity."""
    if not math.isfinite(degrees):
        raise ValueError(f"rotation angle must be finite, got {degrees}")
    image, labels = sample
    if degrees == 0.0:
        return np.asarray(image), np.asarray(labels)
    rotated_image = _per_plane(image, lambda p: _rotate_image_plane(p, degrees))
    rotated_labels = _per_plane(labels, lambda p: _rotate_label_plane(p, degrees))
    return rotated_image, rotated_labels


def _shift_plane(plane: np.ndarray, dx: int, dy: int) -> np.ndarray:
    out = np.zeros_like(plane)
    h, w = plane.shape
    src_y0, dst_y0 = (0, dy) if dy >= 0 else (-dy, 0)
    src_x0, dst_x0 = (0, dx) if dx >= 0 else (-dx, 0)
    ny = h - abs(dy)
    nx = w - abs(dx)
    if ny > 0 and nx > 0:
        out[dst_y0 : dst_y0 + ny, dst_x0 : dst_x0 + nx] = plane[
            src_y0 : src_y0 + ny, src_x0 : src_x0 + nx
        ]
    return out


def translate(sample: Sample, dx: int, dy: int) -> Sample:
    """Shift image and labels by whole pixels; exposed territory reads 0."""
    image, labels = sample
    image = np.asarray(image)
    labels = np.asarray(labels)
    h, w = image.shape[-2:]
    dx = int(dx)
    dy = int(dy)
    if abs(dx) >= w or abs(dy) >= h:
        raise ValueError(f"shift ({dx}, {dy}) moves everything off a {w}x{h} slice")
    if dx == 0 and dy == 0:
        return image, labels
    return (
        _per_plane(image, lambda p: _shift_plane(p, dx, dy)),
        _per_plane(labels, lambda p: _shift_plane(p, dx, dy)),
    )


def augment_pair(sample: Sample, degrees: float, dx: int, dy: int) -> Sample:
    """Rotation followed by translation with shared parameters."""
    return translate(rotate(sample, degrees), dx, dy)


def augment_set(samples: list[Sample], cfg: AugmentConfig) -> list[Sample]:
    """Each input sample followed by ``cfg.copies_per_sample`` augmented copies.

    Output length is ``len(samples) * (1 + copies_per_sample)``.  Each source
    sample draws from its own child of one seed sequence, so the copies of
    sample i do not depend on how many samples precede it.
    """
    children = np.random.SeedSequence(cfg.seed).spawn(max(1, len(samples)))
    out: list[Sample] = []
    for sample, child in zip(samples, children):
        out.append(sample)
        rng = np.random.default_rng(child)
        h, w = np.asarray(sample[0]).shape[-2:]
        for _ in range(cfg.copies_per_sample):
            degrees = float(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg))
            max_dx = min(cfg.translate_px, w - 1)
            max_dy = min(cfg.translate_px, h - 1)
            dx = int(rng.integers(-max_dx, max_dx + 1))
            dy = int(rng.integers(-max_dy, max_dy + 1))
            out.append(augment_pair(sample, degrees, dx, dy))
    return out
