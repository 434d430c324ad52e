"""Synthetic band-coded test volumes with known fluid labels.

Each class occupies its own intensity band (background low, then IRF, SRF,
PED in rising order) so a simple threshold at 0.25 / 0.5 / 0.75 recovers the
labels exactly.  Fluid regions are axis-aligned ellipsoids kept well apart,
so per-class morphological closing leaves the truth unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..patch_engine import FluidClass, close_mask
from ..volume_io import LabelVolume, OctVolume

# per-class intensity bands, strictly inside the 0.25/0.5/0.75 thresholds
INTENSITY_BANDS = {
    FluidClass.BACKGROUND: (0.02, 0.22),
    FluidClass.IRF: (0.30, 0.45),
    FluidClass.SRF: (0.55, 0.70),
    FluidClass.PED: (0.80, 0.95),
}


@dataclass(frozen=True)
class BlobSpec:
    """One ellipsoidal fluid region: class, centre (x, y, z), radii (rx, ry, rz)."""

    cls: FluidClass
    center: tuple[int, int, int]
    radii: tuple[int, int, int]

    def __post_init__(self):
        if FluidClass(self.cls) == FluidClass.BACKGROUND:
            raise ValueError("blobs must carry a fluid class, not background")
        if any(r < 1 for r in self.radii):
            raise ValueError(f"blob radii must be >= 1, got {self.radii}")


def _paint_labels(dims: tuple[int, int, int], blobs: list[BlobSpec]) -> np.ndarray:
    width, height, depth = dims
    labels = np.zeros((depth, height, width), dtype=np.uint8)
    zs = np.arange(depth, dtype=np.float64)[:, None, None]
    ys = np.arange(height, dtype=np.float64)[None, :, None]
    xs = np.arange(width, dtype=np.float64)[None, None, :]
    for blob in blobs:
        cx, cy, cz = blob.center
        rx, ry, rz = blob.radii
        member = ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 + ((zs - cz) / rz) ** 2 <= 1.0
        labels[member] = int(blob.cls)
    return labels


MIN_DIMS = (64, 64, 4)


def synth_phantom(
    dims: tuple[int, int, int],
    blobs: list[BlobSpec],
    seed: int,
    volume_id: str = "phantom",
) -> tuple[OctVolume, LabelVolume]:
    """Render a phantom: labels from the blob list, intensities drawn per voxel
    uniformly inside the class's band."""
    width, height, depth = (int(v) for v in dims)
    if width < MIN_DIMS[0] or height < MIN_DIMS[1] or depth < MIN_DIMS[2]:
        raise ValueError(f"phantom dims must be at least {MIN_DIMS}, got {dims}")
    for blob in blobs:
        cx, cy, cz = blob.center
        rx, ry, rz = blob.radii
        if (
            cx - rx < 0 or cx + rx >= width
            or cy - ry < 0 or cy + ry >= height
            or cz - rz < 0 or cz + rz >= depth
        ):
            raise ValueError(
                f"blob at {blob.center} with radii {blob.radii} exceeds dims {dims}"
            )
    labels = _paint_labels((width, height, depth), blobs)
    rng = np.random.default_rng(seed)
    voxels = np.empty((depth, height, width), dtype=np.float32)
    for cls, (lo, hi) in INTENSITY_BANDS.items():
        mask = labels == int(cls)
        n = int(np.count_nonzero(mask))
        if n:
            voxels[mask] = rng.uniform(lo, hi, size=n).astype(np.float32)
    vol = OctVolume(voxels=voxels, vendor=None, spacing=(1.0, 1.0, 1.0), volume_id=volume_id)
    return vol, LabelVolume(voxels=labels, volume_id=volume_id)


def closing_stable(labels: LabelVolume, radius: int) -> bool:
    """True when per-class closing at ``radius`` leaves the labels untouched."""
    for cls in (FluidClass.IRF, FluidClass.SRF, FluidClass.PED):
        if not np.array_equal(close_mask(labels, cls, radius).voxels, labels.voxels):
            return False
    return True


def random_phantom(
    dims: tuple[int, int, int],
    seed: int,
    n_blobs: int = 6,
    close_radius: int = 2,
    volume_id: str = "phantom",
) -> tuple[OctVolume, LabelVolume]:
    """Scatter separated fluid blobs and render the phantom.

    Blob bounding boxes are padded by ``close_radius + 1`` and kept disjoint
    (and clear of the volume border), which keeps closing from bridging
    between regions; the result is checked and re-rolled if it is not
    closing-stable at ``close_radius``.
    """
    width, height, depth = (int(v) for v in dims)
    rng = np.random.default_rng(seed)
    margin = close_radius + 1
    for _attempt in range(16):
        blobs: list[BlobSpec] = []
        boxes: list[tuple[int, int, int, int, int, int]] = []
        tries = 0
        while len(blobs) < n_blobs and tries < 400:
            tries += 1
            cls = (FluidClass.IRF, FluidClass.SRF, FluidClass.PED)[len(blobs) % 3]
            rx = int(rng.integers(4, max(5, min(25, width // 8))))
            ry = int(rng.integers(4, max(5, min(25, height // 8))))
            rz = int(rng.integers(1, max(2, min(7, depth // 3 + 1))))
            lo_x, hi_x = rx + margin, width - rx - margin
            lo_y, hi_y = ry + margin, height - ry - margin
            lo_z, hi_z = rz, depth - rz
            if lo_x >= hi_x or lo_y >= hi_y or lo_z >= hi_z:
                continue
            cx = int(rng.integers(lo_x, hi_x))
            cy = int(rng.integers(lo_y, hi_y))
            cz = int(rng.integers(lo_z, hi_z))
            box = (
                cx - rx - margin,
                cx + rx + margin,
                cy - ry - margin,
                cy + ry + margin,
                cz - rz - 1,
                cz + rz + 1,
            )
            clash = any(
                box[0] <= b[1] and b[0] <= box[1]
                and box[2] <= b[3] and b[2] <= box[3]
                and box[4] <= b[5] and b[4] <= box[5]
                for b in boxes
            )
            if clash:
                continue
            boxes.append(box)
            blobs.append(BlobSpec(cls=cls, center=(cx, cy, cz), radii=(rx, ry, rz)))
        if not blobs:
            raise ValueError(f"volume {dims} is too small to place any fluid blob")
        vol, labels = synth_phantom((width, height, depth), blobs, seed=int(rng.integers(2**31)), volume_id=volume_id)
        if closing_stable(labels, close_radius):
            return vol, labels
    raise RuntimeError(f"could not build a closing-stable phantom for dims {dims}, seed {seed}")
