"""Resizing, intensity normalization, B-scan denoising, and slice filtering.

Resampling uses half-pixel-center coordinates: output pixel ``i`` along an
axis of size ``dst`` samples source coordinate ``(i + 0.5) * src / dst - 0.5``.
Bilinear interpolation is a convex combination of the four neighbours, so it
can never overshoot the source value range; nearest-neighbour picks
``floor((i + 0.5) * src / dst)`` and therefore never leaves the source
alphabet.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .errors import ValidationError
from .volume_io import LabelVolume, OctVolume, Vendor

DENOISERS = ("none", "gaussian", "nlm")
SLICE_POLICIES = ("diseased_only", "all")


@dataclass(frozen=True)
class PreprocessConfig:
    """Working resolutions plus the denoiser and slice-filter stage settings."""

    target_2d: tuple[int, int] = (572, 572)
    target_vol: tuple[int, int] = (384, 384)
    denoiser: str = "none"
    sigma: float = 1.0          # gaussian kernel width
    search_radius: int = 5      # nlm search window half-width
    patch_radius: int = 2       # nlm comparison patch half-width
    h: float = 0.1              # nlm weight bandwidth
    slice_policy: str = "diseased_only"
    normalize: str = "auto"     # auto | always | never

    def __post_init__(self):
        for name, target in (("target_2d", self.target_2d), ("target_vol", self.target_vol)):
            if len(target) != 2 or any(int(t) < 1 for t in target):
                raise ValueError(f"{name} must be two positive integers, got {target}")
        if self.denoiser not in DENOISERS:
            raise ValueError(f"denoiser must be one of {DENOISERS}, got {self.denoiser!r}")
        if self.denoiser == "gaussian" and not self.sigma > 0:
            raise ValueError(f"gaussian sigma must be > 0, got {self.sigma}")
        if self.denoiser == "nlm":
            if not self.h > 0:
                raise ValueError(f"nlm h must be > 0, got {self.h}")
            if self.search_radius < 1 or self.patch_radius < 1:
                raise ValueError("nlm radii must be >= 1")
        if self.slice_policy not in SLICE_POLICIES:
            raise ValueError(
                f"slice_policy must be one of {SLICE_POLICIES}, got {self.slice_policy!r}"
            )
        if self.normalize not in ("auto", "always", "never"):
            raise ValueError(f"normalize must be auto|always|never, got {self.normalize!r}")


def default_slice_policy(vendor: Vendor | None) -> str:
    """Diseased-only slice training helps Cirrus/Spectralis but not Topcon."""
    return "all" if vendor is Vendor.TOPCON else "diseased_only"


def _nearest_indices(src: int, dst: int) -> np.ndarray:
    # floor((i + 0.5) * src / dst) in exact integer arithmetic
    i = np.arange(dst, dtype=np.int64)
    return (2 * i + 1) * src // (2 * dst)


def _linear_coords(src: int, dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    centers = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    lo = np.floor(centers).astype(np.int64)
    frac = centers - lo
    return np.clip(lo, 0, src - 1), np.clip(lo + 1, 0, src - 1), frac


def resize_slice(image: np.ndarray, target: tuple[int, int], mode: str = "bilinear") -> np.ndarray:
    """Resize one 2-D image to ``target`` = (width, height).

    ``bilinear`` output is clamped to the source value range; ``nearest``
    copies source pixels and is used for label images.
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {image.shape}")
    tw, th = (int(t) for t in target)
    if tw < 1 or th < 1:
        raise ValueError(f"target dimensions must be positive, got {target}")
    src_h, src_w = image.shape

    if mode == "nearest":
        iy = _nearest_indices(src_h, th)
        ix = _nearest_indices(src_w, tw)
        return image[np.ix_(iy, ix)]
    if mode != "bilinear":
        raise ValueError(f"mode must be 'bilinear' or 'nearest', got {mode!r}")

    y0, y1, fy = _linear_coords(src_h, th)
    x0, x1, fx = _linear_coords(src_w, tw)
    data = image.astype(np.float64)
    rows = data[y0] * (1.0 - fy)[:, None] + data[y1] * fy[:, None]
    out = rows[:, x0] * (1.0 - fx)[None, :] + rows[:, x1] * fx[None, :]
    # convex weights cannot overshoot; clamp away float round-off at the edges
    np.clip(out, data.min(), data.max(), out=out)
    return out.astype(image.dtype) if np.issubdtype(image.dtype, np.floating) else out


def resize_volume(vol: OctVolume | LabelVolume, target: tuple[int, int]):
    """Resize every B-scan to ``target`` = (width, height); depth is preserved.

    Intensity volumes are interpolated bilinearly, label volumes with
    nearest-neighbour so no new class can appear.
    """
    tw, th = (int(t) for t in target)
    if tw < 1 or th < 1:
        raise ValueError(f"target dimensions must be positive, got {target}")
    depth, src_h, src_w = vol.voxels.shape

    if isinstance(vol, LabelVolume):
        iy = _nearest_indices(src_h, th)
        ix = _nearest_indices(src_w, tw)
        out = vol.voxels[:, iy[:, None], ix[None, :]]
        return LabelVolume(voxels=out, volume_id=vol.volume_id)

    out = np.empty((depth, th, tw), dtype=np.float32)
    for z in range(depth):
        out[z] = resize_slice(vol.voxels[z].astype(np.float64), (tw, th), "bilinear")
    return OctVolume(
        voxels=out, vendor=vol.vendor, spacing=vol.spacing, volume_id=vol.volume_id
    )


def normalize(vol: OctVolume) -> OctVolume:
    """Min-max normalize intensities to [0, 1]; a constant volume maps to all zeros."""
    voxels = vol.voxels
    if not np.isfinite(voxels).all():
        raise ValidationError(f"volume '{vol.volume_id}' contains non-finite intensities")
    lo = float(voxels.min())
    hi = float(voxels.max())
    if hi > lo:
        out = ((voxels - lo) / (hi - lo)).astype(np.float32)
    else:
        out = np.zeros_like(voxels, dtype=np.float32)
    return OctVolume(voxels=out, vendor=vol.vendor, spacing=vol.spacing, volume_id=vol.volume_id)


def _nlm(image: np.ndarray, search_radius: int, patch_radius: int, h: float) -> np.ndarray:
    """Non-local means by shift-and-accumulate over the search window.

    Patch distances are mean squared differences computed with a box filter;
    weights are exp(-d2 / h^2).  Borders use edge replication.
    """
    img = image.astype(np.float64)
    height, width = img.shape
    pad = search_radius
    padded = np.pad(img, pad, mode="edge")
    num = np.zeros_like(img)
    den = np.zeros_like(img)
    size = 2 * patch_radius + 1
    inv_h2 = 1.0 / (h * h)
    for dy in range(-search_radius, search_radius + 1):
        for dx in range(-search_radius, search_radius + 1):
            shifted = padded[pad + dy : pad + dy + height, pad + dx : pad + dx + width]
            d2 = ndimage.uniform_filter((img - shifted) ** 2, size=size, mode="nearest")
            w = np.exp(-d2 * inv_h2)
            num += w * shifted
            den += w
    return num / den


def denoise(image: np.ndarray, cfg: PreprocessConfig) -> np.ndarray:
    """Denoise one B-scan per the configured stage; ``none`` is an exact identity."""
    if cfg.denoiser == "none":
        return image
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {image.shape}")
    if cfg.denoiser == "gaussian":
        out = ndimage.gaussian_filter(image.astype(np.float64), sigma=cfg.sigma, mode="nearest")
    else:
        out = _nlm(image, cfg.search_radius, cfg.patch_radius, cfg.h)
    return out.astype(np.float32)


def filter_slices(labels: LabelVolume, policy: str) -> list[int]:
    """Return the z-indices to train on: slices with any fluid, or every slice."""
    if policy not in SLICE_POLICIES:
        raise ValueError(f"policy must be one of {SLICE_POLICIES}, got {policy!r}")
    depth = labels.voxels.shape[0]
    if policy == "all":
        return list(range(depth))
    diseased = labels.voxels.reshape(depth, -1).any(axis=1)
    return [int(z) for z in np.nonzero(diseased)[0]]


def preprocess_volume(
    vol: OctVolume, cfg: PreprocessConfig, target: tuple[int, int]
) -> OctVolume:
    """Normalize (per ``cfg.normalize``), resize to ``target``, and denoise.

    With ``normalize="auto"`` the affine rescale only runs when intensities
    fall outside [0, 1], so already-normalized volumes pass through bit-true.
    """
    if cfg.normalize == "always":
        vol = normalize(vol)
    elif cfg.normalize == "auto":
        if not np.isfinite(vol.voxels).all():
            raise ValidationError(f"volume '{vol.volume_id}' contains non-finite intensities")
        lo, hi = float(vol.voxels.min()), float(vol.voxels.max())
        if lo < 0.0 or hi > 1.0:
            vol = normalize(vol)
    if vol.dims[:2] != tuple(target):
        vol = resize_volume(vol, target)
    if cfg.denoiser != "none":
        voxels = np.stack([denoise(plane, cfg) for plane in vol.voxels])
        vol = OctVolume(voxels=voxels, vendor=vol.vendor, spacing=vol.spacing,
                        volume_id=vol.volume_id)
    return vol
