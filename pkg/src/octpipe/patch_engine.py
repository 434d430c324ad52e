"""Overlapping-patch grids, 2D/2.5D/3D extraction, prediction stitching, closing.

Patch anchors are (x, y) top-left corners in image coordinates; patch data is
indexed [plane, y, x].  Per-patch predictions are class-first: a 2-D map
(4, h, w) placed at the anchor's slice, or a 3-D block (4, planes, h, w)
spanning the anchored slice range.  Stitching averages all predictions that
cover a voxel, merging in canonical row-major anchor order so the result is
independent of the input ordering and of any parallel schedule upstream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import CoverageError
from .volume_io import N_CLASSES, FluidClass, LabelVolume, OctVolume, ProbVolume

DEPTH_KINDS = ("2d", "2.5d", "3d")


@dataclass(frozen=True)
class DepthMode:
    """How much depth context a patch carries: one plane, a thin slab, or all planes."""

    kind: str
    radius: int = 1

    def __post_init__(self):
        if self.kind not in DEPTH_KINDS:
            raise ValueError(f"depth mode must be one of {DEPTH_KINDS}, got {self.kind!r}")
        if self.kind == "2.5d" and self.radius < 1:
            raise ValueError(f"2.5d slab radius must be >= 1, got {self.radius}")

    @classmethod
    def d2(cls) -> "DepthMode":
        return cls("2d")

    @classmethod
    def d25(cls, radius: int = 1) -> "DepthMode":
        return cls("2.5d", radius)

    @classmethod
    def d3(cls) -> "DepthMode":
        return cls("3d")

    @classmethod
    def parse(cls, text: str) -> "DepthMode":
        t = text.strip().lower()
        if t in ("2d", "2"):
            return cls.d2()
        if t in ("2.5d", "2.5", "25d"):
            return cls.d25()
        if t in ("3d", "3"):
            return cls.d3()
        raise ValueError(f"cannot parse depth mode {text!r}")

    @property
    def label(self) -> str:
        return {"2d": "2D", "2.5d": "2.5D", "3d": "3D"}[self.kind]

    def n_planes(self, depth: int) -> int:
        if self.kind == "2d":
            return 1
        if self.kind == "2.5d":
            return 2 * self.radius + 1
        return depth


@dataclass(frozen=True)
class PatchGrid:
    """Planned anchor lattice for one image plane size."""

    patch_w: int
    patch_h: int
    overlap: float
    stride_x: int
    stride_y: int
    anchors: tuple[tuple[int, int], ...]
    image_dims: tuple[int, int]
    depth_mode: DepthMode = field(default_factory=DepthMode.d2)


def _axis_anchors(length: int, patch: int, stride: int) -> list[int]:
    last = length - patch
    anchors = list(range(0, last + 1, stride))
    if anchors[-1] != last:
        anchors.append(last)
    return anchors


def plan_grid(
    image_dims: tuple[int, int],
    patch: tuple[int, int] | int,
    overlap: float,
    depth_mode: DepthMode | None = None,
) -> PatchGrid:
    """Plan a full-coverage anchor lattice.

    The stride is ``round(patch * (1 - overlap))`` per axis.  Anchors sit at
    stride multiples; when the lattice does not already touch the far edge an
    extra edge-aligned anchor (``image - patch``) is appended, so every pixel
    is covered by at least one patch.
    """
    if isinstance(patch, int):
        patch = (patch, patch)
    width, height = (int(v) for v in image_dims)
    patch_w, patch_h = (int(v) for v in patch)
    if not 0.0 <= overlap < 1.0:
        raise ValueError(f"overlap must lie in [0, 1), got {overlap}")
    if patch_w > width or patch_h > height:
        raise ValueError(
            f"patch {patch_w}x{patch_h} does not fit image {width}x{height}"
        )
    if patch_w < 1 or patch_h < 1:
        raise ValueError(f"patch dimensions must be positive, got {patch}")
    stride_x = max(1, int(round(patch_w * (1.0 - overlap))))
    stride_y = max(1, int(round(patch_h * (1.0 - overlap))))
    xs = _axis_anchors(width, patch_w, stride_x)
    ys = _axis_anchors(height, patch_h, stride_y)
    anchors = tuple((x, y) for y in ys for x in xs)
    return PatchGrid(
        patch_w=patch_w,
        patch_h=patch_h,
        overlap=float(overlap),
        stride_x=stride_x,
        stride_y=stride_y,
        anchors=anchors,
        image_dims=(width, height),
        depth_mode=depth_mode or DepthMode.d2(),
    )


@dataclass(frozen=True)
class Patch:
    """One extracted window: anchor (x, y, z) plus data indexed [plane, y, x]."""

    anchor: tuple[int, int, int]
    data: np.ndarray


def _slab_planes(z: int, radius: int, depth: int) -> np.ndarray:
    # edge replication: indices are clipped at the volume boundary
    return np.clip(np.arange(z - radius, z + radius + 1), 0, depth - 1)


def extract(vol, grid: PatchGrid, z: int = 0) -> list[Patch]:
    """Extract one patch per anchor at slice ``z`` (ignored for 3d grids).

    2d patches carry the single plane ``z``; 2.5d patches carry the slab
    ``z-radius .. z+radius`` with edge replication, so the centre plane always
    equals the 2d patch at the same anchor; 3d patches span every plane.
    """
    voxels = vol.voxels if hasattr(vol, "voxels") else np.asarray(vol)
    depth, height, width = voxels.shape
    if (width, height) != grid.image_dims:
        raise ValueError(
            f"grid was planned for image {grid.image_dims}, volume planes are {(width, height)}"
        )
    mode = grid.depth_mode
    if mode.kind == "3d":
        stack = voxels
        z0 = 0
    else:
        if not 0 <= z < depth:
            raise IndexError(f"slice index {z} outside volume depth {depth}")
        if mode.kind == "2d":
            stack = voxels[z : z + 1]
        else:
            stack = voxels[_slab_planes(z, mode.radius, depth)]
        z0 = z
    patches = []
    for x, y in grid.anchors:
        if x < 0 or y < 0 or x + grid.patch_w > width or y + grid.patch_h > height:
            raise RuntimeError(f"grid anchor ({x}, {y}) outside image {grid.image_dims}")
        patches.append(
            Patch(anchor=(x, y, z0), data=stack[:, y : y + grid.patch_h, x : x + grid.patch_w])
        )
    return patches


def stitch(
    patch_probs: list[tuple[tuple[int, int, int], np.ndarray]],
    grid: PatchGrid,
    dims: tuple[int, int, int],
    volume_id: str = "",
) -> ProbVolume:
    """Average per-patch class probabilities into a full probability volume.

    ``patch_probs`` holds (anchor, prediction) pairs where a prediction is
    (4, h, w) for one slice or (4, planes, h, w) for a slice range starting at
    the anchor's z.  Every anchor must belong to ``grid``; every voxel of
    ``dims`` must be covered, else a :class:`CoverageError` names the first
    hole.
    """
    width, height, depth = (int(v) for v in dims)
    known = set(grid.anchors)
    for (x, y, _z), _pred in patch_probs:
        if (x, y) not in known:
            raise CoverageError(f"anchor ({x}, {y}) is not part of the planned grid")

    sums = np.zeros((N_CLASSES, depth, height, width), dtype=np.float32)
    counts = np.zeros((depth, height, width), dtype=np.int32)
    # canonical row-major merge order makes the result permutation-independent
    for (x, y, z), pred in sorted(patch_probs, key=lambda item: (item[0][2], item[0][1], item[0][0])):
        pred = np.asarray(pred)
        if pred.ndim == 3:
            sums[:, z, y : y + pred.shape[1], x : x + pred.shape[2]] += pred
            counts[z, y : y + pred.shape[1], x : x + pred.shape[2]] += 1
        elif pred.ndim == 4:
            nz = pred.shape[1]
            sums[:, z : z + nz, y : y + pred.shape[2], x : x + pred.shape[3]] += pred
            counts[z : z + nz, y : y + pred.shape[2], x : x + pred.shape[3]] += 1
        else:
            raise ValueError(f"prediction at ({x},{y},{z}) has unexpected shape {pred.shape}")

    if counts.min() == 0:
        zz, yy, xx = (int(i) for i in np.argwhere(counts == 0)[0])
        raise CoverageError(f"voxel (x={xx}, y={yy}, z={zz}) is covered by no patch")
    probs = sums / counts[None, :, :, :]
    return ProbVolume(probs=probs, volume_id=volume_id)


def labelize(prob: ProbVolume) -> LabelVolume:
    """Arg-max decision per voxel; ties resolve to the lowest class index."""
    labels = np.argmax(prob.probs, axis=0).astype(np.uint8)
    return LabelVolume(voxels=labels, volume_id=prob.volume_id)


def close_mask(labels: LabelVolume, cls: FluidClass, radius: int) -> LabelVolume:
    """Morphologically close one fluid's mask per B-scan.

    Dilation then erosion with a square structuring element of side
    ``2*radius + 1``.  Cavities the element can bridge are filled with
    ``cls``; existing ``cls`` voxels are never removed (closing is extensive),
    and the operation is idempotent.
    """
    cls = FluidClass(cls)
    if cls == FluidClass.BACKGROUND:
        raise ValueError("closing is defined for fluid classes, not background")
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    structure = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    out = labels.voxels.copy()
    for z in range(out.shape[0]):
        mask = out[z] == int(cls)
        if not mask.any():
            continue
        # pad so the closing matches the infinite-plane definition at borders
        padded = np.pad(mask, radius, mode="constant", constant_values=False)
        closed = ndimage.binary_erosion(
            ndimage.binary_dilation(padded, structure=structure), structure=structure
        )[radius:-radius, radius:-radius]
        out[z][closed & ~mask] = int(cls)
    return LabelVolume(voxels=out, volume_id=labels.volume_id)


def close_all(labels: LabelVolume, radius: int) -> LabelVolume:
    """Close every fluid mask in class order IRF, SRF, PED."""
    for cls in (FluidClass.IRF, FluidClass.SRF, FluidClass.PED):
        labels = close_mask(labels, cls, radius)
    return labels


def _sidecar_paths(path_base) -> tuple[Path, Path]:
    base = Path(path_base)
    return base.with_suffix(".raw"), base.with_suffix(".json")


def save_patches(path_base, patches: list[Patch], grid: PatchGrid, volume_id: str = "") -> None:
    """Spill a patch batch to disk: one raw float32 blob plus a JSON sidecar
    holding the anchors and the grid parameters needed to rebuild it."""
    raw_path, meta_path = _sidecar_paths(path_base)
    if not patches:
        raise ValueError("refusing to spill an empty patch batch")
    shape = patches[0].data.shape
    for p in patches:
        if p.data.shape != shape:
            raise ValueError(f"mixed patch shapes {shape} and {p.data.shape} in one batch")
    stack = np.stack([np.asarray(p.data, dtype=np.float32) for p in patches])
    stack.tofile(raw_path)
    meta = {
        "kind": "patches",
        "volume_id": volume_id,
        "patch_shape": list(shape),
        "anchors": [list(p.anchor) for p in patches],
        "grid": {
            "image_dims": list(grid.image_dims),
            "patch": [grid.patch_w, grid.patch_h],
            "overlap": grid.overlap,
            "depth_mode": {"kind": grid.depth_mode.kind, "radius": grid.depth_mode.radius},
        },
    }
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_patches(path_base) -> tuple[list[Patch], PatchGrid, str]:
    """Read back a spilled patch batch; returns (patches, grid, volume_id)."""
    raw_path, meta_path = _sidecar_paths(path_base)
    meta = json.loads(meta_path.read_text())
    if meta.get("kind") != "patches":
        raise ValueError(f"{meta_path} does not describe a patch batch")
    shape = tuple(meta["patch_shape"])
    anchors = [tuple(a) for a in meta["anchors"]]
    stack = np.fromfile(raw_path, dtype=np.float32)
    expected = len(anchors) * int(np.prod(shape))
    if stack.size != expected:
        raise ValueError(
            f"{raw_path} holds {stack.size} values, sidecar promises {expected}"
        )
    stack = stack.reshape((len(anchors),) + shape)
    g = meta["grid"]
    grid = plan_grid(
        tuple(g["image_dims"]),
        tuple(g["patch"]),
        g["overlap"],
        DepthMode(g["depth_mode"]["kind"], g["depth_mode"].get("radius", 1)),
    )
    patches = [Patch(anchor=a, data=stack[i]) for i, a in enumerate(anchors)]
    return patches, grid, meta.get("volume_id", "")


def save_predictions(path_base, patch_probs: list[tuple[tuple[int, int, int], np.ndarray]]) -> None:
    """Spill per-patch probability predictions next to their anchors."""
    raw_path, meta_path = _sidecar_paths(path_base)
    if not patch_probs:
        raise ValueError("refusing to spill an empty prediction batch")
    shape = np.asarray(patch_probs[0][1]).shape
    for _a, pred in patch_probs:
        if np.asarray(pred).shape != shape:
            raise ValueError(f"mixed prediction shapes {shape} and {np.asarray(pred).shape}")
    stack = np.stack([np.asarray(pred, dtype=np.float32) for _a, pred in patch_probs])
    stack.tofile(raw_path)
    meta = {
        "kind": "predictions",
        "pred_shape": list(shape),
        "anchors": [list(a) for a, _pred in patch_probs],
    }
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_predictions(path_base) -> list[tuple[tuple[int, int, int], np.ndarray]]:
    raw_path, meta_path = _sidecar_paths(path_base)
    meta = json.loads(meta_path.read_text())
    if meta.get("kind") != "predictions":
        raise ValueError(f"{meta_path} does not describe a prediction batch")
    shape = tuple(meta["pred_shape"])
    anchors = [tuple(a) for a in meta["anchors"]]
    stack = np.fromfile(raw_path, dtype=np.float32)
    expected = len(anchors) * int(np.prod(shape))
    if stack.size != expected:
        raise ValueError(
            f"{raw_path} holds {stack.size} values, sidecar promises {expected}"
        )
    stack = stack.reshape((len(anchors),) + shape)
    return [(a, stack[i]) for i, a in enumerate(anchors)]
