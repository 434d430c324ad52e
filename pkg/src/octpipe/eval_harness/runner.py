"""Experiment orchestration: fold iteration, per-volume prediction, scoring.

A run walks one fold's test volumes: read, preprocess to the working
resolution, predict (whole image for variant F, overlapping patches for
variant P), stitch, arg-max, close, score against the preprocessed truth.
Slices are fanned out over worker threads; stitching and scoring happen in
canonical order, so results never depend on the worker count.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..backends import (
    Backend,
    external_backend,
    oracle_backend,
    parse_backend_descriptor,
    threshold_backend,
)
from ..errors import StageError, ValidationError
from ..patch_engine import DepthMode, close_all, extract, labelize, plan_grid, stitch
from ..preprocess import PreprocessConfig, preprocess_volume, resize_volume
from ..volume_io import FLUIDS, LabelVolume, OctVolume, ProbVolume, read_labels, read_volume
from .folds import FoldPlan, make_folds
from .metrics import ConfusionCounts, confusion, dice, dice_volume
from .report import ReportEntry

AGGREGATES = ("macro", "micro")


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything run_experiment needs besides the backend and fold index."""

    data_root: Path
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    depth_mode: DepthMode = field(default_factory=DepthMode.d25)
    variant: str = "P"
    patch: tuple[int, int] = (128, 128)
    overlap: float = 0.75
    close_radius: int = 1
    aggregate: str = "macro"
    folds_k: int = 3
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.variant not in ("F", "P"):
            raise ValidationError(f"variant must be F or P, got {self.variant!r}")
        if self.aggregate not in AGGREGATES:
            raise ValidationError(f"aggregate must be one of {AGGREGATES}, got {self.aggregate!r}")
        if self.jobs < 1:
            raise ValidationError(f"jobs must be >= 1, got {self.jobs}")
        if self.close_radius < 0:
            raise ValidationError(f"close_radius must be >= 0, got {self.close_radius}")

    @property
    def working_target(self) -> tuple[int, int]:
        if self.depth_mode.kind == "2d":
            return self.preprocess.target_2d
        return self.preprocess.target_vol


def load_inventory(data_root: str | Path) -> dict[str, list[str]]:
    """Read ``inventory.json``: a mapping of vendor name to volume id list."""
    path = Path(data_root) / "inventory.json"
    if not path.exists():
        raise FileNotFoundError(f"no inventory.json under {data_root}")
    raw = json.loads(path.read_text())
    if not isinstance(raw, dict) or not all(
        isinstance(k, str) and isinstance(v, list) for k, v in raw.items()
    ):
        raise ValidationError(f"{path} must map vendor names to volume id lists")
    return {vendor: [str(v) for v in ids] for vendor, ids in raw.items()}


def image_path(data_root: str | Path, volume_id: str) -> Path:
    return Path(data_root) / "images" / f"{volume_id}.mhd"


def label_path(data_root: str | Path, volume_id: str) -> Path:
    return Path(data_root) / "labels" / f"{volume_id}.mhd"


def _stage(stage: str, volume_id: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, volume_id, exc) from exc


def preprocess_pair(
    vol: OctVolume, labels: LabelVolume, cfg: PreprocessConfig, target: tuple[int, int]
) -> tuple[OctVolume, LabelVolume]:
    """Bring an image and its labels to the working resolution together."""
    out_vol = preprocess_volume(vol, cfg, target)
    out_labels = labels if labels.dims[:2] == tuple(target) else resize_volume(labels, target)
    return out_vol, out_labels


def _chunk(items: list, n: int) -> list[list]:
    n = max(1, min(n, len(items)))
    size = (len(items) + n - 1) // n
    return [items[i : i + size] for i in range(0, len(items), size)]


def predict_volume(vol: OctVolume, backend: Backend, spec: ExperimentSpec) -> ProbVolume:
    """Predict a whole volume through the patch pipeline and stitch.

    Variant P tiles each plane with the configured overlapping grid; variant F
    degenerates to a single image-sized patch.  Work is distributed over
    ``spec.jobs`` threads, then merged canonically.
    """
    width, height, depth = vol.dims
    mode = spec.depth_mode
    if spec.variant == "F":
        grid = plan_grid((width, height), (width, height), 0.0, mode)
    else:
        grid = plan_grid((width, height), spec.patch, spec.overlap, mode)

    pairs: list[tuple[tuple[int, int, int], np.ndarray]] = []
    if mode.kind == "3d":
        patches = extract(vol, grid)
        with ThreadPoolExecutor(max_workers=spec.jobs) as pool:
            chunks = _chunk(patches, spec.jobs)
            results = list(
                pool.map(lambda ch: backend.predict(ch, mode, vol.volume_id), chunks)
            )
        for chunk, preds in zip(chunks, results):
            pairs.extend((p.anchor, pred) for p, pred in zip(chunk, preds))
    else:

        def work(z: int):
            patches = extract(vol, grid, z)
            preds = backend.predict(patches, mode, vol.volume_id)
            return [(p.anchor, pred) for p, pred in zip(patches, preds)]

        with ThreadPoolExecutor(max_workers=spec.jobs) as pool:
            for chunk in pool.map(work, range(depth)):
                pairs.extend(chunk)
    return stitch(pairs, grid, (width, height, depth), volume_id=vol.volume_id)


def segment_volume(
    vol: OctVolume, backend: Backend, spec: ExperimentSpec
) -> tuple[ProbVolume, LabelVolume]:
    """predict -> stitch -> argmax -> per-fluid closing."""
    prob = _stage("predict", vol.volume_id, predict_volume, vol, backend, spec)
    pred = _stage("labelize", vol.volume_id, labelize, prob)
    if spec.close_radius > 0:
        pred = _stage("close", vol.volume_id, close_all, pred, spec.close_radius)
    return prob, pred


def _resolve_backend(backend: Backend | str, spec: ExperimentSpec) -> tuple[Backend | None, str]:
    """Returns (backend or None when truth-bound per volume, descriptor)."""
    if isinstance(backend, Backend):
        if backend.needs_truth:
            return None, backend.descriptor
        return backend.with_variant(spec.variant), backend.descriptor
    kind, arg = parse_backend_descriptor(backend)
    if kind == "threshold":
        return threshold_backend().with_variant(spec.variant), "threshold"
    if kind == "external":
        bk = external_backend(arg)
        return bk.with_variant(spec.variant), bk.descriptor
    return None, "oracle"


def evaluate_volume(
    volume_id: str,
    backend: Backend | None,
    spec: ExperimentSpec,
) -> tuple[dict, dict]:
    """Score one volume; returns (per-fluid dice, per-fluid confusion counts)."""
    vol = _stage("read_volume", volume_id, read_volume, image_path(spec.data_root, volume_id))
    truth = _stage("read_labels", volume_id, read_labels, label_path(spec.data_root, volume_id))
    vol, truth = _stage(
        "preprocess", volume_id, preprocess_pair, vol, truth, spec.preprocess, spec.working_target
    )
    bound = backend if backend is not None else oracle_backend(truth).with_variant(spec.variant)
    _prob, pred = segment_volume(vol, bound, spec)
    scores = _stage("score", volume_id, dice_volume, pred, truth)
    counts = {cls: confusion(pred, truth, cls) for cls in FLUIDS}
    return scores, counts


def run_experiment(
    spec: ExperimentSpec,
    backend: Backend | str,
    fold: int,
    plan: FoldPlan | None = None,
) -> list[ReportEntry]:
    """Evaluate one fold's test volumes; one report row per (vendor, fluid).

    Per-vendor scores aggregate across the fold's test volumes by macro
    average (mean of per-volume Dice) or micro pooling (Dice of summed
    confusion counts) per ``spec.aggregate``.
    """
    if plan is None:
        inventory = load_inventory(spec.data_root)
        plan = make_folds(inventory, spec.folds_k, spec.seed)
    if not 0 <= fold < plan.k:
        raise ValidationError(f"fold {fold} outside plan with k={plan.k}")
    resolved, descriptor = _resolve_backend(backend, spec)

    entries: list[ReportEntry] = []
    fold_sets = plan.test_sets[fold]
    for vendor in sorted(fold_sets):
        ids = sorted(fold_sets[vendor])
        per_volume: list[dict] = []
        pooled: dict = {cls: ConfusionCounts(0, 0, 0, 0) for cls in FLUIDS}
        for volume_id in ids:
            scores, counts = evaluate_volume(volume_id, resolved, spec)
            per_volume.append(scores)
            for cls in FLUIDS:
                pooled[cls] = pooled[cls] + counts[cls]
        for cls in FLUIDS:
            if spec.aggregate == "macro":
                value = float(np.mean([scores[cls] for scores in per_volume]))
            else:
                value = dice(pooled[cls])
            entries.append(
                ReportEntry(
                    dimension=spec.depth_mode.label,
                    model=descriptor,
                    variant=spec.variant,
                    vendor=vendor,
                    fluid=cls.name,
                    dice=value,
                    fold=fold,
                    n_volumes=len(ids),
                )
            )
    return entries
