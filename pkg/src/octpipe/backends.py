"""Pluggable per-patch predictors plus class-weighting and loss utilities.

A backend maps extracted patches to per-class probability maps: (4, h, w) for
single-slice modes, (4, planes, h, w) for full-depth patches.  Three kinds are
built in: intensity thresholding, a truth-reading oracle, and a directory of
precomputed probability volumes produced by an outside model.  Network
architectures themselves are out of scope; they appear only as descriptor
strings on externally produced predictions.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .errors import ValidationError
from .patch_engine import DepthMode, Patch
from .volume_io import N_CLASSES, LabelVolume, ProbVolume, read_prob

PredictFn = Callable[[list[Patch], DepthMode, str], list[np.ndarray]]

BACKEND_KINDS = ("threshold", "oracle", "external")

VARIANTS = ("F", "P")

DEFAULT_BANDS = (0.25, 0.5, 0.75)

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class Backend:
    """A named predictor. ``predict(patches, mode, volume_id)`` returns one
    class-probability array per patch, aligned with the input order."""

    kind: str
    descriptor: str
    predict: PredictFn
    variant: str = "P"
    needs_truth: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    def with_variant(self, variant: str) -> "Backend":
        return Backend(
            kind=self.kind,
            descriptor=self.descriptor,
            predict=self.predict,
            variant=variant,
            needs_truth=self.needs_truth,
        )


@dataclass(frozen=True)
class TrainingConfig:
    """Optimizer metadata carried along into reports; no trainer lives here."""

    optimizer: str = "adam"
    decay: float = 0.95
    lr_start: float = 1e-3
    lr_end: float = 1e-4
    epochs: int = 100
    shuffle_each_epoch: bool = True
    loss: str = "weighted-cross-entropy"

    def __post_init__(self):
        if not self.lr_start >= self.lr_end > 0:
            raise ValidationError(
                f"need lr_start >= lr_end > 0, got {self.lr_start} and {self.lr_end}"
            )
        if self.epochs <= 0:
            raise ValidationError(f"epochs must be positive, got {self.epochs}")

    def summary(self) -> str:
        shuffled = "shuffled" if self.shuffle_each_epoch else "unshuffled"
        return (
            f"{self.optimizer}, decay {self.decay}, lr {self.lr_start:g} to {self.lr_end:g}, "
            f"{self.epochs} epochs ({shuffled}), loss {self.loss}"
        )


def parse_backend_descriptor(text: str) -> tuple[str, str]:
    """Split ``"external:/some/dir"`` style descriptors into (kind, argument)."""
    kind, _, arg = text.partition(":")
    kind = kind.strip().lower()
    if kind not in BACKEND_KINDS:
        raise ValidationError(f"unknown backend {text!r}, expected one of {BACKEND_KINDS}")
    if kind == "external" and not arg:
        raise ValidationError("external backend needs a directory, e.g. external:/path/to/probs")
    if kind != "external" and arg:
        raise ValidationError(f"backend {kind!r} takes no argument, got {text!r}")
    return kind, arg


def one_hot(labels: np.ndarray) -> np.ndarray:
    """Class-first one-hot encoding of a label array, float32."""
    labels = np.asarray(labels)
    out = np.zeros((N_CLASSES,) + labels.shape, dtype=np.float32)
    for cls in range(N_CLASSES):
        out[cls] = labels == cls
    return out


def classify_bands(
    intensity: np.ndarray, bands: tuple[float, float, float] = DEFAULT_BANDS
) -> np.ndarray:
    """Label voxels by intensity band: <=b1 -> 0, <=b2 -> 1, <=b3 -> 2, else 3."""
    b1, b2, b3 = bands
    if not 0.0 <= b1 < b2 < b3 <= 1.0:
        raise ValidationError(f"band cut points must ascend within [0, 1], got {bands}")
    intensity = np.asarray(intensity)
    out = np.full(intensity.shape, 3, dtype=np.uint8)
    out[intensity <= b3] = 2
    out[intensity <= b2] = 1
    out[intensity <= b1] = 0
    return out


def _center_plane(data: np.ndarray) -> np.ndarray:
    return data[data.shape[0] // 2]


def threshold_backend(bands: tuple[float, float, float] = DEFAULT_BANDS) -> Backend:
    """Classify each voxel of the patch itself by intensity band."""
    classify_bands(np.zeros(1), bands)  # validate the cut points up front

    def predict(patches: list[Patch], mode: DepthMode, volume_id: str) -> list[np.ndarray]:
        out = []
        for patch in patches:
            if mode.kind == "3d":
                out.append(one_hot(classify_bands(patch.data, bands)))
            else:
                out.append(one_hot(classify_bands(_center_plane(patch.data), bands)))
        return out

    return Backend(kind="threshold", descriptor="threshold", predict=predict)


def oracle_backend(truth: LabelVolume) -> Backend:
    """Emit the true labels, one-hot, for the requested windows."""

    voxels = truth.voxels
    depth, height, width = voxels.shape

    def predict(patches: list[Patch], mode: DepthMode, volume_id: str) -> list[np.ndarray]:
        out = []
        for patch in patches:
            x, y, z = patch.anchor
            h = patch.data.shape[1]
            w = patch.data.shape[2]
            if x < 0 or y < 0 or x + w > width or y + h > height or z >= depth:
                raise IndexError(
                    f"patch at ({x}, {y}, {z}) falls outside truth dims "
                    f"{(width, height, depth)}"
                )
            if mode.kind == "3d":
                window = voxels[:, y : y + h, x : x + w]
            else:
                window = voxels[z, y : y + h, x : x + w]
            out.append(one_hot(window))
        return out

    return Backend(kind="oracle", descriptor="oracle", predict=predict, needs_truth=True)


def external_backend(prob_dir: str | Path, descriptor: str | None = None) -> Backend:
    """Crop windows out of precomputed ``<volume_id>_prob.mhd`` files.

    Loaded volumes are validated once and cached; the cache is guarded so
    threaded prediction does not load the same file twice.
    """
    prob_dir = Path(prob_dir)
    cache: dict[str, ProbVolume] = {}
    lock = threading.Lock()

    def load(volume_id: str) -> ProbVolume:
        with lock:
            if volume_id not in cache:
                path = prob_dir / f"{volume_id}_prob.mhd"
                if not path.exists():
                    raise FileNotFoundError(
                        f"no probability volume for '{volume_id}' at {path}"
                    )
                prob = read_prob(path)
                prob.validate()
                cache[volume_id] = prob
            return cache[volume_id]

    def predict(patches: list[Patch], mode: DepthMode, volume_id: str) -> list[np.ndarray]:
        probs = load(volume_id).probs
        out = []
        for patch in patches:
            x, y, z = patch.anchor
            h = patch.data.shape[1]
            w = patch.data.shape[2]
            if mode.kind == "3d":
                out.append(probs[:, :, y : y + h, x : x + w])
            else:
                out.append(probs[:, z, y : y + h, x : x + w])
        return out

    return Backend(
        kind="external",
        descriptor=descriptor or f"external:{prob_dir}",
        predict=predict,
    )


def validate_probs(pred: np.ndarray, tol: float = 1e-5) -> None:
    """Reject predictions that are not distributions over the 4 classes."""
    pred = np.asarray(pred)
    if pred.ndim not in (3, 4) or pred.shape[0] != N_CLASSES:
        raise ValidationError(f"prediction must be (4, ...) class-first, got shape {pred.shape}")
    if np.min(pred) < -tol:
        raise ValidationError(f"prediction has negative probability {float(np.min(pred))}")
    sums = pred.sum(axis=0)
    err = float(np.max(np.abs(sums - 1.0)))
    if err > tol:
        raise ValidationError(f"class probabilities must sum to 1 +/- {tol}, worst deviation {err}")


def class_weights(train_labels: Iterable[LabelVolume] | LabelVolume | np.ndarray) -> np.ndarray:
    """Median-frequency balancing weights over the 4 classes.

    Frequencies are pooled over every supplied label volume, so the result
    depends only on voxel composition, not on how the voxels are divided
    into volumes.  Each present class gets median(present frequencies) /
    own frequency; absent classes get the largest present weight so a stray
    prediction of them is penalised at least as hard as any real class.
    """
    if isinstance(train_labels, (LabelVolume, np.ndarray)):
        train_labels = [train_labels]
    counts = np.zeros(N_CLASSES, dtype=np.int64)
    for item in train_labels:
        voxels = item.voxels if isinstance(item, LabelVolume) else np.asarray(item)
        counts += np.bincount(voxels.reshape(-1).astype(np.int64), minlength=N_CLASSES)[:N_CLASSES]
    total = counts.sum()
    if total == 0:
        raise ValidationError("cannot derive class weights from an empty label set")
    freqs = counts.astype(np.float64) / total
    present = counts > 0
    ref = float(np.median(freqs[present]))
    weights = np.zeros(N_CLASSES, dtype=np.float64)
    weights[present] = ref / freqs[present]
    if not present.all():
        weights[~present] = float(weights[present].max())
    return weights


def weighted_cross_entropy(
    probs: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray,
) -> float:
    """Mean of ``-w[true] * log(p[true])`` over all voxels.

    ``probs`` is class-first (4, ...), ``labels`` matches the trailing shape.
    Probabilities are clamped to [1e-7, 1] before the log.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    weights = np.asarray(weights, dtype=np.float64)
    if probs.shape[0] != N_CLASSES or probs.shape[1:] != labels.shape:
        raise ValidationError(
            f"probs shape {probs.shape} does not match labels shape {labels.shape}"
        )
    if weights.shape != (N_CLASSES,):
        raise ValidationError(f"need one weight per class, got shape {weights.shape}")
    flat_labels = labels.reshape(-1).astype(np.int64)
    flat_probs = probs.reshape(N_CLASSES, -1)
    p_true = flat_probs[flat_labels, np.arange(flat_labels.size)]
    p_true = np.clip(p_true, PROB_CLAMP, 1.0)
    return float(np.mean(-weights[flat_labels] * np.log(p_true)))
