"""Run configuration: defaults, flat key=value config files, flag overrides.

The file format is one ``section.key=value`` pair per line (``#`` comments,
blank lines ignored), flat on purpose so resolved configs diff cleanly.
``render_config(cfg)`` emits every resolved setting in sorted order; parsing
that text back yields an identical configuration.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .augment import AugmentConfig
from .backends import TrainingConfig
from .errors import ConfigError
from .patch_engine import DepthMode
from .preprocess import DENOISERS, PreprocessConfig

DATA_ROOT_ENV = "OCTPIPE_DATA_ROOT"

SLICE_POLICY_CHOICES = ("auto", "diseased_only", "all")


@dataclass(frozen=True)
class RunConfig:
    data_root: Path | None = None
    output_dir: Path | None = None
    variant: str = "P"
    depth_mode: str = "2.5d"
    backend: str = "threshold"
    jobs: int = 0  # 0 means "use logical core count"
    patch_size: int = 128
    overlap: float = 0.75
    close_radius: int = 1
    aggregate: str = "macro"
    folds_k: int = 3
    seed: int = 0
    slice_policy: str = "auto"
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)

    @property
    def resolved_jobs(self) -> int:
        return self.jobs if self.jobs > 0 else (os.cpu_count() or 1)

    def parsed_depth_mode(self) -> DepthMode:
        return DepthMode.parse(self.depth_mode)


def _parse_dims2(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise ConfigError(f"expected WIDTHxHEIGHT, got {text!r}")
    return int(parts[0]), int(parts[1])


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1"):
        return True
    if t in ("false", "no", "0"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, str]:
    """Flat ``key=value`` lines into a mapping; malformed lines are rejected."""
    mapping: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{origin}:{lineno}: empty key")
        if key in mapping:
            raise ConfigError(f"{origin}:{lineno}: duplicate key {key!r}")
        mapping[key] = value
    return mapping


def apply_settings(cfg: RunConfig, mapping: dict[str, str]) -> RunConfig:
    """Overlay flat settings onto a configuration; unknown keys are errors."""
    pre = cfg.preprocess
    aug = cfg.augment
    train = cfg.training
    top: dict = {}
    try:
        for key, value in mapping.items():
            if key == "data_root":
                top["data_root"] = Path(value)
            elif key == "output_dir":
                top["output_dir"] = Path(value)
            elif key == "variant":
                top["variant"] = value
            elif key == "depth_mode":
                DepthMode.parse(value)
                top["depth_mode"] = value
            elif key == "backend":
                top["backend"] = value
            elif key == "jobs":
                top["jobs"] = int(value)
            elif key == "grid.patch_size":
                top["patch_size"] = int(value)
            elif key == "grid.overlap":
                top["overlap"] = float(value)
            elif key == "grid.close_radius":
                top["close_radius"] = int(value)
            elif key == "eval.aggregate":
                top["aggregate"] = value
            elif key == "folds.k":
                top["folds_k"] = int(value)
            elif key == "folds.seed":
                top["seed"] = int(value)
            elif key == "slice_policy":
                if value not in SLICE_POLICY_CHOICES:
                    raise ConfigError(
                        f"slice_policy must be one of {SLICE_POLICY_CHOICES}, got {value!r}"
                    )
                top["slice_policy"] = value
            elif key == "preprocess.target_2d":
                pre = replace(pre, target_2d=_parse_dims2(value))
            elif key == "preprocess.target_vol":
                pre = replace(pre, target_vol=_parse_dims2(value))
            elif key == "preprocess.denoiser":
                if value not in DENOISERS:
                    raise ConfigError(f"denoiser must be one of {DENOISERS}, got {value!r}")
                pre = replace(pre, denoiser=value)
            elif key == "preprocess.sigma":
                pre = replace(pre, sigma=float(value))
            elif key == "preprocess.search_radius":
                pre = replace(pre, search_radius=int(value))
            elif key == "preprocess.patch_radius":
                pre = replace(pre, patch_radius=int(value))
            elif key == "preprocess.h":
                pre = replace(pre, h=float(value))
            elif key == "preprocess.normalize":
                pre = replace(pre, normalize=value)
            elif key == "augment.rotation_deg":
                aug = replace(aug, rotation_deg=float(value))
            elif key == "augment.translate_px":
                aug = replace(aug, translate_px=int(value))
            elif key == "augment.copies_per_sample":
                aug = replace(aug, copies_per_sample=int(value))
            elif key == "augment.seed":
                aug = replace(aug, seed=int(value))
            elif key == "training.optimizer":
                train = replace(train, optimizer=value)
            elif key == "training.decay":
                train = replace(train, decay=float(value))
            elif key == "training.lr_start":
                train = replace(train, lr_start=float(value))
            elif key == "training.lr_end":
                train = replace(train, lr_end=float(value))
            elif key == "training.epochs":
                train = replace(train, epochs=int(value))
            elif key == "training.shuffle_each_epoch":
                train = replace(train, shuffle_each_epoch=_parse_bool(value))
            elif key == "training.loss":
                train = replace(train, loss=value)
            else:
                raise ConfigError(f"unknown configuration key {key!r}")
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from exc
    return replace(cfg, preprocess=pre, augment=aug, training=train, **top)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return apply_settings(RunConfig(), parse_config_text(text, origin=str(path)))


def resolve_data_root(cfg: RunConfig) -> RunConfig:
    """Fill data_root from the environment when the config leaves it unset."""
    if cfg.data_root is None and os.environ.get(DATA_ROOT_ENV):
        return replace(cfg, data_root=Path(os.environ[DATA_ROOT_ENV]))
    return cfg


def render_config(cfg: RunConfig) -> str:
    """Every resolved setting, one per line, sorted; parses back identically."""
    pre = cfg.preprocess
    aug = cfg.augment
    train = cfg.training
    settings = {
        "variant": cfg.variant,
        "depth_mode": cfg.depth_mode,
        "backend": cfg.backend,
        "jobs": str(cfg.jobs),
        "grid.patch_size": str(cfg.patch_size),
        "grid.overlap": repr(cfg.overlap),
        "grid.close_radius": str(cfg.close_radius),
        "eval.aggregate": cfg.aggregate,
        "folds.k": str(cfg.folds_k),
        "folds.seed": str(cfg.seed),
        "slice_policy": cfg.slice_policy,
        "preprocess.target_2d": f"{pre.target_2d[0]}x{pre.target_2d[1]}",
        "preprocess.target_vol": f"{pre.target_vol[0]}x{pre.target_vol[1]}",
        "preprocess.denoiser": pre.denoiser,
        "preprocess.sigma": repr(pre.sigma),
        "preprocess.search_radius": str(pre.search_radius),
        "preprocess.patch_radius": str(pre.patch_radius),
        "preprocess.h": repr(pre.h),
        "preprocess.normalize": pre.normalize,
        "augment.rotation_deg": repr(aug.rotation_deg),
        "augment.translate_px": str(aug.translate_px),
        "augment.copies_per_sample": str(aug.copies_per_sample),
        "augment.seed": str(aug.seed),
        "training.optimizer": train.optimizer,
        "training.decay": repr(train.decay),
        "training.lr_start": repr(train.lr_start),
        "training.lr_end": repr(train.lr_end),
        "training.epochs": str(train.epochs),
        "training.shuffle_each_epoch": "true" if train.shuffle_each_epoch else "false",
        "training.loss": train.loss,
    }
    if cfg.data_root is not None:
        settings["data_root"] = str(cfg.data_root)
    if cfg.output_dir is not None:
        settings["output_dir"] = str(cfg.output_dir)
    return "\n".join(f"{key}={settings[key]}" for key in sorted(settings)) + "\n"
