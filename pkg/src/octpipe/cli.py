"""Command-line front end: reproducible runs over MetaImage volume sets.

Every artifact-writing command drops ``run_config.txt`` (the fully resolved
configuration) into the directory it writes, so any output can be traced back
to the exact settings that produced it.  Exit codes: 0 success, 1 pipeline
failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import patch_engine
from .backends import parse_backend_descriptor
from .config import (
    RunConfig,
    SLICE_POLICY_CHOICES,
    apply_settings,
    load_config,
    render_config,
    resolve_data_root,
)
from .errors import ConfigError, ValidationError
from .eval_harness.folds import make_folds, save_folds
from .eval_harness.phantom import random_phantom
from .eval_harness.report import load_report_csv, render_report
from .eval_harness.runner import (
    ExperimentSpec,
    image_path,
    label_path,
    load_inventory,
    run_experiment,
)
from .preprocess import (
    DENOISERS,
    default_slice_policy,
    filter_slices,
    preprocess_volume,
    resize_volume,
)
from .volume_io import read_labels, read_volume, vendor_of, write_volume

_OVERRIDE_KEYS = (
    ("data_root", "data_root"),
    ("output_dir", "output_dir"),
    ("backend", "backend"),
    ("variant", "variant"),
    ("depth_mode", "depth_mode"),
    ("jobs", "jobs"),
    ("patch_size", "grid.patch_size"),
    ("overlap", "grid.overlap"),
    ("close_radius", "grid.close_radius"),
    ("folds", "folds.k"),
    ("seed", "folds.seed"),
    ("aggregate", "eval.aggregate"),
    ("denoiser", "preprocess.denoiser"),
    ("slice_policy", "slice_policy"),
)


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", type=Path, help="flat key=value configuration file")
    sub.add_argument("--data-root", dest="data_root")
    sub.add_argument("--output-dir", dest="output_dir")
    sub.add_argument("--backend", help="threshold | oracle | external:DIR")
    sub.add_argument("--variant", choices=("F", "P"))
    sub.add_argument("--depth-mode", dest="depth_mode", help="2d | 2.5d | 3d")
    sub.add_argument("--jobs", type=int)
    sub.add_argument("--patch-size", dest="patch_size", type=int)
    sub.add_argument("--overlap", type=float)
    sub.add_argument("--close-radius", dest="close_radius", type=int)
    sub.add_argument("--folds", type=int, help="number of cross-validation folds")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--aggregate", choices=("macro", "micro"))
    sub.add_argument("--denoiser", choices=DENOISERS)
    sub.add_argument("--slice-policy", dest="slice_policy", choices=SLICE_POLICY_CHOICES)


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    for attr, key in _OVERRIDE_KEYS:
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = str(value)
    cfg = apply_settings(cfg, overrides)
    return resolve_data_root(cfg)


def _require(cfg: RunConfig, *fields: str) -> None:
    for name in fields:
        if getattr(cfg, name) is None:
            flag = "--" + name.replace("_", "-")
            raise ConfigError(f"{flag} is required for this command (or set it in the config)")


def _write_config_copy(cfg: RunConfig, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "run_config.txt").write_text(render_config(cfg))


def _experiment_spec(cfg: RunConfig) -> ExperimentSpec:
    return ExperimentSpec(
        data_root=cfg.data_root,
        preprocess=cfg.preprocess,
        depth_mode=cfg.parsed_depth_mode(),
        variant=cfg.variant,
        patch=(cfg.patch_size, cfg.patch_size),
        overlap=cfg.overlap,
        close_radius=cfg.close_radius,
        aggregate=cfg.aggregate,
        folds_k=cfg.folds_k,
        seed=cfg.seed,
        jobs=cfg.resolved_jobs,
    )


def cmd_info(args: argparse.Namespace, cfg: RunConfig) -> int:
    for path in args.paths:
        vol = read_volume(path)
        vendor = vendor_of(vol.dims)
        name = vendor.value if vendor else "Unknown"
        w, h, d = vol.dims
        print(f"{vol.volume_id}: {name} {w}x{h}x{d}")
    return 0


def cmd_preprocess(args: argparse.Namespace, cfg: RunConfig) -> int:
    _require(cfg, "data_root", "output_dir")
    is_2d = cfg.parsed_depth_mode().kind == "2d"
    spec_target = cfg.preprocess.target_2d if is_2d else cfg.preprocess.target_vol
    out_dir = cfg.output_dir / "volumes"
    inventory = load_inventory(cfg.data_root)
    for vendor in sorted(inventory):
        for volume_id in sorted(inventory[vendor]):
            vol = read_volume(image_path(cfg.data_root, volume_id))
            processed = preprocess_volume(vol, cfg.preprocess, spec_target)
            out_dir.mkdir(parents=True, exist_ok=True)
            write_volume(processed, out_dir / f"{volume_id}.mhd")
            lpath = label_path(cfg.data_root, volume_id)
            if lpath.exists():
                labels = read_labels(lpath)
                if labels.dims[:2] != spec_target:
                    labels = resize_volume(labels, spec_target)
                write_volume(labels, out_dir / f"{volume_id}_labels.mhd")
            print(f"preprocessed {volume_id} -> {spec_target[0]}x{spec_target[1]}")
    _write_config_copy(cfg, out_dir)
    return 0


def cmd_folds(args: argparse.Namespace, cfg: RunConfig) -> int:
    _require(cfg, "data_root", "output_dir")
    inventory = load_inventory(cfg.data_root)
    plan = make_folds(inventory, cfg.folds_k, cfg.seed)
    out_dir = cfg.output_dir / "folds"
    out_dir.mkdir(parents=True, exist_ok=True)
    save_folds(plan, out_dir / "folds.json")
    _write_config_copy(cfg, out_dir)
    for fold in range(plan.k):
        sizes = ", ".join(
            f"{vendor}: {len(ids)}" for vendor, ids in sorted(plan.test_sets[fold].items())
        )
        print(f"fold {fold} test volumes: {sizes}")
    return 0


def cmd_patchify(args: argparse.Namespace, cfg: RunConfig) -> int:
    _require(cfg, "data_root", "output_dir")
    mode = cfg.parsed_depth_mode()
    native = read_volume(image_path(cfg.data_root, args.volume))
    native_dims = native.dims
    target = cfg.preprocess.target_2d if mode.kind == "2d" else cfg.preprocess.target_vol
    vol = preprocess_volume(native, cfg.preprocess, target)
    grid = patch_engine.plan_grid(vol.dims[:2], (cfg.patch_size, cfg.patch_size), cfg.overlap, mode)
    out_dir = cfg.output_dir / "patches"
    out_dir.mkdir(parents=True, exist_ok=True)

    if mode.kind == "3d":
        patches = patch_engine.extract(vol, grid)
        base = out_dir / f"{args.volume}_3d"
        patch_engine.save_patches(base, patches, grid, volume_id=args.volume)
        print(f"wrote {len(patches)} patches to {base}.raw")
    else:
        if args.slice is not None:
            slices = [args.slice]
        else:
            lpath = label_path(cfg.data_root, args.volume)
            policy = cfg.slice_policy
            if policy == "auto":
                policy = default_slice_policy(vendor_of(native_dims))
            if policy == "diseased_only" and lpath.exists():
                labels = read_labels(lpath)
                if labels.dims[:2] != target:
                    labels = resize_volume(labels, target)
                slices = filter_slices(labels, "diseased_only")
            else:
                slices = list(range(vol.dims[2]))
        for z in slices:
            patches = patch_engine.extract(vol, grid, z)
            base = out_dir / f"{args.volume}_z{z:04d}"
            patch_engine.save_patches(base, patches, grid, volume_id=args.volume)
        print(f"wrote {len(grid.anchors)} patches for each of {len(slices)} slices")
    _write_config_copy(cfg, out_dir)
    return 0


def cmd_stitch(args: argparse.Namespace, cfg: RunConfig) -> int:
    _require(cfg, "output_dir")
    pairs = []
    for base in args.predictions:
        pairs.extend(patch_engine.load_predictions(Path(base)))
    dims = _parse_dims3(args.dims)
    mode = cfg.parsed_depth_mode()
    grid = patch_engine.plan_grid(dims[:2], (cfg.patch_size, cfg.patch_size), cfg.overlap, mode)
    prob = patch_engine.stitch(pairs, grid, dims, volume_id=args.volume)
    prob.validate()
    out_dir = cfg.output_dir / "predictions"
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / f"{args.volume}_prob.mhd"
    write_volume(prob, out_path)
    _write_config_copy(cfg, out_dir)
    print(f"stitched {len(pairs)} patch predictions into {out_path}")
    return 0


def cmd_evaluate(args: argparse.Namespace, cfg: RunConfig) -> int:
    _require(cfg, "data_root", "output_dir")
    try:
        parse_backend_descriptor(cfg.backend)  # usage-check the descriptor up front
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    spec = _experiment_spec(cfg)
    inventory = load_inventory(cfg.data_root)
    plan = make_folds(inventory, cfg.folds_k, cfg.seed)
    folds = [args.fold] if args.fold is not None else list(range(plan.k))
    entries = []
    for fold in folds:
        entries.extend(run_experiment(spec, cfg.backend, fold, plan=plan))
    table, csv_text = render_report(entries, training=cfg.training)
    out_dir = cfg.output_dir / "reports"
    out_dir.mkdir(parents=True, exist_ok=True)
    tag = f"{spec.depth_mode.kind}_{cfg.variant}"
    (out_dir / f"evaluate_{tag}.csv").write_text(csv_text)
    (out_dir / f"evaluate_{tag}.md").write_text(table)
    _write_config_copy(cfg, out_dir)
    print(table)
    return 0


def cmd_report(args: argparse.Namespace, cfg: RunConfig) -> int:
    _require(cfg, "output_dir")
    entries = []
    for path in args.csvs:
        entries.extend(load_report_csv(path))
    table, csv_text = render_report(entries, training=cfg.training)
    out_dir = cfg.output_dir / "reports"
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.csv").write_text(csv_text)
    (out_dir / "report.md").write_text(table)
    _write_config_copy(cfg, out_dir)
    print(table)
    return 0


def cmd_synth(args: argparse.Namespace, cfg: RunConfig) -> int:
    _require(cfg, "data_root")
    dims = _parse_dims3(args.dims)
    vendors = [v.strip() for v in args.vendors.split(",") if v.strip()]
    if not vendors:
        raise ConfigError("--vendors must name at least one vendor")
    if args.n_per_vendor < 1:
        raise ConfigError("--n-per-vendor must be >= 1")
    root = cfg.data_root
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    inventory: dict[str, list[str]] = {}
    counter = 0
    for vendor in vendors:
        ids = []
        for i in range(args.n_per_vendor):
            volume_id = f"{vendor.lower()}_{i:02d}"
            vol, labels = random_phantom(
                dims,
                seed=cfg.seed + counter,
                n_blobs=args.n_blobs,
                close_radius=max(1, cfg.close_radius),
                volume_id=volume_id,
            )
            write_volume(vol, root / "images" / f"{volume_id}.mhd")
            write_volume(labels, root / "labels" / f"{volume_id}.mhd")
            ids.append(volume_id)
            counter += 1
        inventory[vendor] = ids
    (root / "inventory.json").write_text(json.dumps(inventory, indent=2, sort_keys=True) + "\n")
    _write_config_copy(cfg, root)
    total = sum(len(v) for v in inventory.values())
    print(f"wrote {total} phantom volumes under {root}")
    return 0


def _parse_dims3(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise ConfigError(f"expected WIDTHxHEIGHTxDEPTH, got {text!r}")
    return int(parts[0]), int(parts[1]), int(parts[2])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="octpipe",
        description="Patch-based vs. full-image segmentation pipeline toolkit for OCT volumes",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("info", help="print vendor and geometry of volumes")
    p.add_argument("paths", nargs="+", type=Path)
    _add_common(p)
    p.set_defaults(handler=cmd_info)

    p = subs.add_parser("preprocess", help="resize/denoise every inventory volume")
    _add_common(p)
    p.set_defaults(handler=cmd_preprocess)

    p = subs.add_parser("folds", help="plan cross-validation folds")
    _add_common(p)
    p.set_defaults(handler=cmd_folds)

    p = subs.add_parser("patchify", help="extract overlapping patches to disk")
    p.add_argument("--volume", required=True, help="volume id to patchify")
    p.add_argument("--slice", type=int, help="single slice index (default: policy-selected)")
    _add_common(p)
    p.set_defaults(handler=cmd_patchify)

    p = subs.add_parser("stitch", help="stitch spilled patch predictions into a volume")
    p.add_argument("--volume", required=True, help="volume id for the output")
    p.add_argument("--dims", required=True, help="target dims as WxHxD")
    p.add_argument("--predictions", nargs="+", required=True, help="prediction spill base paths")
    _add_common(p)
    p.set_defaults(handler=cmd_stitch)

    p = subs.add_parser("evaluate", help="run the pipeline over cross-validation folds")
    p.add_argument("--fold", type=int, help="evaluate a single fold (default: all)")
    _add_common(p)
    p.set_defaults(handler=cmd_evaluate)

    p = subs.add_parser("report", help="merge evaluate CSVs into one table")
    p.add_argument("csvs", nargs="+", type=Path)
    _add_common(p)
    p.set_defaults(handler=cmd_report)

    p = subs.add_parser("synth", help="write a synthetic phantom dataset")
    p.add_argument("--dims", default="128x128x8", help="volume dims as WxHxD")
    p.add_argument("--n-per-vendor", type=int, default=3)
    p.add_argument("--vendors", default="Cirrus,Spectralis,Topcon")
    p.add_argument("--n-blobs", type=int, default=6)
    _add_common(p)
    p.set_defaults(handler=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config_from_args(args)
        return args.handler(args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
