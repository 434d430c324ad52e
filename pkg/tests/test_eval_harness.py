"""Scoring, fold planning, phantoms, report rendering, and the runner."""

import numpy as np
import pytest

from octpipe.backends import TrainingConfig, one_hot, threshold_backend
from octpipe.errors import StageError, ValidationError
from octpipe.eval_harness import (
    BlobSpec,
    ConfusionCounts,
    ExperimentSpec,
    FoldPlan,
    ReportEntry,
    closing_stable,
    confusion,
    dice,
    dice_volume,
    entry_sort_key,
    evaluate_volume,
    format_cell,
    load_folds,
    load_inventory,
    load_report_csv,
    make_folds,
    parse_report_csv,
    random_phantom,
    render_csv,
    render_report,
    render_table,
    run_experiment,
    save_folds,
    synth_phantom,
)
from octpipe.eval_harness.runner import label_path
from octpipe.patch_engine import DepthMode, close_all, labelize
from octpipe.preprocess import PreprocessConfig
from octpipe.volume_io import FLUIDS, FluidClass, LabelVolume, ProbVolume, write_volume


# ---------------------------------------------------------------- metrics


def label_cube(values):
    return LabelVolume(voxels=np.asarray(values, dtype=np.uint8), volume_id="m")


def test_confusion_perfect_agreement():
    voxels = np.zeros((1, 10, 10), dtype=np.uint8)
    voxels.reshape(-1)[:40] = 1
    same = label_cube(voxels)
    counts = confusion(same, same, FluidClass.IRF)
    assert (counts.tp, counts.fp, counts.fn, counts.tn) == (40, 0, 0, 60)


def test_confusion_total_miss():
    truth = np.zeros((1, 10, 10), dtype=np.uint8)
    truth.reshape(-1)[:12] = 2
    counts = confusion(label_cube(np.zeros((1, 10, 10))), label_cube(truth), FluidClass.SRF)
    assert (counts.tp, counts.fp, counts.fn, counts.tn) == (0, 0, 12, 88)


def test_confusion_matches_exhaustive_tally():
    rng = np.random.default_rng(51)
    pred = label_cube(rng.integers(0, 4, size=(4, 16, 16)))
    truth = label_cube(rng.integers(0, 4, size=(4, 16, 16)))
    for cls in FLUIDS:
        tp = fp = fn = tn = 0
        for z in range(4):
            for y in range(16):
                for x in range(16):
                    p = pred.voxels[z, y, x] == cls
                    t = truth.voxels[z, y, x] == cls
                    if p and t:
                        tp += 1
                    elif p:
                        fp += 1
                    elif t:
                        fn += 1
                    else:
                        tn += 1
        counts = confusion(pred, truth, cls)
        assert (counts.tp, counts.fp, counts.fn, counts.tn) == (tp, fp, fn, tn)
        assert counts.total == 4 * 16 * 16


def test_confusion_rejects_dim_mismatch():
    with pytest.raises(ValueError):
        confusion(label_cube(np.zeros((1, 4, 4))), label_cube(np.zeros((1, 4, 5))),
                  FluidClass.IRF)


def test_confusion_counts_add():
    a = ConfusionCounts(1, 2, 3, 4)
    b = ConfusionCounts(10, 20, 30, 40)
    merged = a + b
    assert (merged.tp, merged.fp, merged.fn, merged.tn) == (11, 22, 33, 44)


def test_dice_arithmetic_and_convention():
    assert dice(ConfusionCounts(30, 10, 10, 0)) == 0.75
    assert dice(ConfusionCounts(0, 0, 0, 100)) == 1.0
    assert dice(ConfusionCounts(0, 5, 0, 95)) == 0.0


def test_dice_symmetric_and_bounded():
    rng = np.random.default_rng(53)
    for _ in range(50):
        pred = label_cube(rng.integers(0, 4, size=(2, 8, 8)))
        truth = label_cube(rng.integers(0, 4, size=(2, 8, 8)))
        for cls in FLUIDS:
            ab = dice(confusion(pred, truth, cls))
            ba = dice(confusion(truth, pred, cls))
            assert ab == ba
            assert 0.0 <= ab <= 1.0


def test_dice_volume_identity():
    rng = np.random.default_rng(55)
    labels = label_cube(rng.integers(0, 4, size=(2, 12, 12)))
    scores = dice_volume(labels, labels)
    assert set(scores) == set(FLUIDS)
    assert all(v == 1.0 for v in scores.values())


# ---------------------------------------------------------------- folds


def table_inventory():
    return {
        "Cirrus": [f"c{i:02d}" for i in range(24)],
        "Spectralis": [f"s{i:02d}" for i in range(24)],
        "Topcon": [f"t{i:02d}" for i in range(22)],
    }


def test_make_folds_published_counts():
    plan = make_folds(table_inventory(), 3, seed=0)
    cirrus = [len(fold["Cirrus"]) for fold in plan.test_sets]
    topcon = [len(fold["Topcon"]) for fold in plan.test_sets]
    assert cirrus == [8, 8, 8]
    assert topcon == [8, 8, 6]
    # the short Topcon fold leaves 16 training volumes from every vendor
    sizes = {
        vendor: sum(1 for vid in plan.train_ids(2) if vid.startswith(vendor[0].lower()))
        for vendor in ("Cirrus", "Spectralis", "Topcon")
    }
    assert sizes == {"Cirrus": 16, "Spectralis": 16, "Topcon": 16}


def test_make_folds_partition_invariants():
    inventory = table_inventory()
    everything = sorted(v for ids in inventory.values() for v in ids)
    for seed in range(10):
        plan = make_folds(inventory, 3, seed=seed)
        combined = []
        for fold in range(3):
            test = plan.test_ids(fold)
            train = plan.train_ids(fold)
            assert not set(test) & set(train)
            assert sorted(set(test) | set(train)) == everything
            combined.extend(test)
        assert sorted(combined) == everything


def test_make_folds_deterministic_and_seed_sensitive():
    inventory = table_inventory()
    assert make_folds(inventory, 3, 7) == make_folds(inventory, 3, 7)
    assert make_folds(inventory, 3, 7) != make_folds(inventory, 3, 8)


def test_make_folds_vendor_streams_are_independent():
    base = table_inventory()
    plan_all = make_folds(base, 3, seed=4)
    plan_two = make_folds({k: base[k] for k in ("Cirrus", "Topcon")}, 3, seed=4)
    for fold in range(3):
        assert plan_all.test_sets[fold]["Cirrus"] == plan_two.test_sets[fold]["Cirrus"]
        assert plan_all.test_sets[fold]["Topcon"] == plan_two.test_sets[fold]["Topcon"]


def test_make_folds_errors():
    with pytest.raises(ValidationError):
        make_folds(table_inventory(), 1, 0)
    with pytest.raises(ValidationError):
        make_folds({"Cirrus": ["a", "b"]}, 3, 0)
    with pytest.raises(ValidationError):
        make_folds({"Cirrus": ["a", "b", "c"], "Topcon": ["a", "d", "e"]}, 2, 0)


def test_fold_plan_save_load_round_trip(tmp_path):
    plan = make_folds(table_inventory(), 3, seed=9)
    save_folds(plan, tmp_path / "folds.json")
    assert load_folds(tmp_path / "folds.json") == plan


def test_load_folds_rejects_malformed(tmp_path):
    (tmp_path / "bad.json").write_text('{"k": 3, "seed": 0}')
    with pytest.raises(ValidationError):
        load_folds(tmp_path / "bad.json")


# ---------------------------------------------------------------- phantom


def test_synth_phantom_empty_spec_is_background():
    vol, labels = synth_phantom((64, 64, 4), [], seed=1)
    assert labels.voxels.max() == 0
    assert vol.voxels.min() >= 0.02 and vol.voxels.max() <= 0.22


def test_synth_phantom_ellipsoid_count_matches_oracle():
    blob = BlobSpec(cls=FluidClass.IRF, center=(30, 30, 4), radii=(8, 8, 2))
    _, labels = synth_phantom((64, 64, 9), [blob], seed=2)
    expected = 0
    for z in range(9):
        for y in range(64):
            for x in range(64):
                if ((x - 30) / 8) ** 2 + ((y - 30) / 8) ** 2 + ((z - 4) / 2) ** 2 <= 1.0:
                    expected += 1
    assert int(np.count_nonzero(labels.voxels == 1)) == expected


def test_synth_phantom_deterministic():
    blob = BlobSpec(cls=FluidClass.SRF, center=(20, 20, 2), radii=(5, 5, 1))
    a_vol, a_lab = synth_phantom((64, 64, 5), [blob], seed=3)
    b_vol, b_lab = synth_phantom((64, 64, 5), [blob], seed=3)
    np.testing.assert_array_equal(a_vol.voxels, b_vol.voxels)
    np.testing.assert_array_equal(a_lab.voxels, b_lab.voxels)


def test_synth_phantom_bands_recoverable_by_threshold(small_phantom):
    from octpipe.backends import classify_bands

    vol, labels = small_phantom
    np.testing.assert_array_equal(classify_bands(vol.voxels), labels.voxels)


def test_synth_phantom_rejects_bad_requests():
    with pytest.raises(ValueError):
        synth_phantom((32, 64, 4), [], seed=0)
    with pytest.raises(ValueError):
        synth_phantom(
            (64, 64, 4),
            [BlobSpec(cls=FluidClass.IRF, center=(60, 32, 2), radii=(8, 4, 1))],
            seed=0,
        )
    with pytest.raises(ValueError):
        BlobSpec(cls=FluidClass.BACKGROUND, center=(10, 10, 2), radii=(2, 2, 1))
    with pytest.raises(ValueError):
        BlobSpec(cls=FluidClass.IRF, center=(10, 10, 2), radii=(0, 2, 1))


def test_random_phantom_is_closing_stable(small_phantom):
    _, labels = small_phantom
    assert closing_stable(labels, 2)
    np.testing.assert_array_equal(close_all(labels, 2).voxels, labels.voxels)


# ---------------------------------------------------------------- report


def entry(**kw):
    base = dict(dimension="2D", model="unet", variant="F", vendor="Cirrus",
                fluid="IRF", dice=0.5, fold=0, n_volumes=8)
    base.update(kw)
    return ReportEntry(**base)


def test_format_cell_half_up():
    assert format_cell(0.75) == "0.75"
    assert format_cell(0.745) == "0.75"
    assert format_cell(0.744) == "0.74"
    assert format_cell(2 / 3) == "0.67"
    assert format_cell(0.005) == "0.01"
    assert format_cell(1.0) == "1.00"
    assert format_cell(0.0) == "0.00"


def test_render_table_published_row_position():
    cells = {"IRF": 0.75, "SRF": 0.74, "PED": 0.68}
    entries = [entry(fluid=f, dice=v) for f, v in cells.items()]
    table = render_table(entries)
    lines = table.splitlines()
    assert lines[0] == "| Dimension | Model | Cirrus IRF | Cirrus SRF | Cirrus PED |"
    assert lines[2] == "| 2D | unet_F | 0.75 | 0.74 | 0.68 |"
    assert "Human grader baseline: Dice 0.71." in table


def test_render_table_missing_cells_and_variant_order():
    entries = [
        entry(variant="P", fluid="IRF", dice=0.6),
        entry(variant="F", fluid="IRF", dice=0.5),
        entry(variant="F", vendor="Topcon", fluid="SRF", dice=0.4),
    ]
    table = render_table(entries)
    lines = table.splitlines()
    f_row = next(l for l in lines if "unet_F" in l)
    p_row = next(l for l in lines if "unet_P" in l)
    assert lines.index(f_row) < lines.index(p_row)
    assert "—" in f_row and "—" in p_row


def test_render_table_groups_dimensions_in_order():
    entries = [
        entry(dimension="3D", model="segnet"),
        entry(dimension="2D", model="deeplabv3plus"),
        entry(dimension="2.5D", model="unet"),
    ]
    table = render_table(entries)
    rows = [l for l in table.splitlines() if l.startswith("| 2") or l.startswith("| 3")]
    assert [r.split(" | ")[0].lstrip("| ") for r in rows] == ["2D", "2.5D", "3D"]


def test_render_table_training_metadata_footer():
    table = render_table([entry()], training=TrainingConfig())
    assert "Training metadata:" in table
    assert "adam" in table


def test_csv_round_trip_is_exact_fixed_point():
    rng = np.random.default_rng(57)
    entries = [
        entry(vendor=v, fluid=f, dice=float(rng.random()), fold=k)
        for v in ("Cirrus", "Spectralis", "Topcon")
        for f in ("IRF", "SRF", "PED")
        for k in range(3)
    ]
    text = render_csv(entries)
    parsed = parse_report_csv(text)
    assert [e.dice for e in parsed] == [
        e.dice for e in sorted(entries, key=entry_sort_key)
    ]
    assert render_csv(parsed) == text


def test_csv_header_and_schema(tmp_path):
    text = render_csv([entry()])
    assert text.splitlines()[0] == "dimension,model,variant,vendor,fluid,dice,fold,n_volumes"
    (tmp_path / "r.csv").write_text(text)
    assert load_report_csv(tmp_path / "r.csv") == parse_report_csv(text)
    with pytest.raises(ValidationError):
        parse_report_csv("model,dice\nunet,0.5\n")


def test_report_entry_validation():
    with pytest.raises(ValidationError):
        entry(dice=1.5)
    with pytest.raises(ValidationError):
        entry(variant="X")
    with pytest.raises(ValidationError):
        entry(fluid="CNV")


def test_render_report_returns_both_views():
    table, text = render_report([entry()])
    assert table.startswith("| Dimension")
    assert text.startswith("dimension,")


# ---------------------------------------------------------------- runner


def nat_spec(root, **kw):
    """Spec pinned to the phantom's native resolution so scores stay exact."""
    base = dict(
        data_root=root,
        preprocess=PreprocessConfig(target_2d=(96, 96), target_vol=(96, 96)),
        depth_mode=DepthMode.d25(),
        patch=(32, 32),
        overlap=0.5,
        close_radius=1,
        folds_k=2,
        seed=0,
    )
    base.update(kw)
    return ExperimentSpec(**base)


def test_run_experiment_oracle_all_ones(make_dataset):
    root, inventory, _ = make_dataset()
    spec = nat_spec(root)
    entries = run_experiment(spec, "oracle", fold=0)
    assert len(entries) == len(inventory) * 3
    assert all(e.dice == 1.0 for e in entries)
    assert {e.vendor for e in entries} == set(inventory)
    assert {e.fluid for e in entries} == {"IRF", "SRF", "PED"}
    assert all(e.model == "oracle" for e in entries)


def test_run_experiment_threshold_variants_complete(make_dataset):
    root, inventory, _ = make_dataset()
    rows = {}
    for variant in ("F", "P"):
        entries = run_experiment(nat_spec(root, variant=variant), "threshold", fold=1)
        assert {(e.vendor, e.fluid) for e in entries} == {
            (v, f) for v in inventory for f in ("IRF", "SRF", "PED")
        }
        assert all(e.variant == variant for e in entries)
        rows[variant] = entries
    # band-coded phantom at native resolution: both variants recover the truth
    assert all(e.dice == 1.0 for entries in rows.values() for e in entries)


def test_run_experiment_depth_modes_agree_on_oracle(make_dataset):
    root, _, _ = make_dataset(vendors=("Cirrus",), n_per_vendor=2)
    for mode in (DepthMode.d2(), DepthMode.d25(1), DepthMode.d3()):
        entries = run_experiment(nat_spec(root, depth_mode=mode), "oracle", fold=0)
        assert all(e.dice == 1.0 for e in entries)
        assert all(e.dimension == mode.label for e in entries)


def test_run_experiment_external_matches_standalone_scoring(make_dataset, tmp_path):
    root, inventory, truths = make_dataset(vendors=("Cirrus",), n_per_vendor=2)
    spec = nat_spec(root, close_radius=0)
    plan = make_folds(inventory, 2, spec.seed)

    prob_dir = tmp_path / "probs"
    prob_dir.mkdir()
    rng = np.random.default_rng(61)
    for vid, truth in truths.items():
        noisy = one_hot(truth.voxels) * 0.7 + 0.3 * 0.25
        jitter = rng.random(noisy.shape).astype(np.float32) * 0.2
        raw = noisy + jitter
        probs = raw / raw.sum(axis=0, keepdims=True)
        write_volume(ProbVolume(probs=probs, volume_id=vid), prob_dir / f"{vid}_prob.mhd")

    entries = run_experiment(spec, f"external:{prob_dir}", fold=0, plan=plan)

    from octpipe.volume_io import read_prob

    for vendor, ids in plan.test_sets[0].items():
        per_volume = []
        for vid in sorted(ids):
            prob = read_prob(prob_dir / f"{vid}_prob.mhd")
            per_volume.append(dice_volume(labelize(prob), truths[vid]))
        for cls in FLUIDS:
            expected = float(np.mean([scores[cls] for scores in per_volume]))
            got = next(
                e.dice for e in entries if e.vendor == vendor and e.fluid == cls.name
            )
            assert abs(got - expected) <= 1e-9


def test_run_experiment_micro_vs_macro(make_dataset, tmp_path):
    root, inventory, truths = make_dataset(vendors=("Cirrus",), n_per_vendor=4)
    plan = make_folds(inventory, 2, 0)
    fold = 0
    first, second = sorted(plan.test_sets[fold]["Cirrus"])

    prob_dir = tmp_path / "probs"
    prob_dir.mkdir()
    # first test volume scored perfectly, second predicted all background
    predictions = {}
    for vid, truth in truths.items():
        if vid == second:
            probs = np.zeros((4,) + truth.voxels.shape, dtype=np.float32)
            probs[0] = 1.0
        else:
            probs = one_hot(truth.voxels)
        predictions[vid] = labelize(ProbVolume(probs=probs, volume_id=vid))
        write_volume(ProbVolume(probs=probs, volume_id=vid), prob_dir / f"{vid}_prob.mhd")

    spec_macro = nat_spec(root, close_radius=0, aggregate="macro")
    spec_micro = nat_spec(root, close_radius=0, aggregate="micro")
    macro = run_experiment(spec_macro, f"external:{prob_dir}", fold, plan=plan)
    micro = run_experiment(spec_micro, f"external:{prob_dir}", fold, plan=plan)

    for cls in FLUIDS:
        pooled = confusion(predictions[first], truths[first], cls) + confusion(
            predictions[second], truths[second], cls
        )
        micro_value = next(e.dice for e in micro if e.fluid == cls.name)
        macro_value = next(e.dice for e in macro if e.fluid == cls.name)
        assert abs(micro_value - dice(pooled)) <= 1e-12
        per_volume = [
            dice(confusion(predictions[vid], truths[vid], cls)) for vid in (first, second)
        ]
        assert abs(macro_value - float(np.mean(per_volume))) <= 1e-12
        assert micro_value != macro_value


def test_evaluate_volume_tags_stage_failures(make_dataset):
    root, _, truths = make_dataset(vendors=("Cirrus",), n_per_vendor=2)
    vid = sorted(truths)[0]
    label_path(root, vid).unlink()
    spec = nat_spec(root)
    with pytest.raises(StageError) as err:
        evaluate_volume(vid, None, spec)
    assert err.value.stage == "read_labels"
    assert err.value.volume_id == vid


def test_run_experiment_rejects_bad_fold(make_dataset):
    root, _, _ = make_dataset()
    with pytest.raises(ValidationError):
        run_experiment(nat_spec(root), "oracle", fold=5)


def test_load_inventory_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_inventory(tmp_path)
    (tmp_path / "inventory.json").write_text('["not", "a", "mapping"]')
    with pytest.raises(ValidationError):
        load_inventory(tmp_path)


def test_experiment_spec_validation_and_targets(tmp_path):
    with pytest.raises(ValidationError):
        ExperimentSpec(data_root=tmp_path, variant="Q")
    with pytest.raises(ValidationError):
        ExperimentSpec(data_root=tmp_path, aggregate="median")
    with pytest.raises(ValidationError):
        ExperimentSpec(data_root=tmp_path, jobs=0)
    spec_2d = ExperimentSpec(data_root=tmp_path, depth_mode=DepthMode.d2())
    assert spec_2d.working_target == (572, 572)
    spec_3d = ExperimentSpec(data_root=tmp_path, depth_mode=DepthMode.d3())
    assert spec_3d.working_target == (384, 384)


def test_run_experiment_jobs_invariant(make_dataset):
    root, _, _ = make_dataset(vendors=("Cirrus",), n_per_vendor=2)
    base = run_experiment(nat_spec(root, jobs=1), "threshold", fold=0)
    threaded = run_experiment(nat_spec(root, jobs=4), "threshold", fold=0)
    assert [(e.vendor, e.fluid, e.dice) for e in base] == [
        (e.vendor, e.fluid, e.dice) for e in threaded
    ]
