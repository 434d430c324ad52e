"""Rotation/translation augmentation determinism and geometry."""

import numpy as np
import pytest

from octpipe.augment import (
    AugmentConfig,
    augment_pair,
    augment_set,
    rotate,
    translate,
)


def random_sample(shape, seed):
    rng = np.random.default_rng(seed)
    image = rng.random(shape, dtype=np.float32)
    labels = rng.integers(0, 4, size=shape, dtype=np.uint8)
    return image, labels


def test_rotate_zero_is_exact_identity():
    image, labels = random_sample((12, 12), 1)
    out_image, out_labels = rotate((image, labels), 0.0)
    np.testing.assert_array_equal(out_image, image)
    np.testing.assert_array_equal(out_labels, labels)


def test_rotate_90_matches_index_permutation():
    image, labels = random_sample((16, 16), 2)
    out_image, out_labels = rotate((image, labels), 90.0)
    np.testing.assert_allclose(out_image, np.rot90(image, 1), atol=1e-9)
    np.testing.assert_array_equal(out_labels, np.rot90(labels, 1))


def test_rotate_preserves_label_alphabet():
    rng = np.random.default_rng(3)
    labels = rng.choice(np.array([0, 3], dtype=np.uint8), size=(20, 20))
    image = rng.random((20, 20), dtype=np.float32)
    for degrees in (7.0, 33.0, 181.5, -12.0):
        _, out = rotate((image, labels), degrees)
        assert set(np.unique(out)) <= {0, 3}
        assert out.shape == labels.shape


def test_rotate_image_stays_in_range_and_fills_zero():
    image = np.ones((15, 15), dtype=np.float32)
    labels = np.ones((15, 15), dtype=np.uint8)
    out_image, out_labels = rotate((image, labels), 45.0)
    assert out_image.min() >= 0.0 and out_image.max() <= 1.0
    # corners leave the frame under a 45 degree turn and read back as 0
    assert out_image[0, 0] == 0.0
    assert out_labels[0, 0] == 0


def test_rotate_rejects_non_finite_angle():
    sample = random_sample((4, 4), 4)
    with pytest.raises(ValueError):
        rotate(sample, float("nan"))


def test_translate_identity_and_point_move():
    image = np.zeros((32, 32), dtype=np.float32)
    labels = np.zeros((32, 32), dtype=np.uint8)
    image[10, 10] = 1.0
    labels[10, 10] = 2
    same = translate((image, labels), 0, 0)
    np.testing.assert_array_equal(same[0], image)

    out_image, out_labels = translate((image, labels), 3, 4)
    assert out_image[14, 13] == 1.0
    assert out_labels[14, 13] == 2
    assert out_image.sum() == 1.0


def test_translate_round_trip_zeroes_boundary_columns():
    image, labels = random_sample((10, 10), 5)
    there = translate((image, labels), 5, 0)
    back_image, back_labels = translate(there, -5, 0)
    np.testing.assert_array_equal(back_image[:, :5], image[:, :5])
    np.testing.assert_array_equal(back_labels[:, :5], labels[:, :5])
    np.testing.assert_array_equal(back_image[:, 5:], 0)
    np.testing.assert_array_equal(back_labels[:, 5:], 0)


def test_translate_matches_shift_oracle():
    rng = np.random.default_rng(6)
    image, labels = random_sample((9, 11), 7)
    for _ in range(20):
        dx = int(rng.integers(-10, 11))
        dy = int(rng.integers(-8, 9))
        out_image, _ = translate((image, labels), dx, dy)
        expected = np.zeros_like(image)
        for y in range(9):
            for x in range(11):
                sy, sx = y - dy, x - dx
                if 0 <= sy < 9 and 0 <= sx < 11:
                    expected[y, x] = image[sy, sx]
        np.testing.assert_array_equal(out_image, expected)


def test_translate_rejects_full_shift():
    sample = random_sample((8, 8), 8)
    with pytest.raises(ValueError):
        translate(sample, 8, 0)
    with pytest.raises(ValueError):
        translate(sample, 0, -8)


def test_plane_stacks_share_parameters():
    rng = np.random.default_rng(9)
    image = rng.random((3, 14, 14), dtype=np.float32)
    labels = rng.integers(0, 4, size=(3, 14, 14), dtype=np.uint8)
    out_image, out_labels = augment_pair((image, labels), 21.0, 2, -3)
    assert out_image.shape == image.shape
    for z in range(3):
        one_image, one_labels = augment_pair((image[z], labels[z]), 21.0, 2, -3)
        np.testing.assert_array_equal(out_image[z], one_image)
        np.testing.assert_array_equal(out_labels[z], one_labels)


def test_augment_set_counts():
    samples = [random_sample((8, 8), s) for s in range(10)]
    assert len(augment_set(samples, AugmentConfig(copies_per_sample=0))) == 10
    out = augment_set(samples, AugmentConfig(copies_per_sample=2))
    assert len(out) == 30
    # originals ride along untouched, first of each triple
    for i, sample in enumerate(samples):
        np.testing.assert_array_equal(out[3 * i][0], sample[0])
        np.testing.assert_array_equal(out[3 * i][1], sample[1])


def test_augment_set_deterministic_and_seed_sensitive():
    samples = [random_sample((8, 8), s) for s in range(4)]
    cfg = AugmentConfig(copies_per_sample=2, seed=123)
    first = augment_set(samples, cfg)
    second = augment_set(samples, cfg)
    assert len(first) == len(second)
    for (ia, la), (ib, lb) in zip(first, second):
        np.testing.assert_array_equal(ia, ib)
        np.testing.assert_array_equal(la, lb)

    other = augment_set(samples, AugmentConfig(copies_per_sample=2, seed=124))
    assert any(
        not np.array_equal(a[0], b[0]) for a, b in zip(first, other)
    )


def test_augment_set_per_sample_streams_independent_of_position():
    samples = [random_sample((8, 8), s) for s in range(3)]
    cfg = AugmentConfig(copies_per_sample=1, seed=5)
    full = augment_set(samples, cfg)
    # copies of sample 0 do not change when later samples are dropped
    alone = augment_set(samples[:1], cfg)
    np.testing.assert_array_equal(full[1][0], alone[1][0])
    np.testing.assert_array_equal(full[1][1], alone[1][1])


def test_augment_config_validation():
    with pytest.raises(ValueError):
        AugmentConfig(rotation_deg=-1.0)
    with pytest.raises(ValueError):
        AugmentConfig(translate_px=-2)
    with pytest.raises(ValueError):
        AugmentConfig(copies_per_sample=-1)
