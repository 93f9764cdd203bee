import numpy as np
import pytest

from veil.config import AugmentConfig, SyntheticConfig
from veil.datasets import (ImageBatch, LabeledImage, augment, deal_groups, expand_corpus, flip_image,
                           generate_synthetic, load_dataset, load_folds, make_group_folds, nearest_centroid_accuracy,
                           rotate_image, save_dataset, save_folds)
from veil.errors import ConfigError, DatasetError

IDENTITY_AUGMENT = AugmentConfig(rotation_degrees=0.0, flip_probability=0.0, noise_sigma=0.0)


# =============================================================================
# Generator
# =============================================================================

class TestGenerator:

    def test_counts_and_balance(self):
        config = SyntheticConfig(num_identities=4, num_emotions=3, images_per_cell=5, image_size=24)
        images = generate_synthetic(config)
        assert len(images) == 60
        identities = np.bincount([im.identity for im in images])
        emotions = np.bincount([im.emotion for im in images])
        np.testing.assert_array_equal(identities, np.full(4, 15))
        np.testing.assert_array_equal(emotions, np.full(3, 20))
        assert [im.group_id for im in images] == list(range(60))

    def test_pixel_range(self, tiny_images):
        for im in tiny_images:
            assert im.pixels.shape == (24, 24)
            assert im.pixels.min() >= 0.0 and im.pixels.max() <= 1.0

    def test_deterministic(self, tiny_synthetic_config, tiny_images):
        again = generate_synthetic(tiny_synthetic_config)
        assert all(np.array_equal(a.pixels, b.pixels) for a, b in zip(tiny_images, again))

    def test_zero_jitter_cells_are_identical(self):
        config = SyntheticConfig(num_identities=2, num_emotions=2, images_per_cell=3, image_size=24,
                                 factor_jitter=0.0, shift_jitter=0.0)
        images = generate_synthetic(config)
        for cell in range(4):
            first = images[3 * cell].pixels
            for im in images[3 * cell + 1:3 * cell + 3]:
                np.testing.assert_array_equal(im.pixels, first)

    def test_faces_are_symmetric(self):
        config = SyntheticConfig(num_identities=2, num_emotions=2, images_per_cell=2, image_size=48,
                                 shift_jitter=0.0)
        for im in generate_synthetic(config):
            assert np.mean(np.abs(im.pixels - flip_image(im.pixels))) < 1e-3

    def test_colliding_identities_rejected(self):
        config = SyntheticConfig(num_identities=2, num_emotions=2, images_per_cell=1, image_size=24,
                                 face_width=(0.3, 0.3), face_height=(0.4, 0.4), eye_spacing=(0.2, 0.2),
                                 eye_height=(0.4, 0.4), nose_length=(0.1, 0.1))
        with pytest.raises(ConfigError):
            generate_synthetic(config)

    def test_single_identity_with_fixed_factors(self):
        config = SyntheticConfig(num_identities=1, num_emotions=2, images_per_cell=1, image_size=24,
                                 face_width=(0.3, 0.3))
        assert len(generate_synthetic(config)) == 2

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            generate_synthetic(SyntheticConfig(images_per_cell=0))

    def test_identity_is_learnable(self):
        config = SyntheticConfig(num_identities=5, num_emotions=3, images_per_cell=6, image_size=48, seed=3)
        batch = ImageBatch.from_images(generate_synthetic(config))
        train, test = batch.subset(np.arange(0, len(batch), 2)), batch.subset(np.arange(1, len(batch), 2))
        assert nearest_centroid_accuracy(train, test, 'identity') > 0.8


# =============================================================================
# Augmentation
# =============================================================================

class TestAugment:

    def test_identity_config(self, tiny_images, rng):
        out = augment(tiny_images[0], IDENTITY_AUGMENT, rng)
        np.testing.assert_array_equal(out.pixels, tiny_images[0].pixels)

    def test_labels_preserved(self, tiny_images, rng):
        for im in tiny_images[:6]:
            out = augment(im, AugmentConfig(), rng)
            assert (out.emotion, out.identity, out.group_id) == (im.emotion, im.identity, im.group_id)
            assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0
            assert out.pixels.shape == im.pixels.shape

    def test_forced_flip_twice(self, tiny_images, rng):
        config = AugmentConfig(rotation_degrees=0.0, flip_probability=1.0, noise_sigma=0.0)
        once = augment(tiny_images[1], config, rng)
        twice = augment(once, config, rng)
        np.testing.assert_array_equal(once.pixels, tiny_images[1].pixels[:, ::-1])
        np.testing.assert_array_equal(twice.pixels, tiny_images[1].pixels)

    def test_half_turn_of_a_disk(self):
        y, x = np.mgrid[0:24, 0:24]
        disk = (np.hypot(y - 11.5, x - 11.5) <= 7.0).astype(float)
        np.testing.assert_allclose(rotate_image(disk, 180.0), disk, atol=1e-6)

    def test_rotation_fills_corners_with_gray(self):
        turned = rotate_image(np.zeros((24, 24)), 45.0)
        assert abs(turned[0, 0] - 0.5) < 1e-9
        assert turned[12, 12] == 0.0

    def test_expand_corpus(self, tiny_images):
        config = AugmentConfig(target_size=50)
        corpus = expand_corpus(tiny_images, config, seed=3)
        assert len(corpus) == 50
        assert corpus[:24] == tiny_images
        for j, im in enumerate(corpus[24:]):
            assert im.group_id == tiny_images[j % 24].group_id
        again = expand_corpus(tiny_images, config, seed=3)
        assert all(np.array_equal(a.pixels, b.pixels) for a, b in zip(corpus, again))

    def test_expand_to_same_size(self, tiny_images):
        assert expand_corpus(tiny_images, AugmentConfig(target_size=24), seed=0) == tiny_images

    def test_expand_errors(self, tiny_images):
        with pytest.raises(DatasetError):
            expand_corpus([], AugmentConfig(target_size=10), seed=0)
        with pytest.raises(ConfigError):
            expand_corpus(tiny_images, AugmentConfig(target_size=10), seed=0)


# =============================================================================
# Folds
# =============================================================================

def grid(identities, emotions, per_cell):
    """Per-group label arrays of a balanced corpus, one sample per group.
    """
    identity = np.repeat(np.arange(identities), emotions * per_cell)
    emotion = np.tile(np.repeat(np.arange(emotions), per_cell), identities)
    return np.arange(len(identity)), identity, emotion


class TestFolds:

    @pytest.mark.parametrize('seed', range(100))
    def test_partition(self, seed):
        group, identity, emotion = grid(5, 3, 4)
        plan = deal_groups(group, identity, emotion, 10, seed)
        flat = sorted(g for fold in plan.folds for g in fold)
        assert flat == list(range(60))
        for fold in range(plan.k):
            train, test = plan.split(group, fold)
            assert not set(group[train]) & set(group[test])
            assert len(train) + len(test) == 60

    def test_stratified_fold_sizes(self):
        group, identity, emotion = grid(10, 4, 30)
        plan = deal_groups(group, identity, emotion, 10, seed=0)
        assert plan.stratification == 'identity_emotion'
        for fold in plan.folds:
            cells = np.bincount(identity[fold] * 4 + emotion[fold], minlength=40)
            np.testing.assert_array_equal(cells, np.full(40, 3))

    def test_stratification_fallbacks(self):
        assert deal_groups(*grid(10, 7, 3), 10, seed=0).stratification == 'identity'
        assert deal_groups(*grid(1, 4, 5), 10, seed=0).stratification == 'none'

    def test_small_identity_strata_spread_over_folds(self):
        group, identity, emotion = grid(15, 4, 1)
        plan = deal_groups(group, identity, emotion, 10, seed=0)
        assert plan.stratification == 'identity'
        assert sorted(g for fold in plan.folds for g in fold) == sorted(np.unique(group).tolist())
        for fold in plan.folds:
            assert len(fold) == 6
            assert np.bincount(identity[fold], minlength=15).max() == 1

    def test_augmented_copies_follow_their_group(self, tiny_images):
        corpus = expand_corpus(tiny_images, AugmentConfig(target_size=60), seed=0)
        plan = make_group_folds(corpus, k=4, seed=1)
        groups = np.array([im.group_id for im in corpus])
        for fold in range(4):
            mask = plan.test_mask(groups, fold)
            for g in np.unique(groups):
                assert mask[groups == g].all() or not mask[groups == g].any()

    def test_degenerate_k(self, tiny_images):
        with pytest.raises(ConfigError):
            make_group_folds(tiny_images, k=1)
        with pytest.raises(DatasetError):
            make_group_folds(tiny_images, k=25)

    def test_same_seed_same_plan(self, tiny_images):
        assert make_group_folds(tiny_images, 4, seed=9).folds == make_group_folds(tiny_images, 4, seed=9).folds

    def test_save_load(self, tmp_path, tiny_images):
        plan = make_group_folds(tiny_images, 3, seed=2)
        save_folds(plan, str(tmp_path / 'folds.json'))
        loaded = load_folds(str(tmp_path / 'folds.json'))
        assert loaded.k == 3 and loaded.folds == plan.folds

    def test_duplicate_group_rejected(self, tmp_path):
        (tmp_path / 'folds.json').write_text('[[1, 2], [2, 3]]\n')
        with pytest.raises(DatasetError):
            load_folds(str(tmp_path / 'folds.json'))


# =============================================================================
# PGM + manifest
# =============================================================================

class TestDiskFormat:

    def test_round_trip(self, tmp_path, tiny_images):
        save_dataset(tiny_images, str(tmp_path))
        loaded = load_dataset(str(tmp_path), num_identities=3, num_emotions=2)
        assert len(loaded) == len(tiny_images)
        for a, b in zip(tiny_images, loaded):
            assert (a.identity, a.emotion, a.group_id) == (b.identity, b.emotion, b.group_id)
            assert np.max(np.abs(a.pixels - b.pixels)) <= 1.0 / 510 + 1e-12

    def test_layout(self, tmp_path, tiny_images):
        save_dataset(tiny_images[:2], str(tmp_path))
        with open(tmp_path / 'manifest.csv', 'rb') as f:
            lines = f.read().split(b'\n')
        assert lines[0] == b'filename,identity,emotion,group_id'
        assert lines[1] == b'images/00000.pgm,0,0,0'
        with open(tmp_path / 'images' / '00000.pgm', 'rb') as f:
            assert f.read(2) == b'P5'

    def test_out_of_range_label(self, tmp_path, tiny_images):
        save_dataset(tiny_images, str(tmp_path))
        with pytest.raises(DatasetError, match='identity'):
            load_dataset(str(tmp_path), num_identities=2)

    def test_negative_label(self, tmp_path, tiny_images):
        save_dataset(tiny_images[:1], str(tmp_path))
        (tmp_path / 'manifest.csv').write_text('filename,identity,emotion,group_id\nimages/00000.pgm,-1,0,0\n')
        with pytest.raises(DatasetError, match='manifest.csv:2'):
            load_dataset(str(tmp_path))

    def test_short_row(self, tmp_path, tiny_images):
        save_dataset(tiny_images[:1], str(tmp_path))
        (tmp_path / 'manifest.csv').write_text('filename,identity,emotion,group_id\nimages/00000.pgm,0,0\n')
        with pytest.raises(DatasetError, match='manifest.csv:2'):
            load_dataset(str(tmp_path))

    def test_malformed_image(self, tmp_path, tiny_images):
        save_dataset(tiny_images[:1], str(tmp_path))
        (tmp_path / 'images' / '00000.pgm').write_bytes(b'not an image')
        with pytest.raises(DatasetError, match='00000.pgm'):
            load_dataset(str(tmp_path))

    def test_folds_survive_round_trip(self, tmp_path, tiny_images):
        save_dataset(tiny_images, str(tmp_path))
        loaded = load_dataset(str(tmp_path))
        assert make_group_folds(loaded, 4, seed=5).folds == make_group_folds(tiny_images, 4, seed=5).folds

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DatasetError):
            load_dataset(str(tmp_path))


def test_image_batch(tiny_images):
    batch = ImageBatch.from_images(tiny_images)
    assert batch.x.shape == (24, 1, 24, 24)
    assert len(batch.subset([0, 5])) == 2
    with pytest.raises(ValueError):
        ImageBatch.from_images([])
    with pytest.raises(ValueError):
        batch.labels('age')


def test_labeled_image_fields():
    im = LabeledImage(np.zeros((2, 2)), emotion=1, identity=2, group_id=3)
    assert (im.emotion, im.identity, im.group_id) == (1, 2, 3)
