"""Directional checks of the whole protocol on a reduced synthetic corpus: 5 identities
x 3 emotions, expanded to 450 images, fold 0 of 3, median over three seeds.
"""
import statistics

import numpy as np
import pytest

from veil.config import AugmentConfig, ModelConfig, RunConfig, SyntheticConfig, TrainConfig
from veil.datasets import ImageBatch, expand_corpus, generate_synthetic, make_group_folds
from veil.eval import METRICS, evaluate_fold, fold_context
from veil.model import build_hybrid, extract_features, head_accuracy, set_frozen
from veil.train import adversarial_phase, holdout_split, identity_refit_phase, multitask_init

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2)


@pytest.fixture(scope='module')
def small_run():
    config = RunConfig(
        synthetic=SyntheticConfig(num_identities=5, num_emotions=3, images_per_cell=10, seed=0),
        augment=AugmentConfig(target_size=450),
        model=ModelConfig(),
        train=TrainConfig(T=10, epochs_init=15, epochs_adv=2, epochs_refit=3, epochs_probe=15),
        folds=3, seeds=SEEDS, tensorboard=False)
    images = expand_corpus(generate_synthetic(config.synthetic), config.augment, seed=0)
    return config, images


@pytest.fixture(scope='module')
def fold_results(small_run):
    config, images = small_run
    corpus = ImageBatch.from_images(images)
    plan = make_group_folds(images, config.folds, seed=0)
    return [evaluate_fold(fold_context(corpus, plan, 0, config, seed)) for seed in SEEDS]


@pytest.fixture(scope='module')
def medians(fold_results):
    return {m: statistics.median(metrics[m] for metrics, _ in fold_results) for m in METRICS}


def warm_started(config, images, seed):
    """Hybrid model after the multi-task warm start, with its training split.
    """
    batch = ImageBatch.from_images(images)
    split = holdout_split(batch, config.train.val_fraction, seed=seed)
    model = build_hybrid(config.model, config.synthetic.num_emotions, config.synthetic.num_identities, rng_seed=seed)
    train_config = TrainConfig(epochs_init=config.train.epochs_init, seed=seed)
    multitask_init(model, split, train_config)
    return model, split, train_config


def test_accuracies_are_fractions(fold_results):
    for metrics, _ in fold_results:
        assert set(metrics) == set(METRICS)
        assert all(0.0 <= v <= 1.0 for v in metrics.values())


def test_baselines_learn(medians):
    assert medians['Face'] > 0.5
    assert medians['Emotion'] > 0.5


def test_emotion_base_leaks_identity(medians):
    chance = 1.0 / 5
    assert medians['Emotion2Face'] >= 3 * chance


def test_hybrid_base_hides_identity_and_keeps_emotion(medians):
    chance = 1.0 / 5
    assert medians['Hybrid2Face'] <= chance + 0.15
    assert medians['Hybrid2Face'] <= 0.5 * medians['Emotion2Face']
    assert medians['Hybrid2Emotion'] >= medians['Emotion'] - 0.10


def test_refit_identity_accuracy_degrades(fold_results, small_run):
    config, _ = small_run
    for _, trace in fold_results:
        assert trace.column('t') == list(range(1, config.train.T + 1))
        assert np.all(np.isfinite(trace.column('L_e'))) and np.all(np.isfinite(trace.column('L_i')))
    first = statistics.median(trace.records[0].acc_i_refit_val for _, trace in fold_results)
    last = statistics.median(trace.records[-1].acc_i_refit_val for _, trace in fold_results)
    assert last < first


def test_adversarial_phase_fools_the_frozen_head(small_run):
    config, images = small_run
    before, after = [], []
    for seed in SEEDS:
        model, split, train_config = warm_started(config, images, seed)
        before.append(head_accuracy(model.identity_head, extract_features(model.base, split.train.x),
                                    split.train.identity))
        set_frozen(model, 'identity_head', True)
        adversarial_phase(model, split, train_config, t=1)
        after.append(head_accuracy(model.identity_head, extract_features(model.base, split.train.x),
                                   split.train.identity))
    assert statistics.median(after) < statistics.median(before)


def test_fresh_head_recovers_identity_from_warm_base(small_run):
    config, images = small_run
    accuracies = []
    for seed in SEEDS:
        model, split, train_config = warm_started(config, images, seed)
        set_frozen(model, 'base', True)
        set_frozen(model, 'emotion_head', True)
        accuracies.append(identity_refit_phase(model, split, train_config, t=1))
    assert statistics.median(accuracies) > 2 * (1.0 / 5)
