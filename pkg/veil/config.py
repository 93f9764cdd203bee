"""
Veil
Configurations.

All knobs of the data generator, the augmentation pipeline, the network, the
adversarial training loop and a whole run. Every class can be displayed with
display() to check all attributes, and a RunConfig round-trips through one JSON file.

Licensed under the MIT License (see LICENSE for details)
"""

import json
import math
import os
from dataclasses import dataclass, field, fields, asdict
from typing import Optional, Tuple

from .errors import ConfigError

SEED_ENV = 'VEIL_SEED'

# names accepted by SyntheticConfig.preset() and TrainConfig.preset()
PRESETS = ('default', 'jaffe', 'yale')


class _Section(object):
    """Shared helpers of the configuration dataclasses.
    """

    def display(self):
        """Print configuration values.
        """
        print("> {}:".format(type(self).__name__))
        for key, value in asdict(self).items():
            print("{:30} {}".format(key, value))
        print("")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data, section=None):
        """Build from a (possibly partial) dictionary. Missing keys keep their defaults.
        """
        section = section or cls.__name__
        if not isinstance(data, dict):
            raise ConfigError("{}: expected an object, got {!r}".format(section, data))
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError("{}: unknown field(s) {}".format(section, ', '.join(unknown)))
        kwargs = {}
        for key, value in data.items():
            nested = _NESTED.get((cls.__name__, key))
            if nested is not None and value is not None:
                value = nested.from_dict(value, "{}.{}".format(section, key))
            elif isinstance(value, list):
                value = tuple(value)
            kwargs[key] = value
        config = cls(**kwargs)
        config.validate()
        return config

    def validate(self):
        pass


def _require(condition, section, message):
    if not condition:
        raise ConfigError("{}.{}".format(section, message))


def _check_range(section, name, value):
    _require(len(value) == 2 and all(math.isfinite(v) for v in value) and value[0] <= value[1],
             section, "{} must be a finite (low, high) pair, got {}".format(name, value))


@dataclass
class ModelConfig(_Section):
    # =========================================================================
    # Input
    # =========================================================================
    # square grayscale input, pixels in [0,1]
    input_size: int = 48

    # =========================================================================
    # Convolutional base (3 conv layers, kernel 3, stride 1, each + ReLU + 2x2 pool)
    # =========================================================================
    conv_channels: Tuple[int, int, int] = (8, 16, 32)

    # =========================================================================
    # Heads (3 fully-connected layers: feature -> h1 -> h2 -> classes)
    # =========================================================================
    fc_hidden: Tuple[int, int] = (128, 64)

    seed: int = 0

    def validate(self):
        section = 'model'
        _require(len(self.conv_channels) == 3, section, "conv_channels needs exactly 3 widths")
        _require(len(self.fc_hidden) == 2, section, "fc_hidden needs exactly 2 widths")
        _require(all(int(c) > 0 for c in self.conv_channels), section, "conv_channels must be positive")
        _require(all(int(h) > 0 for h in self.fc_hidden), section, "fc_hidden must be positive")
        _require(int(self.input_size) > 0, section, "input_size must be positive")


@dataclass
class EarlyStopConfig(_Section):
    # stop after `patience` consecutive refits at or below chance + epsilon
    patience: int = 3
    epsilon: float = 0.05

    def validate(self):
        _require(int(self.patience) > 0, 'train.early_stop', "patience must be positive")
        _require(0.0 <= self.epsilon <= 1.0, 'train.early_stop', "epsilon must lie in [0,1]")


@dataclass
class TrainConfig(_Section):
    # =========================================================================
    # Objective weights
    # =========================================================================
    # weight of the identity loss in the multi-task initialization (L_e + alpha*L_i)
    alpha: float = 0.5
    # weight of the identity loss in the adversarial phase (L_e - beta*L_i)
    beta: float = 1.0

    # =========================================================================
    # Loop lengths
    # =========================================================================
    # outer iterations of {adversarial phase, identity refit}
    T: int = 20
    epochs_init: int = 30
    epochs_adv: int = 1
    epochs_refit: int = 3
    epochs_probe: int = 30

    # =========================================================================
    # Optimizer (mini-batch SGD with momentum)
    # =========================================================================
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    # the adversarial phase gets a fresh optimizer of its own every outer iteration
    adversarial_learning_rate: float = 0.01
    adversarial_momentum: float = 0.5

    # =========================================================================
    # Adversary
    # =========================================================================
    # 'fresh': identity head is re-initialized before every refit; 'warm': keeps training it
    reinit_policy: str = 'fresh'
    # ceiling of each sample's identity loss in the adversarial objective, in units of
    # log(K_i) (the loss of a uniform guess); None leaves L_e - beta*L_i unbounded below
    identity_loss_cap: Optional[float] = 1.0
    early_stop: Optional[EarlyStopConfig] = None
    # abort when |loss| exceeds this
    divergence_limit: float = 1e6

    # fraction of a fold's training groups held out for validation accuracies
    val_fraction: float = 0.1
    seed: int = 0
    verbose: bool = False

    def validate(self):
        section = 'train'
        _require(math.isfinite(self.alpha) and self.alpha >= 0, section, "alpha must be finite and >= 0")
        _require(math.isfinite(self.beta) and self.beta >= 0, section, "beta must be finite and >= 0")
        _require(int(self.T) >= 0, section, "T must be >= 0")
        for name in ('epochs_init', 'epochs_adv', 'epochs_refit', 'epochs_probe', 'batch_size'):
            _require(int(getattr(self, name)) > 0, section, "{} must be positive".format(name))
        _require(self.learning_rate >= 0, section, "learning_rate must be >= 0")
        _require(0.0 <= self.momentum < 1.0, section, "momentum must lie in [0,1)")
        _require(self.adversarial_learning_rate >= 0, section, "adversarial_learning_rate must be >= 0")
        _require(0.0 <= self.adversarial_momentum < 1.0, section, "adversarial_momentum must lie in [0,1)")
        _require(self.identity_loss_cap is None or (math.isfinite(self.identity_loss_cap) and self.identity_loss_cap > 0),
                 section, "identity_loss_cap must be positive and finite, or null")
        _require(self.reinit_policy in ('fresh', 'warm'), section, "reinit_policy must be 'fresh' or 'warm'")
        _require(0.0 < self.val_fraction < 1.0, section, "val_fraction must lie in (0,1)")
        _require(self.divergence_limit > 0, section, "divergence_limit must be positive")
        if self.early_stop is not None:
            self.early_stop.validate()

    @classmethod
    def preset(cls, name, **overrides):
        """Loop length of the two reference corpora: 50 outer iterations for the
        7-emotion corpus, 20 for the 4-emotion one.
        """
        if name not in PRESETS:
            raise ConfigError("train: unknown preset {!r}".format(name))
        values = {'T': 50} if name == 'jaffe' else {'T': 20}
        values.update(overrides)
        return cls(**values)


@dataclass
class SyntheticConfig(_Section):
    # =========================================================================
    # Corpus shape
    # =========================================================================
    name: str = 'synthetic'
    num_identities: int = 10
    num_emotions: int = 4
    # repetitions per (identity, emotion) cell
    images_per_cell: int = 30
    image_size: int = 48

    # =========================================================================
    # Identity factors (fractions of the image size), fixed per identity
    # =========================================================================
    face_width: Tuple[float, float] = (0.28, 0.40)   # semi-axis x
    face_height: Tuple[float, float] = (0.36, 0.46)  # semi-axis y
    eye_spacing: Tuple[float, float] = (0.14, 0.26)  # distance between eye centres
    eye_height: Tuple[float, float] = (0.34, 0.44)   # eye row, from the top
    nose_length: Tuple[float, float] = (0.06, 0.16)

    # =========================================================================
    # Emotion factors, fixed per emotion
    # =========================================================================
    mouth_curvature: Tuple[float, float] = (-1.0, 1.0)  # frown .. smile
    mouth_openness: Tuple[float, float] = (0.0, 1.0)
    eyebrow_angle: Tuple[float, float] = (-25.0, 25.0)  # degrees

    # =========================================================================
    # Per-image jitter
    # =========================================================================
    # gaussian std of every factor, as a fraction of its range
    factor_jitter: float = 0.04
    # gaussian std of the whole-face translation, in pixels
    shift_jitter: float = 1.0

    seed: int = 0

    IDENTITY_FACTORS = ('face_width', 'face_height', 'eye_spacing', 'eye_height', 'nose_length')
    EMOTION_FACTORS = ('mouth_curvature', 'mouth_openness', 'eyebrow_angle')

    def validate(self):
        section = 'synthetic'
        _require(int(self.num_identities) >= 1, section, "num_identities must be >= 1")
        _require(int(self.num_emotions) >= 1, section, "num_emotions must be >= 1")
        _require(int(self.images_per_cell) >= 1, section, "images_per_cell must be >= 1")
        _require(int(self.image_size) >= 8, section, "image_size must be >= 8")
        for name in self.IDENTITY_FACTORS + self.EMOTION_FACTORS:
            _check_range(section, name, getattr(self, name))
        _require(self.factor_jitter >= 0 and self.shift_jitter >= 0, section, "jitter must be >= 0")

    @classmethod
    def preset(cls, name, **overrides):
        """Corpus shapes standing in for the two reference databases:
        'jaffe' is 10 identities x 7 emotions, 'yale' is 15 identities x 4 emotions.
        """
        shapes = {
            'default': dict(num_identities=10, num_emotions=4, images_per_cell=30),
            'jaffe': dict(name='jaffe', num_identities=10, num_emotions=7, images_per_cell=3),
            'yale': dict(name='yale', num_identities=15, num_emotions=4, images_per_cell=1),
        }
        if name not in shapes:
            raise ConfigError("synthetic: unknown preset {!r}".format(name))
        values = dict(shapes[name])
        values.update(overrides)
        config = cls(**values)
        config.validate()
        return config


@dataclass
class AugmentConfig(_Section):
    # uniform rotation in [-rotation_degrees, +rotation_degrees]
    rotation_degrees: float = 12.0
    flip_probability: float = 0.5
    noise_sigma: float = 0.03
    # corpus size after expansion (originals included)
    target_size: int = 3000

    def validate(self):
        section = 'augment'
        _require(self.rotation_degrees >= 0, section, "rotation_degrees must be >= 0")
        _require(0.0 <= self.flip_probability <= 1.0, section, "flip_probability must lie in [0,1]")
        _require(self.noise_sigma >= 0, section, "noise_sigma must be >= 0")
        _require(int(self.target_size) >= 0, section, "target_size must be >= 0")


@dataclass
class RunConfig(_Section):
    # either a dataset directory written by `veil generate`, or None to generate inline
    dataset_path: Optional[str] = None
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    folds: int = 10
    output_dir: str = 'runs/default'
    # one full protocol per seed; reports take the median over seeds
    seeds: Tuple[int, ...] = (0,)
    workers: int = 1
    tensorboard: bool = True

    def validate(self):
        _require(int(self.folds) >= 2, 'run', "folds must be >= 2")
        _require(len(self.seeds) >= 1, 'run', "seeds must not be empty")
        _require(int(self.workers) >= 1, 'run', "workers must be >= 1")
        for section in (self.synthetic, self.augment, self.model, self.train):
            section.validate()
        _require(self.synthetic.image_size == self.model.input_size, 'run',
                 "synthetic.image_size ({}) must equal model.input_size ({})".format(
                     self.synthetic.image_size, self.model.input_size))

    def to_dict(self):
        """Resolved settings without the console-only ones (verbosity, worker count),
        which never change what a run writes.
        """
        data = asdict(self)
        data.pop('workers')
        data['train'].pop('verbose')
        return data

    @classmethod
    def load(cls, path, environ=None):
        """Parse a JSON run configuration and apply the VEIL_SEED override.
        """
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except (OSError, ValueError) as e:
            raise ConfigError("cannot read config {}: {}".format(path, e))
        config = cls.from_dict(data, 'run')
        return config.with_env_seed(environ)

    def with_env_seed(self, environ=None):
        environ = os.environ if environ is None else environ
        value = environ.get(SEED_ENV)
        if value is None:
            return self
        try:
            seed = int(value)
        except ValueError:
            raise ConfigError("{} must be an integer, got {!r}".format(SEED_ENV, value))
        self.seeds = (seed,)
        self.synthetic.seed = seed
        self.model.seed = seed
        self.train.seed = seed
        return self

    def dump(self, path):
        """Write the fully resolved configuration (the config echo).
        """
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write('\n')


_NESTED = {
    ('TrainConfig', 'early_stop'): EarlyStopConfig,
    ('RunConfig', 'synthetic'): SyntheticConfig,
    ('RunConfig', 'augment'): AugmentConfig,
    ('RunConfig', 'model'): ModelConfig,
    ('RunConfig', 'train'): TrainConfig,
}
