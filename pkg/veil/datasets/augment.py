"""
Veil
Data augmentation: random rotation, horizontal flip and additive Gaussian noise.

Licensed under the MIT License (see LICENSE for details)
"""

import numpy as np
from skimage.transform import rotate

from ..errors import ConfigError, DatasetError
from .synthetic import LabeledImage, BACKGROUND


def rotate_image(pixels, degrees):
    """Counter-clockwise rotation about the image centre, bilinear, cropped to the
    original size, uncovered corners filled with mid-gray.
    """
    if degrees == 0:
        return pixels.copy()
    return rotate(pixels, degrees, resize=False, order=1, mode='constant', cval=BACKGROUND,
                  preserve_range=True)


def flip_image(pixels):
    return pixels[:, ::-1].copy()


def augment(image, config, rng):
    """One augmented copy: rotate, maybe flip, add noise, clamp to [0,1].
    The three draws are always taken so a stream stays aligned whatever the config.
    Args:
        image [LabeledImage]
        config [AugmentConfig]
        rng [np.random.Generator]
    """
    angle = rng.uniform(-config.rotation_degrees, config.rotation_degrees)
    flip = rng.random() < config.flip_probability
    noise = config.noise_sigma * rng.standard_normal(image.pixels.shape)

    pixels = rotate_image(image.pixels, angle)
    if flip:
        pixels = flip_image(pixels)
    pixels = np.clip(pixels + noise, 0.0, 1.0)
    return LabeledImage(pixels, image.emotion, image.identity, image.group_id)


def expand_corpus(images, config, seed):
    """Originals followed by augmented copies, dealt round-robin over the originals
    until `config.target_size` images exist. Copy j draws from SeedSequence([seed, j]).
    """
    if not images:
        raise DatasetError("cannot expand an empty corpus")
    if config.target_size < len(images):
        raise ConfigError("augment.target_size ({}) is smaller than the corpus ({} images)".format(
            config.target_size, len(images)))
    corpus = list(images)
    for j in range(config.target_size - len(images)):
        rng = np.random.default_rng(np.random.SeedSequence([seed, j]))
        corpus.append(augment(images[j % len(images)], config, rng))
    return corpus
