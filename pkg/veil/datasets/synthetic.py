"""
Veil
Synthetic face-proxy corpus.

Stand-in for licensed facial-expression databases. Each image is a cartoon face on a
mid-gray background, drawn from two disjoint factor sets:
    identity factors (fixed per identity): face ellipse axes, eye spacing, eye height, nose length
    emotion factors (fixed per emotion):   mouth curvature, mouth openness, eyebrow angle
plus per-image jitter of every factor and of the face position. Faces are
left-right symmetric, so horizontal flips keep identity and emotion.

Licensed under the MIT License (see LICENSE for details)
"""

from dataclasses import dataclass

import numpy as np
from skimage.transform import downscale_local_mean
from sklearn.neighbors import NearestCentroid

from ..errors import ConfigError

BACKGROUND = 0.5
SUPERSAMPLE = 4
# two identities must differ by at least this fraction of some factor's range
MIN_IDENTITY_GAP = 0.1
MAX_DRAWS = 1000

# gray levels
FACE, EYE, BROW, NOSE, MOUTH = 0.82, 0.10, 0.20, 0.62, 0.15


@dataclass
class LabeledImage:
    """One grayscale image with both labels.
    Args:
        pixels [H x W]: values in [0,1]
        emotion [int]: y_e
        identity [int]: y_i
        group_id [int]: id of the original image; shared by all its augmented copies
    """
    pixels: np.ndarray
    emotion: int
    identity: int
    group_id: int


@dataclass
class ImageBatch:
    """Stacked arrays of a list of LabeledImage, the form training consumes.
        x [N x 1 x H x W], emotion [N], identity [N], group [N]
    """
    x: np.ndarray
    emotion: np.ndarray
    identity: np.ndarray
    group: np.ndarray

    @classmethod
    def from_images(cls, images):
        if not images:
            raise ValueError("cannot stack an empty image list")
        return cls(x=np.stack([im.pixels for im in images])[:, None].astype(np.float64),
                   emotion=np.array([im.emotion for im in images], dtype=np.int64),
                   identity=np.array([im.identity for im in images], dtype=np.int64),
                   group=np.array([im.group_id for im in images], dtype=np.int64))

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return ImageBatch(self.x[indices], self.emotion[indices], self.identity[indices], self.group[indices])

    def labels(self, task):
        """task: 'emotion' or 'identity'.
        """
        if task not in ('emotion', 'identity'):
            raise ValueError("unknown task {!r}".format(task))
        return getattr(self, task)

    def __len__(self):
        return len(self.emotion)


def _ranges(config, names):
    return np.array([getattr(config, name) for name in names], dtype=np.float64) # F x 2


def _draw_identities(config, rng):
    """Normalized identity factors [I x F] in [0,1], drawn by rejection so that every
    pair differs by more than the jitter in some factor with a non-empty range.
    """
    ranges = _ranges(config, config.IDENTITY_FACTORS)
    live = ranges[:, 1] > ranges[:, 0]
    gap = max(MIN_IDENTITY_GAP, 3.0 * config.factor_jitter)
    drawn = []
    for i in range(config.num_identities):
        for _ in range(MAX_DRAWS):
            candidate = rng.random(len(ranges))
            if all(np.any(np.abs(candidate - other)[live] > gap) for other in drawn):
                break
        else:
            raise ConfigError("synthetic: identity factor ranges too narrow to separate {} identities "
                              "(identity {} collides with an earlier one)".format(config.num_identities, i))
        drawn.append(candidate)
    return np.array(drawn)


def _emotion_factors(num_emotions):
    """Normalized emotion factors [E x 3], spread deterministically: curvature and
    eyebrow angle go around a circle, openness cycles through three levels.
    """
    if num_emotions == 1:
        return np.array([[0.5, 0.5, 0.5]])
    theta = 2.0 * np.pi * np.arange(num_emotions) / num_emotions
    curvature = 0.5 + 0.5 * np.cos(theta)
    openness = (np.arange(num_emotions) % 3) / 2.0
    brow = 0.5 + 0.5 * np.sin(theta)
    return np.stack([curvature, openness, brow], axis=1)


def _segment_distance(px, py, ax, ay, bx, by):
    """Distance of grid points to the segment a-b.
    """
    dx, dy = bx - ax, by - ay
    t = np.clip(((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
    return np.hypot(px - (ax + t * dx), py - (ay + t * dy))


def render_face(identity, emotion, size, shift=(0.0, 0.0)):
    """Rasterize one face, anti-aliased by 4x supersampling and box downscaling.
    Args:
        identity [dict]: face_width, face_height, eye_spacing, eye_height, nose_length (image fractions)
        emotion [dict]: mouth_curvature, mouth_openness, eyebrow_angle (degrees)
        size [int]: output is size x size
        shift [tuple2]: (dy, dx) translation of the face, in pixels
    Returns:
        [size x size] pixels in [0,1]
    """
    n = size * SUPERSAMPLE
    coords = (np.arange(n) + 0.5) / n
    y, x = np.meshgrid(coords, coords, indexing='ij')
    cy, cx = 0.5 + shift[0] / size, 0.5 + shift[1] / size
    canvas = np.full((n, n), BACKGROUND)

    # 1. face ellipse
    fw, fh = identity['face_width'], identity['face_height']
    canvas[((x - cx) / fw) ** 2 + ((y - cy) / fh) ** 2 <= 1.0] = FACE

    # 2. eyes and eyebrows, mirrored about the vertical axis
    ey = identity['eye_height'] + (cy - 0.5)
    half = identity['eye_spacing'] / 2.0
    angle = np.deg2rad(emotion['eyebrow_angle'])
    for side in (-1.0, 1.0):
        ex = cx + side * half
        canvas[np.hypot(x - ex, y - ey) <= 0.035] = EYE
        # inner end of the brow goes down for positive angles
        bx, by = 0.06 * np.cos(angle), 0.06 * np.sin(angle)
        brow = _segment_distance(x, y, ex - side * bx, ey - 0.075 - by, ex + side * bx, ey - 0.075 + by)
        canvas[brow <= 0.012] = BROW

    # 3. nose
    top = ey + 0.03
    bottom = top + identity['nose_length']
    canvas[_segment_distance(x, y, cx, top, cx, bottom) <= 0.012] = NOSE

    # 4. mouth: parabola band, thicker in the middle when open
    my, mw = bottom + 0.07, 0.12
    u = (x - cx) / mw
    inside = np.abs(u) <= 1.0
    bend = np.clip(1.0 - u ** 2, 0.0, None)
    centre = my + emotion['mouth_curvature'] * 0.05 * bend
    thickness = 0.012 + emotion['mouth_openness'] * 0.035 * np.sqrt(bend)
    canvas[inside & (np.abs(y - centre) <= thickness)] = MOUTH

    return np.clip(downscale_local_mean(canvas, (SUPERSAMPLE, SUPERSAMPLE)), 0.0, 1.0)


def generate_synthetic(config):
    """Balanced corpus of num_identities x num_emotions x images_per_cell images.
    Image k (in identity, emotion, repetition order) draws its jitter from its own
    stream SeedSequence([seed, 1, k]), so the corpus does not depend on evaluation order.
    Returns:
        list of LabeledImage, group_id == index
    """
    config.validate()
    id_ranges = _ranges(config, config.IDENTITY_FACTORS)
    em_ranges = _ranges(config, config.EMOTION_FACTORS)
    identities = _draw_identities(config, np.random.default_rng(np.random.SeedSequence([config.seed, 0])))
    emotions = _emotion_factors(config.num_emotions)

    images, index = [], 0
    for i in range(config.num_identities):
        for e in range(config.num_emotions):
            for _ in range(config.images_per_cell):
                rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1, index]))
                u_id = np.clip(identities[i] + config.factor_jitter * rng.standard_normal(len(id_ranges)), 0, 1)
                u_em = np.clip(emotions[e] + config.factor_jitter * rng.standard_normal(len(em_ranges)), 0, 1)
                shift = config.shift_jitter * rng.standard_normal(2)
                identity = dict(zip(config.IDENTITY_FACTORS, id_ranges[:, 0] + u_id * (id_ranges[:, 1] - id_ranges[:, 0])))
                emotion = dict(zip(config.EMOTION_FACTORS, em_ranges[:, 0] + u_em * (em_ranges[:, 1] - em_ranges[:, 0])))
                pixels = render_face(identity, emotion, config.image_size, shift)
                images.append(LabeledImage(pixels, e, i, index))
                index += 1
    return images


def nearest_centroid_accuracy(train, test, task):
    """Separability oracle: accuracy of a pixel-space nearest-centroid classifier.
    Args:
        train, test [ImageBatch]
        task [str]: 'emotion' or 'identity'
    """
    clf = NearestCentroid()
    clf.fit(train.x.reshape(len(train), -1), train.labels(task))
    return float(np.mean(clf.predict(test.x.reshape(len(test), -1)) == test.labels(task)))
