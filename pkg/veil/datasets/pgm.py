"""
Veil
On-disk dataset: binary PGM images plus a manifest.

    <directory>/images/00000.pgm ...   P5, maxval 255, pixel = round(v * 255)
    <directory>/manifest.csv           filename,identity,emotion,group_id (UTF-8, LF)

Images converted from real databases into this layout load the same way.

Licensed under the MIT License (see LICENSE for details)
"""

import csv
import os

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import DatasetError
from .synthetic import LabeledImage

IMAGE_DIR = 'images'
MANIFEST = 'manifest.csv'
COLUMNS = ['filename', 'identity', 'emotion', 'group_id']


def write_pgm(pixels, path):
    levels = np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(levels).save(path, format='PPM')


def read_pgm(path):
    """Pixels in [0,1] of an 8-bit grayscale PGM.
    """
    try:
        img = Image.open(path)
        img.load()
    except (OSError, UnidentifiedImageError, SyntaxError) as e:
        raise DatasetError("{}: unreadable PGM ({})".format(path, e))
    with img:
        if img.format != 'PPM' or img.mode != 'L':
            raise DatasetError("{}: expected an 8-bit grayscale PGM, got {} {}".format(path, img.format, img.mode))
        return np.asarray(img, dtype=np.float64) / 255.0


def save_dataset(images, directory):
    """Write every image as images/<index>.pgm and list it in manifest.csv.
    """
    os.makedirs(os.path.join(directory, IMAGE_DIR), exist_ok=True)
    with open(os.path.join(directory, MANIFEST), 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(COLUMNS)
        for index, image in enumerate(images):
            filename = '{}/{:05d}.pgm'.format(IMAGE_DIR, index)
            write_pgm(image.pixels, os.path.join(directory, filename))
            writer.writerow([filename, image.identity, image.emotion, image.group_id])


def _label(value, name, limit, where):
    try:
        label = int(value)
    except ValueError:
        raise DatasetError("{}: {} {!r} is not an integer".format(where, name, value))
    if label < 0 or (limit is not None and label >= limit):
        raise DatasetError("{}: {} {} outside [0, {})".format(where, name, label, limit if limit is not None else 'inf'))
    return label


def load_dataset(directory, num_identities=None, num_emotions=None):
    """Inverse of save_dataset, up to 8-bit quantization.
    Args:
        num_identities, num_emotions [int]: optional class counts; labels outside them are rejected
    Returns:
        list of LabeledImage in manifest order
    """
    manifest = os.path.join(directory, MANIFEST)
    try:
        with open(manifest, 'r', encoding='utf-8', newline='') as f:
            rows = list(csv.reader(f))
    except OSError as e:
        raise DatasetError("cannot read {}: {}".format(manifest, e))
    if not rows or rows[0] != COLUMNS:
        raise DatasetError("{}:1: header must be {}".format(manifest, ','.join(COLUMNS)))

    images = []
    for line, row in enumerate(rows[1:], start=2):
        where = '{}:{}'.format(manifest, line)
        if len(row) != len(COLUMNS):
            raise DatasetError("{}: expected {} fields, got {}".format(where, len(COLUMNS), len(row)))
        filename, identity, emotion, group_id = row
        identity = _label(identity, 'identity', num_identities, where)
        emotion = _label(emotion, 'emotion', num_emotions, where)
        group_id = _label(group_id, 'group_id', None, where)
        pixels = read_pgm(os.path.join(directory, filename))
        images.append(LabeledImage(pixels, emotion, identity, group_id))
    if not images:
        raise DatasetError("{}: no images listed".format(manifest))
    return images
