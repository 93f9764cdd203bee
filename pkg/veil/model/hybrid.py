"""
Veil
Model zoo: Emotion / Face / probe models and the Hybrid model.

    Emotion, Face      SingleTaskModel(base, head) trained end to end
    Emotion2Face       the Emotion base, frozen, with a fresh identity head
    Hybrid             HybridModel(base, emotion_head, identity_head), trained adversarially
    Hybrid2Emotion/Face  the Hybrid base, frozen, with fresh probe heads

Freezing is bookkeeping for the optimizer: frozen parameters are never stepped but
gradients still flow through them (the adversarial phase differentiates through the
frozen identity head into the base).

Licensed under the MIT License (see LICENSE for details)
"""

import json
import os

import numpy as np

from ..autodiff import no_grad, save_weights, load_weights
from ..config import ModelConfig
from ..errors import ConfigError, DatasetError, ProtocolError
from .conv_base import build_conv_base
from .head import build_head

HYBRID_GROUPS = ('base', 'emotion_head', 'identity_head')
SINGLE_GROUPS = ('base', 'head')
MANIFEST = 'model.json'
EVAL_BATCH = 256


class Model(object):
    """Named parameter groups with per-group freeze flags.
    """
    GROUPS = ()

    def __init__(self, **groups):
        self.groups = {name: groups[name] for name in self.GROUPS}
        self.frozen = {name: False for name in self.GROUPS}

    @property
    def base(self):
        return self.groups['base']

    def named_parameters(self, groups=None):
        for name in (groups or self.GROUPS):
            for item in self.groups[name].named_parameters():
                yield item

    def parameters(self, groups=None):
        return [p for _, p in self.named_parameters(groups)]

    def trainable_parameters(self):
        return self.parameters([g for g in self.GROUPS if not self.frozen[g]])

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def snapshot(self, groups=None):
        """Copies of parameter values, for freeze-invariance checks.
        """
        return {name: p.data.copy() for name, p in self.named_parameters(groups)}


class SingleTaskModel(Model):
    """Emotion or Face model: head(flatten(base(x))).
    """
    GROUPS = SINGLE_GROUPS

    def __init__(self, base, head):
        super(SingleTaskModel, self).__init__(base=base, head=head)

    @property
    def head(self):
        return self.groups['head']

    def forward(self, images):
        return forward(self.base, self.head, images)


class HybridModel(Model):
    """Shared base feeding an emotion head (W_e) and an identity head (W_i).
    """
    GROUPS = HYBRID_GROUPS

    def __init__(self, base, emotion_head, identity_head):
        super(HybridModel, self).__init__(base=base, emotion_head=emotion_head, identity_head=identity_head)

    @property
    def emotion_head(self):
        return self.groups['emotion_head']

    @property
    def identity_head(self):
        return self.groups['identity_head']

    def forward(self, images):
        """Forward step, one base evaluation shared by both heads.
        Args:
            images [N x 1 x H x W]
        Returns:
            p_emotion [N x K_e], p_identity [N x K_i], features [N x F]
        """
        features = self.base(images)
        return self.emotion_head(features), self.identity_head(features), features


def forward(base, head, images):
    """head(flatten(base(images))) -> probability Tensor.
    """
    return head(base(images))


def _seed_sequence(config, rng_seed):
    """SeedSequence of a model: config.seed by default, an int, or a SeedSequence as is.
    """
    if isinstance(rng_seed, np.random.SeedSequence):
        return rng_seed
    return np.random.SeedSequence(config.seed if rng_seed is None else rng_seed)


def build_single_task(config, num_classes, rng_seed=None, head_name='head'):
    """Fresh Emotion / Face model. Base and head draw from independent seed streams.
    """
    base_seed, head_seed = _seed_sequence(config, rng_seed).spawn(2)
    return SingleTaskModel(build_conv_base(config, base_seed),
                           build_head(config, num_classes, head_seed, name=head_name))


def build_hybrid(config, num_emotions, num_identities, rng_seed=None):
    base_seed, emotion_seed, identity_seed = _seed_sequence(config, rng_seed).spawn(3)
    return HybridModel(build_conv_base(config, base_seed),
                       build_head(config, num_emotions, emotion_seed, name='emotion_head'),
                       build_head(config, num_identities, identity_seed, name='identity_head'))


def set_frozen(model, group, frozen=True):
    """Freeze or unfreeze a parameter group; optimizer steps skip frozen groups.
    """
    if group not in model.groups:
        raise ConfigError("unknown parameter group {!r}; expected one of {}".format(group, model.GROUPS))
    model.frozen[group] = bool(frozen)


def reinit_head(model, group, rng_seed, state=None):
    """Fresh He-initialized weights for a head; its optimizer velocity is zeroed.
    Args:
        state [OptimizerState]: optional optimizer whose buffers for the group are reset.
    """
    if group == 'base':
        raise ProtocolError("the convolutional base is the learned artifact and cannot be re-initialized")
    if group not in model.groups:
        raise ConfigError("unknown parameter group {!r}; expected one of {}".format(group, model.GROUPS))
    head = model.groups[group]
    head.init_weights(rng_seed)
    head_params = head.parameters()
    for p in head_params:
        p.zero_grad()
    if state is not None:
        state.reset(head_params)


def extract_features(base, images, batch_size=EVAL_BATCH):
    """Base output for a whole image array, without recording a tape.
    Args:
        images [N x 1 x H x W] ndarray
    Returns:
        [N x F] ndarray
    """
    chunks = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            chunks.append(base(images[start:start + batch_size]).data)
    if not chunks:
        return np.zeros((0, base.feature_len))
    return np.concatenate(chunks, axis=0)


def predict_head(head, features, batch_size=EVAL_BATCH):
    """Argmax class per feature row; ties go to the lowest class index.
    """
    labels = []
    with no_grad():
        for start in range(0, len(features), batch_size):
            labels.append(np.argmax(head(features[start:start + batch_size]).data, axis=-1))
    return np.concatenate(labels) if labels else np.zeros(0, dtype=np.int64)


def predict(base, head, images, batch_size=EVAL_BATCH):
    return predict_head(head, extract_features(base, images, batch_size), batch_size)


def head_accuracy(head, features, labels):
    if len(labels) == 0:
        raise DatasetError("accuracy of an empty split is undefined")
    return float(np.mean(predict_head(head, features) == np.asarray(labels)))


def accuracy(base, head, images, labels):
    """Fraction of argmax-correct predictions on a split.
    Args:
        images [N x 1 x H x W] ndarray
        labels [N] int array
    """
    if len(labels) == 0:
        raise DatasetError("accuracy of an empty split is undefined")
    return float(np.mean(predict(base, head, images) == np.asarray(labels)))


def save_model(model, directory):
    """Weights in the interchange format plus model.json (ModelConfig, class counts).
    """
    os.makedirs(directory, exist_ok=True)
    save_weights(model.named_parameters(), directory)
    heads = {g: model.groups[g].num_classes for g in model.GROUPS if g != 'base'}
    manifest = {
        'kind': 'hybrid' if isinstance(model, HybridModel) else 'single',
        'config': model.base.config.to_dict(),
        'classes': heads,
        'frozen': model.frozen,
    }
    with open(os.path.join(directory, MANIFEST), 'w', encoding='utf-8', newline='\n') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write('\n')


def load_model(directory):
    try:
        with open(os.path.join(directory, MANIFEST), 'r', encoding='utf-8') as f:
            manifest = json.load(f)
    except (OSError, ValueError) as e:
        raise DatasetError("cannot read {} in {}: {}".format(MANIFEST, directory, e))
    config = ModelConfig.from_dict(manifest['config'], 'model')
    classes = manifest['classes']
    if manifest['kind'] == 'hybrid':
        model = build_hybrid(config, classes['emotion_head'], classes['identity_head'])
    else:
        model = build_single_task(config, classes['head'])

    arrays = load_weights(directory)
    for name, p in model.named_parameters():
        if name not in arrays or arrays[name].shape != p.shape:
            raise DatasetError("{}: missing or mis-shaped tensor {}".format(directory, name))
        p.data[...] = arrays[name]
    for group, value in manifest.get('frozen', {}).items():
        set_frozen(model, group, value)
    return model
