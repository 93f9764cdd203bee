"""
Veil
Classification Head.

Licensed under the MIT License (see LICENSE for details)
"""

import numpy as np

from ..autodiff import Tensor, dense, relu, softmax
from ..errors import ConfigError
from .conv_base import shape_trace, he_normal


class Head(object):
    """Fully-connected head: dense -> ReLU -> dense -> ReLU -> dense -> softmax.
    Serves as f_We (emotion), f_Wi (identity) and as a fresh probe head.
    """
    def __init__(self, in_features, hidden, num_classes, rng_seed=0, name='head'):
        if num_classes < 2:
            raise ConfigError("{}: num_classes must be >= 2, got {}".format(name, num_classes))
        self.name = name
        self.num_classes = int(num_classes)
        self.sizes = [int(in_features)] + [int(h) for h in hidden] + [self.num_classes]

        self.weights, self.biases = [], []
        for i, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:]), start=1):
            self.weights.append(Tensor(np.zeros((n_out, n_in)), requires_grad=True,
                                       name='{}.fc{}.weight'.format(name, i)))
            self.biases.append(Tensor(np.zeros(n_out), requires_grad=True,
                                      name='{}.fc{}.bias'.format(name, i)))
        self.init_weights(rng_seed)

    def init_weights(self, rng_seed):
        rng = np.random.default_rng(rng_seed)
        for w, b in zip(self.weights, self.biases):
            w.data[...] = he_normal(rng, w.shape, fan_in=w.shape[1])
            b.data[...] = 0.0

    def named_parameters(self):
        for w, b in zip(self.weights, self.biases):
            yield w.name, w
            yield b.name, b

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def __call__(self, features):
        """Forward step.
        Args:
            features [N x F] or [F]
        Returns:
            probabilities [N x K] or [K]
        """
        x = features if isinstance(features, Tensor) else Tensor(features)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = dense(x, w, b)
            if i < last:
                x = relu(x)
        return softmax(x)


def build_head(config, num_classes, rng_seed=None, name='head'):
    """Head sized [feature_len -> h1 -> h2 -> num_classes] for the base described by `config`.
    """
    config.validate()
    C, H, W = shape_trace(config)[-1][1]
    return Head(C * H * W, config.fc_hidden, num_classes,
                rng_seed=config.seed if rng_seed is None else rng_seed, name=name)
