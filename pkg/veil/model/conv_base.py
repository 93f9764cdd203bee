"""
Veil
Convolutional Base.

Licensed under the MIT License (see LICENSE for details)
"""

import numpy as np

from ..autodiff import Tensor, conv2d, relu, crop_even, max_pool2d, flatten
from ..errors import DimensionError

NUM_CONV = 3
POOL = 2


def shape_trace(config):
    """Shape chain of the base for a config, e.g. for 48x48 and [8,16,32]:
        (1,48,48) conv1 (8,46,46) pool1 (8,23,23) conv2 (16,21,21) crop2 (16,20,20) pool2 (16,10,10) conv3 (32,8,8) pool3 (32,4,4)
    Returns:
        list of (stage name, (C, H, W)) starting at the input.
    Raises:
        DimensionError when the input is too small for three conv + pool stages.
    """
    size = int(config.input_size)
    trace = [('input', (1, size, size))]
    for i, channels in enumerate(config.conv_channels, start=1):
        if size < 3:
            raise DimensionError("input size {} too small for conv{}: {}".format(
                config.input_size, i, _format(trace)))
        size -= 2
        trace.append(('conv{}'.format(i), (channels, size, size)))
        if size % 2:
            size -= 1
            trace.append(('crop{}'.format(i), (channels, size, size)))
        if size < POOL:
            raise DimensionError("input size {} too small for pool{}: {}".format(
                config.input_size, i, _format(trace)))
        size //= POOL
        trace.append(('pool{}'.format(i), (channels, size, size)))
    return trace


def _format(trace):
    return ' -> '.join('{} {}'.format(name, shape) for name, shape in trace)


def he_normal(rng, shape, fan_in):
    """Gaussian weights with std sqrt(2 / fan_in).
    """
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class ConvBase(object):
    """Shared convolutional base f_Wc: 3 x (conv 3x3 stride 1 -> ReLU -> crop odd row/col -> maxpool 2x2),
    flattened to a fixed-length feature vector.
    """
    def __init__(self, config, rng_seed=None, name='base'):
        self.config = config
        self.name = name
        self.trace = shape_trace(config)
        C, H, W = self.trace[-1][1]
        self.feature_len = C * H * W

        self.weights, self.biases = [], []
        in_channels = 1
        for i, out_channels in enumerate(config.conv_channels, start=1):
            self.weights.append(Tensor(np.zeros((out_channels, in_channels, 3, 3)), requires_grad=True,
                                       name='{}.conv{}.weight'.format(name, i)))
            self.biases.append(Tensor(np.zeros(out_channels), requires_grad=True,
                                      name='{}.conv{}.bias'.format(name, i)))
            in_channels = out_channels
        self.init_weights(config.seed if rng_seed is None else rng_seed)

    def init_weights(self, rng_seed):
        """He initialization, zero biases. Deterministic given the seed.
        """
        rng = np.random.default_rng(rng_seed)
        for w, b in zip(self.weights, self.biases):
            w.data[...] = he_normal(rng, w.shape, fan_in=w.shape[1] * 9)
            b.data[...] = 0.0

    def named_parameters(self):
        for w, b in zip(self.weights, self.biases):
            yield w.name, w
            yield b.name, b

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def __call__(self, images):
        """Forward step.
        Args:
            images [N x 1 x H x W] or [1 x H x W]: Tensor or array of grayscale images.
        Returns:
            features [N x F] or [F]
        """
        x = images if isinstance(images, Tensor) else Tensor(images)
        batched = x.ndim == 4
        expected = self.trace[0][1]
        if x.shape[-3:] != expected:
            raise DimensionError("base: image axes (C, H, W) = {} but the model expects {}".format(
                x.shape[-3:], expected))
        for w, b in zip(self.weights, self.biases):
            x = relu(conv2d(x, w, b))
            x = max_pool2d(crop_even(x), POOL)
        return flatten(x, batched=batched)


def build_conv_base(config, rng_seed=None):
    config.validate()
    return ConvBase(config, rng_seed)
