"""
Veil
SGD with momentum.

Licensed under the MIT License (see LICENSE for details)
"""

import numpy as np

from ..errors import ConfigError, GradientError


def _key(param):
    return param.name if param.name is not None else id(param)


class OptimizerState(object):
    """Velocity buffers of SGD with momentum, keyed by parameter name.
    Args:
        learning_rate [float]: step size, >= 0.
        momentum [float]: in [0, 1).
    """
    def __init__(self, learning_rate, momentum=0.0):
        if not learning_rate >= 0:
            raise ConfigError("optimizer.learning_rate must be >= 0, got {}".format(learning_rate))
        if not 0.0 <= momentum < 1.0:
            raise ConfigError("optimizer.momentum must lie in [0,1), got {}".format(momentum))
        self.learning_rate = float(learning_rate)
        self.momentum = float(momentum)
        self.velocity = {}

    def velocity_of(self, param):
        """Velocity buffer mirroring the parameter's shape (zeros when new or reshaped).
        """
        v = self.velocity.get(_key(param))
        if v is None or v.shape != param.shape:
            v = np.zeros(param.shape)
            self.velocity[_key(param)] = v
        return v

    def reset(self, params=None):
        """Zero the velocity of `params` (all buffers when None).
        """
        if params is None:
            self.velocity.clear()
            return
        for p in params:
            self.velocity.pop(_key(p), None)


def sgd_step(params, state):
    """One update of every parameter in `params`, then clear their gradients.
        v <- momentum * v - lr * g
        p <- p + v
    Args:
        params [iterable of Tensor]: trainable (non-frozen) parameters only.
        state [OptimizerState]
    """
    params = list(params)
    for p in params:
        if p.grad is None:
            raise GradientError("parameter {} has no gradient; run backward() before sgd_step()".format(
                p.name or p.shape))
    for p in params:
        v = state.momentum * state.velocity_of(p) - state.learning_rate * p.grad
        state.velocity[_key(p)] = v
        p.data += v
        p.zero_grad()
