"""
Veil
Finite-difference gradient oracle.

Licensed under the MIT License (see LICENSE for details)
"""

import numpy as np

from .tensor import Tensor, no_grad

DEFAULT_EPS = 1e-5


def _scalar(value):
    if isinstance(value, Tensor):
        return value.item()
    return float(value)


def finite_difference_gradient(f, x, eps=DEFAULT_EPS, indices=None):
    """Central-difference estimate of df/dx.
    Args:
        f [callable]: scalar-valued function of the Tensor `x` (reads x.data).
        x [Tensor]: perturbed in place, restored afterwards.
        eps [float]: step, > 0.
        indices [iterable of int]: flat coordinates to probe; all when None (others stay 0).
    Returns:
        Tensor shaped like x with (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
    """
    if not eps > 0:
        raise ValueError("eps must be positive, got {}".format(eps))
    flat = x.data.reshape(-1) # view, so writes reach f
    grad = np.zeros(flat.size)
    coords = range(flat.size) if indices is None else indices
    with no_grad():
        for i in coords:
            original = flat[i]
            flat[i] = original + eps
            f_plus = _scalar(f(x))
            flat[i] = original - eps
            f_minus = _scalar(f(x))
            flat[i] = original
            grad[i] = (f_plus - f_minus) / (2.0 * eps)
    return Tensor(grad.reshape(x.shape))


def relative_error(analytic, numeric):
    """Elementwise |a - f| / max(|a|, |f|, 1e-8).
    """
    a = np.asarray(getattr(analytic, 'data', analytic), dtype=np.float64)
    f = np.asarray(getattr(numeric, 'data', numeric), dtype=np.float64)
    return np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-8)
