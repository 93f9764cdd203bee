"""
Veil
Layer primitives.

conv2d / dense / relu / max_pool2d / softmax / cross_entropy, plus the small shape
ops the convolutional base needs (crop_even, flatten). Every op accepts either a
single sample or a batch with a leading N axis:
    conv2d, max_pool2d, crop_even:  [C x H x W] or [N x C x H x W]
    dense:                          [F] or [N x F]
    softmax:                        normalises over the last axis
    cross_entropy:                  ([K], int) or ([N x K], int array) -> mean over N

Licensed under the MIT License (see LICENSE for details)
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError
from .tensor import Tensor, reshape

KERNEL_SIZE = 3
PROB_FLOOR = 1e-12


def _as_batch(x, spatial_ndim):
    """Add a leading batch axis to unbatched input. Returns (array, squeeze_flag).
    """
    if x.ndim == spatial_ndim + 1:
        return x[None], True
    if x.ndim == spatial_ndim + 2:
        return x, False
    raise DimensionError("expected {} or {} axes, got shape {}".format(
        spatial_ndim + 1, spatial_ndim + 2, x.shape))


def conv2d(input, kernel, bias):
    """Valid cross-correlation, kernel 3x3, stride 1, no padding.
    Args:
        input [C_in x H x W] or [N x C_in x H x W]
        kernel [C_out x C_in x 3 x 3]
        bias [C_out]
    Returns:
        [C_out x H-2 x W-2] (or with the leading N axis)
    """
    if kernel.ndim != 4 or kernel.shape[2:] != (KERNEL_SIZE, KERNEL_SIZE):
        raise DimensionError("conv2d: kernel axes (2,3) must be 3x3, got kernel shape {}".format(kernel.shape))
    x, squeeze = _as_batch(input.data, 2)
    N, C, H, W = x.shape
    C_out = kernel.shape[0]
    if kernel.shape[1] != C:
        raise DimensionError("conv2d: input channel axis has {} channels but kernel axis 1 expects {}".format(
            C, kernel.shape[1]))
    if bias.shape != (C_out,):
        raise DimensionError("conv2d: bias shape {} does not match kernel axis 0 ({})".format(bias.shape, C_out))
    if H < KERNEL_SIZE or W < KERNEL_SIZE:
        raise DimensionError("conv2d: spatial axes (H, W) = ({}, {}) smaller than the 3x3 kernel".format(H, W))

    K = kernel.data
    # 1. im2col view: N x C x H-2 x W-2 x 3 x 3 (no copy)
    windows = sliding_window_view(x, (KERNEL_SIZE, KERNEL_SIZE), axis=(2, 3))
    # 2. contract channel + kernel window against the kernel
    out = np.tensordot(windows, K, axes=([1, 4, 5], [1, 2, 3])) # N x Ho x Wo x C_out
    out = out.transpose(0, 3, 1, 2) + bias.data[None, :, None, None]

    def _bw(g):
        g = g[None] if squeeze else g # N x C_out x Ho x Wo
        g_input = None
        if input.requires_grad:
            # full correlation of the output gradient with the flipped kernel
            pad = KERNEL_SIZE - 1
            g_pad = np.pad(g, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
            g_windows = sliding_window_view(g_pad, (KERNEL_SIZE, KERNEL_SIZE), axis=(2, 3)) # N x C_out x H x W x 3 x 3
            g_input = np.tensordot(g_windows, K[:, :, ::-1, ::-1], axes=([1, 4, 5], [0, 2, 3])) # N x H x W x C
            g_input = g_input.transpose(0, 3, 1, 2)
            if squeeze:
                g_input = g_input[0]
        g_kernel = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3])) if kernel.requires_grad else None
        g_bias = g.sum(axis=(0, 2, 3)) if bias.requires_grad else None
        return g_input, g_kernel, g_bias

    return Tensor._result(out[0] if squeeze else out, (input, kernel, bias), _bw)


def dense(input, weight, bias):
    """Fully-connected layer, weight . input + bias.
    Args:
        input [F] or [N x F]
        weight [M x F]
        bias [M]
    Returns:
        [M] or [N x M]
    """
    if weight.ndim != 2:
        raise DimensionError("dense: weight must have 2 axes, got shape {}".format(weight.shape))
    M, F = weight.shape
    if input.ndim not in (1, 2) or input.shape[-1] != F:
        raise DimensionError("dense: input feature axis {} does not match weight axis 1 ({})".format(
            input.shape, F))
    if bias.shape != (M,):
        raise DimensionError("dense: bias shape {} does not match weight axis 0 ({})".format(bias.shape, M))
    x, W = input.data, weight.data
    out = x @ W.T + bias.data

    def _bw(g):
        g_input = g @ W if input.requires_grad else None
        g_weight = None
        if weight.requires_grad:
            g_weight = np.outer(g, x) if g.ndim == 1 else g.T @ x
        g_bias = None
        if bias.requires_grad:
            g_bias = g.copy() if g.ndim == 1 else g.sum(axis=0)
        return g_input, g_weight, g_bias

    return Tensor._result(out, (input, weight, bias), _bw)


def relu(input):
    """max(0, v) elementwise; the subgradient at 0 is 0.
    """
    mask = input.data > 0
    return Tensor._result(np.where(mask, input.data, 0.0), (input,), lambda g: (g * mask,))


def max_pool2d(input, window=2):
    """Non-overlapping max pooling.
    Args:
        input [C x H x W] or [N x C x H x W], H and W divisible by `window`
    Returns:
        [C x H/window x W/window] (or with the leading N axis)
    Note:
        backward routes the gradient to the first maximum in row-major window order.
    """
    x, squeeze = _as_batch(input.data, 2)
    N, C, H, W = x.shape
    if H % window or W % window:
        raise DimensionError("max_pool2d: spatial axes (H, W) = ({}, {}) not divisible by window {}".format(
            H, W, window))
    Ho, Wo = H // window, W // window
    # N x C x Ho x Wo x (window*window), last axis in row-major scan order of each window
    cells = x.reshape(N, C, Ho, window, Wo, window).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, Ho, Wo, -1)
    arg = np.argmax(cells, axis=-1)
    out = np.take_along_axis(cells, arg[..., None], axis=-1)[..., 0]

    def _bw(g):
        g = g[None] if squeeze else g
        routed = np.zeros(cells.shape)
        np.put_along_axis(routed, arg[..., None], g[..., None], axis=-1)
        routed = routed.reshape(N, C, Ho, Wo, window, window).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H, W)
        return (routed[0] if squeeze else routed,)

    return Tensor._result(out[0] if squeeze else out, (input,), _bw)


def crop_even(input):
    """Drop the last row / column of odd spatial axes so 2x2 pooling applies.
    """
    H, W = input.shape[-2:]
    h, w = H - H % 2, W - W % 2
    if (h, w) == (H, W):
        return input
    shape = input.shape

    def _bw(g):
        full = np.zeros(shape)
        full[..., :h, :w] = g
        return (full,)

    return Tensor._result(input.data[..., :h, :w], (input,), _bw)


def flatten(input, batched=True):
    """[N x C x H x W] -> [N x C*H*W] when batched, else everything -> [C*H*W].
    """
    if batched:
        return reshape(input, (input.shape[0], -1))
    return reshape(input, (-1,))


def softmax(logits):
    """Numerically stable softmax over the last axis (max subtracted before exp).
    """
    if logits.ndim == 0 or logits.shape[-1] < 2:
        raise DimensionError("softmax: class axis needs K >= 2, got shape {}".format(logits.shape))
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def _bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return Tensor._result(p, (logits,), _bw)


def cross_entropy(probabilities, label, cap=None):
    """-log(p_label), with p clamped to >= 1e-12.
    Args:
        probabilities [K] with an int label, or [N x K] with N int labels
        cap [float]: optional ceiling of each per-sample loss; capped samples pass no gradient
    Returns:
        scalar Tensor (mean over N for batches)
    """
    p = probabilities.data
    K = p.shape[-1]
    labels = np.asarray(label, dtype=np.int64)
    single = p.ndim == 1
    if single:
        if labels.ndim != 0:
            raise DimensionError("cross_entropy: a single [K] probability vector takes one label")
        p, labels = p[None], labels[None]
    elif p.ndim != 2 or labels.shape != (p.shape[0],):
        raise DimensionError("cross_entropy: probabilities {} and labels {} disagree on the batch axis".format(
            probabilities.shape, labels.shape))
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise DimensionError("cross_entropy: label out of range [0, {}) on the class axis".format(K))

    N = p.shape[0]
    rows = np.arange(N)
    picked = p[rows, labels]
    clamped = np.maximum(picked, PROB_FLOOR)
    per_sample = -np.log(clamped)
    active = picked >= PROB_FLOOR
    if cap is not None:
        active &= per_sample < cap
        per_sample = np.minimum(per_sample, cap)
    loss = per_sample.mean()

    def _bw(g):
        grad = np.zeros_like(p)
        # zero gradient where the clamp or the cap is active
        grad[rows, labels] = np.where(active, -1.0 / clamped, 0.0) * (g / N)
        return (grad[0] if single else grad,)

    return Tensor._result(np.asarray(loss), (probabilities,), _bw)
