"""
Veil
Reverse-mode automatic differentiation: the Tensor and its tape.

Every Tensor produced by a recorded operation keeps its parents and a closure
mapping the output gradient to one gradient per parent. backward() walks that
graph in reverse topological order.

Licensed under the MIT License (see LICENSE for details)
"""

from contextlib import contextmanager

import numpy as np

from ..errors import DimensionError, GradientError

# tape recording switch, flipped by no_grad(); single-writer like the tape itself
_RECORDING = [True]


@contextmanager
def no_grad():
    """Operations inside the block record nothing on the tape (inference path).
    """
    previous = _RECORDING[0]
    _RECORDING[0] = False
    try:
        yield
    finally:
        _RECORDING[0] = previous


def is_recording():
    return _RECORDING[0]


class Tensor(object):
    """n-dimensional float64 array with an optional gradient buffer.
    Args:
        data [array-like]: values, copied and stored as float64 in row-major order.
        requires_grad [bool]: whether backward() should populate `grad`.
        name [str]: optional parameter name (used as optimizer key and in weight files).
    """
    __slots__ = ('data', 'grad', 'requires_grad', 'name', '_parents', '_backward')

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None

    @classmethod
    def _result(cls, data, parents, backward_fn):
        """Wrap an op output without copying and record it if any parent needs a gradient.
        backward_fn(grad) must return one gradient (or None) per parent.
        """
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64)
        out.grad = None
        out.name = None
        out.requires_grad = _RECORDING[0] and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward_fn
        else:
            out._parents = ()
            out._backward = None
        return out

    # --- convenience ---
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise DimensionError("item() needs a single-element tensor, got shape {}".format(self.shape))
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False, name=self.name)

    def backward(self):
        backward(self)

    def __repr__(self):
        req = ", requires_grad=True" if self.requires_grad else ""
        nm = ", name={}".format(self.name) if self.name else ""
        return "Tensor(shape={}{}{})".format(self.shape, req, nm)

    # --- arithmetic ---
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def sum(self):
        return tensor_sum(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to `shape`.
    """
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise DimensionError("add: shapes {} and {} do not broadcast".format(a.shape, b.shape))

    def _bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return Tensor._result(data, (a, b), _bw)


def neg(a):
    return Tensor._result(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    """Elementwise product; `b` may be a python scalar.
    """
    if not isinstance(b, Tensor):
        scale = float(b)
        return Tensor._result(a.data * scale, (a,), lambda g: (g * scale,))
    try:
        data = a.data * b.data
    except ValueError:
        raise DimensionError("mul: shapes {} and {} do not broadcast".format(a.shape, b.shape))

    def _bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return Tensor._result(data, (a, b), _bw)


def tensor_sum(a):
    shape = a.shape
    return Tensor._result(np.sum(a.data), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def reshape(a, shape):
    old = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise DimensionError("reshape: cannot view shape {} as {}".format(old, tuple(shape)))
    return Tensor._result(data, (a,), lambda g: (g.reshape(old),))


def _topological_order(root):
    """Iterative post-order DFS over recorded parents.
    """
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss):
    """Populate `grad` of every requires_grad ancestor of a scalar loss.
    Gradients accumulate into existing buffers until zero_grad() clears them.
    """
    if loss.size != 1:
        raise GradientError("backward needs a scalar loss, got shape {}".format(loss.shape))
    if not loss.requires_grad:
        raise GradientError("loss does not depend on any tensor that requires grad")

    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg
