"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Every operation used inside a loss provides a forward evaluation and a
backward map from an output cotangent to input cotangents.  Tensors carry
float32 data by default; passing float64 arrays keeps the whole graph in
float64, which the finite-difference checker relies on.
"""

from __future__ import annotations

import warnings

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(ValueError):
    """Raised when an operation is called outside its contract."""


def _as_array(x, dtype=None):
    if isinstance(x, Tensor):
        return x.data
    if isinstance(x, (np.ndarray, np.generic)):
        x = np.asarray(x)
        if dtype is not None:
            return x.astype(dtype)
        return x if x.dtype in (np.float32, np.float64) else x.astype(np.float32)
    # python scalars / nested lists default to float32 so they never promote
    return np.asarray(x, dtype=dtype or np.float32)


class Tensor:
    """Dense row-major array with optional gradient tracking.

    ``data`` is a numpy array (float32 by default).  When ``requires_grad``
    is set, or when the tensor results from an op on tracked tensors,
    ``backward()`` on a downstream scalar fills ``grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, _parents=(), _backward_fn=None):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward_fn = _backward_fn if self.requires_grad else None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(()))

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def astype(self, dtype):
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad) \
            if not self.requires_grad else _unary(self, self.data.astype(dtype),
                                                  lambda g: g.astype(self.data.dtype))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- autodiff driver -----------------------------------------------------

    def backward(self, seed=None):
        """Reverse-mode sweep from this tensor (scalar unless ``seed`` given)."""
        if seed is None:
            if self.data.size != 1:
                raise ContractError(f"backward() needs a scalar, got shape {self.data.shape}")
            seed = np.ones_like(self.data)
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited and p.requires_grad:
                    stack.append((p, False))
        self._accumulate(seed)
        for node in reversed(topo):
            if node._backward_fn is None or node.grad is None:
                continue
            grads = node._backward_fn(node.grad)
            for p, g in zip(node._parents, grads):
                if g is not None and p.requires_grad:
                    p._accumulate(g)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True).reshape(self.data.shape)
        else:
            self.grad += g.reshape(self.data.shape)

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)


def as_tensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(_as_array(x, dtype))


def _unary(x, out, back):
    return Tensor(out, _parents=(x,), _backward_fn=lambda g: (back(g),))


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- arithmetic ---------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return Tensor(out, _parents=(a, b), _backward_fn=lambda g: (
        _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return Tensor(out, _parents=(a, b), _backward_fn=lambda g: (
        _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return Tensor(out, _parents=(a, b), _backward_fn=lambda g: (
        _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return Tensor(out, _parents=(a, b), _backward_fn=lambda g: (
        _unbroadcast(g / b.data, a.data.shape),
        _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)))


def power(a, p):
    a = as_tensor(a)
    p = float(p)
    out = a.data ** p
    return _unary(a, out, lambda g: g * p * a.data ** (p - 1.0))


def matmul(a, b):
    """Matrix product with numpy stacking semantics on the leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 1 or b.data.ndim < 1:
        raise ShapeError("matmul needs at least 1-D operands")
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else -1]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.data.shape} x {b.data.shape}")
    out = np.matmul(a.data, b.data)

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if b.data.ndim > 1 else \
            np.multiply.outer(g, b.data) if g.ndim else g * b.data
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if a.data.ndim > 1 and b.data.ndim > 1 else \
            np.matmul(np.swapaxes(a.data, -1, -2), g[..., None])[..., 0] if a.data.ndim > 1 else \
            np.multiply.outer(a.data, g) if g.ndim == 0 else a.data[..., None] * g
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return Tensor(out, _parents=(a, b), _backward_fn=back)


# -- elementwise nonlinearities ------------------------------------------------

def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)
    return _unary(x, out, lambda g: g * out)


def log(x):
    x = as_tensor(x)
    return _unary(x, np.log(x.data), lambda g: g / x.data)


def sqrt(x):
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return _unary(x, out, lambda g: g * 0.5 / out)


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _unary(x, out, lambda g: g * (1.0 - out * out))


def sigmoid(x):
    x = as_tensor(x)
    # Stable two-sided form; output lies strictly in (0, 1).
    d = x.data
    out = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                   np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d)))).astype(d.dtype)
    return _unary(x, out, lambda g: g * out * (1.0 - out))


def softplus(x):
    x = as_tensor(x)
    out = np.logaddexp(0.0, x.data).astype(x.data.dtype)
    d = x.data
    sig = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                   np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    return _unary(x, out, lambda g: g * sig.astype(d.dtype))


_GELU_C = 0.7978845608028654  # sqrt(2/pi)


def gelu(x):
    """Tanh-approximate GELU, built from differentiable primitives."""
    x = as_tensor(x)
    inner = tanh(mul(add(x, mul(power(x, 3.0), 0.044715)), _GELU_C))
    return mul(mul(x, 0.5), add(inner, 1.0))


# -- reductions ----------------------------------------------------------------

def reduce_sum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, x.data.shape).astype(x.data.dtype)

    return _unary(x, out, back)


def reduce_mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    return mul(reduce_sum(x, axis, keepdims), 1.0 / n)


def _reduce_extreme(x, axis, keepdims, fn, argfn):
    x = as_tensor(x)
    out = fn(x.data, axis=axis, keepdims=keepdims)
    # Subgradient routed to the first extremal element along the axis.
    if axis is None:
        hot = np.zeros_like(x.data)
        hot.flat[argfn(x.data)] = 1.0
    else:
        idx = argfn(x.data, axis=axis)
        hot = np.zeros_like(x.data)
        np.put_along_axis(hot, np.expand_dims(idx, axis), 1.0, axis=axis)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return hot * g

    return _unary(x, out, back)


def reduce_max(x, axis=None, keepdims=False):
    return _reduce_extreme(x, axis, keepdims, np.max, np.argmax)


def reduce_min(x, axis=None, keepdims=False):
    return _reduce_extreme(x, axis, keepdims, np.min, np.argmin)


# -- softmax family --------------------------------------------------------------

def softmax(x, axis=-1):
    """Row-stable softmax along ``axis`` (max subtraction in the forward pass)."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return out * (g - dot)

    return _unary(x, out, back)


def logsumexp(x, axis=None, keepdims=False):
    x = as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.log(s) + m
    if not keepdims and axis is not None:
        out = np.squeeze(out, axis=axis)
    elif axis is None and not keepdims:
        out = out.reshape(())
    soft = e / s

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return soft * g

    return _unary(x, out, back)


def l2_normalize(x, axis=-1):
    """Scale to unit Euclidean norm along ``axis``; zero vectors stay zero (warns)."""
    x = as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    zero = norm == 0.0
    if zero.any():
        warnings.warn("l2_normalize: zero-norm slice left as zeros", RuntimeWarning)
    safe = np.where(zero, 1.0, norm)
    out = x.data / safe

    def back(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        gx = (g - out * dot) / safe
        return np.where(zero, 0.0, gx)

    return _unary(x, out, back)


# -- structural ops ----------------------------------------------------------------

def reshape(x, shape):
    x = as_tensor(x)
    return _unary(x, x.data.reshape(shape), lambda g: g.reshape(x.data.shape))


def transpose(x, axes):
    x = as_tensor(x)
    inv = np.argsort(axes)
    return _unary(x, x.data.transpose(axes), lambda g: g.transpose(inv))


def take(x, indices, axis=0):
    """Gather slices along ``axis``; the adjoint scatter-adds."""
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.intp)
    out = np.take(x.data, indices, axis=axis)

    def back(g):
        gx = np.zeros_like(x.data)
        if axis == 0:
            np.add.at(gx, indices, g)
        else:
            gm = np.moveaxis(gx, axis, 0)
            np.add.at(gm, indices, np.moveaxis(g, axis, 0))
        return gx

    return _unary(x, out, back)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(out, _parents=tuple(tensors), _backward_fn=back)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def back(g):
        parts = np.split(g, len(tensors), axis=axis)
        return tuple(np.squeeze(p, axis=axis) for p in parts)

    return Tensor(out, _parents=tuple(tensors), _backward_fn=back)


def upsample2d(x, factor, axes=(1, 2)):
    """Nearest-neighbor upsample by an integer factor on two axes."""
    x = as_tensor(x)
    a0, a1 = axes
    out = np.repeat(np.repeat(x.data, factor, axis=a0), factor, axis=a1)

    def back(g):
        sh = list(g.shape)
        sh[a0] //= factor
        sh[a1] //= factor
        # Fold the repeats back by summing each factor x factor block.
        g = g.reshape(sh[:a0] + [sh[a0], factor] + list(g.shape[a0 + 1:]))
        g = g.sum(axis=a0 + 1)
        g = g.reshape(sh[:a1] + [sh[a1], factor] + list(g.shape[a1 + 1:]))
        return g.sum(axis=a1 + 1)

    return _unary(x, out, back)
