"""Reverse-mode automatic differentiation over numpy arrays.

A `Tensor` wraps an ndarray and remembers how it was produced; calling
`backward()` on a scalar result walks the recorded graph once in reverse
topological order and accumulates gradients into every leaf that was created
with ``requires_grad=True``. The primitive set is deliberately small: it
covers the separation network (framed convolutions, dense layers via matmul,
depthwise dilated convolution, PReLU/ReLU/sigmoid, instance normalization)
and the log-domain losses, and nothing else.

Gradients flow only through continuous operations. Discrete choices such as
the best output-to-mixture assignment are made outside the graph and held
fixed, which yields the standard piecewise subgradient.
"""

import contextlib

import numpy as np
from scipy.special import expit

from . import kernels
from .errors import InputError, NumericError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, finite diffs)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled():
    return _grad_enabled


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """An ndarray with an optional gradient and a record of its parents."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def detach(self):
        return Tensor(self.data)

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate gradients of this (scalar) tensor into the leaves."""
        if grad is None:
            if self.data.size != 1:
                raise InputError(
                    f"backward() needs a scalar output, got shape {self.data.shape}"
                )
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)

        # Iterative depth-first topological sort; recursion would overflow on
        # graphs with hundreds of chained blocks.
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        _accumulate(self, grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar; every op is also available as a module function.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_coerce(other, self)))

    def __rsub__(self, other):
        return add(_coerce(other, self), neg(self))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _accumulate(tensor, grad):
    if tensor.grad is None:
        tensor.grad = grad
    else:
        tensor.grad = tensor.grad + grad


def _coerce(value, like):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _make(data, parents, backward):
    out = Tensor(data)
    tracked = _grad_enabled and any(p.requires_grad for p in parents)
    if tracked:
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def add(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _coerce(b, a)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def neg(a):
    def backward(g):
        _accumulate(a, -g)

    return _make(-a.data, (a,), backward)


def mul(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _coerce(b, a)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def matmul(a, w):
    """`a` of shape (..., C) times `w` of shape (C, D)."""
    if w.data.ndim != 2 or a.data.shape[-1] != w.data.shape[0]:
        raise InputError(
            f"matmul shapes {a.data.shape} and {w.data.shape} do not chain"
        )
    data = a.data @ w.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g @ w.data.T)
        if w.requires_grad:
            a2d = a.data.reshape(-1, a.data.shape[-1])
            g2d = g.reshape(-1, g.shape[-1])
            _accumulate(w, a2d.T @ g2d)

    return _make(data, (a, w), backward)


def relu(a):
    mask = a.data > 0

    def backward(g):
        _accumulate(a, g * mask)

    return _make(np.where(mask, a.data, 0), (a,), backward)


def prelu(a, slope):
    """Leaky rectifier with a trainable slope broadcast against `a`."""
    mask = a.data > 0
    data = np.where(mask, a.data, slope.data * a.data)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * np.where(mask, 1, slope.data))
        if slope.requires_grad:
            _accumulate(
                slope,
                _unbroadcast(g * np.where(mask, 0, a.data), slope.data.shape),
            )

    return _make(data, (a, slope), backward)


def sigmoid(a):
    y = expit(a.data)

    def backward(g):
        _accumulate(a, g * y * (1 - y))

    return _make(y, (a,), backward)


def log10(a):
    if np.any(a.data <= 0):
        raise NumericError("log10 input must be strictly positive")
    data = np.log10(a.data)
    scale = 1.0 / (a.data * np.log(10.0))

    def backward(g):
        _accumulate(a, g * scale)

    return _make(data, (a,), backward)


def square(a):
    def backward(g):
        _accumulate(a, g * (2 * a.data))

    return _make(np.square(a.data), (a,), backward)


def tensor_sum(a, axis=None, keepdims=False):
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.data.shape).astype(a.data.dtype))

    return _make(data, (a,), backward)


def tensor_mean(a, axis=None, keepdims=False):
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in np.atleast_1d(axis)]
    )

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        scaled = g / count
        _accumulate(a, np.broadcast_to(scaled, a.data.shape).astype(a.data.dtype))

    return _make(data, (a,), backward)


def reshape(a, shape):
    old = a.data.shape

    def backward(g):
        _accumulate(a, g.reshape(old))

    return _make(a.data.reshape(shape), (a,), backward)


def moveaxis(a, source, destination):
    def backward(g):
        _accumulate(a, np.moveaxis(g, destination, source))

    return _make(np.moveaxis(a.data, source, destination), (a,), backward)


def concat(tensors, axis=0):
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                _accumulate(t, piece)

    return _make(data, tuple(tensors), backward)


def getitem(a, key):
    data = a.data[key]

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] += g
        _accumulate(a, full)

    return _make(data, (a,), backward)


def frame(a, length, hop):
    """Window a (B, T) tensor into (B, F, length) hops; adjoint is overlap-add."""
    T = a.data.shape[-1]
    data = kernels.frame(np.ascontiguousarray(a.data), length, hop)

    def backward(g):
        _accumulate(a, kernels.overlap_add(np.ascontiguousarray(g), hop, T))

    return _make(data, (a,), backward)


def overlap_add(a, hop, out_len):
    """Sum (B, F, L) windows back into (B, out_len); adjoint is framing."""
    L = a.data.shape[-1]
    data = kernels.overlap_add(np.ascontiguousarray(a.data), hop, out_len)

    def backward(g):
        _accumulate(a, kernels.frame(np.ascontiguousarray(g), L, hop))

    return _make(data, (a,), backward)


def depthwise(a, w, dilation):
    """Per-channel dilated convolution over the frame axis of (B, F, C)."""
    k = w.data.shape[0]
    data = kernels.depthwise_forward(
        np.ascontiguousarray(a.data), np.ascontiguousarray(w.data), dilation
    )

    def backward(g):
        g = np.ascontiguousarray(g)
        if a.requires_grad:
            _accumulate(
                a,
                kernels.depthwise_grad_input(
                    g, np.ascontiguousarray(w.data), dilation
                ),
            )
        if w.requires_grad:
            _accumulate(
                w,
                kernels.depthwise_grad_weight(
                    g, np.ascontiguousarray(a.data), dilation, k
                ),
            )

    return _make(data, (a, w), backward)


def instance_norm(a, gamma, beta, eps=1e-8):
    """Zero-mean unit-variance per channel across frames, then scale and shift.

    `a` is (B, F, C); statistics are taken over the frame axis independently
    for every example and channel, so no information crosses the batch.
    """
    if a.data.shape[1] < 2:
        raise InputError("instance norm needs at least 2 frames")
    mu = a.data.mean(axis=1, keepdims=True)
    centered = a.data - mu
    var = np.mean(np.square(centered), axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=a.data.dtype))
    y = centered * inv
    data = gamma.data * y + beta.data

    def backward(g):
        gy = g * gamma.data
        if a.requires_grad:
            # Differentiating through the frame-axis mean and variance folds
            # into two correction terms against the normalized output.
            m1 = gy.mean(axis=1, keepdims=True)
            m2 = np.mean(gy * y, axis=1, keepdims=True)
            _accumulate(a, inv * (gy - m1 - y * m2))
        if gamma.requires_grad:
            _accumulate(gamma, _unbroadcast(g * y, gamma.data.shape))
        if beta.requires_grad:
            _accumulate(beta, _unbroadcast(g, beta.data.shape))

    return _make(data, (a, gamma, beta), backward)


def conv1d_encode(x, basis, hop):
    """Strided 1-D convolution of (B, T) with an analysis basis (L, N)."""
    return matmul(frame(x, basis.data.shape[0], hop), basis)


def conv1d_decode(coeffs, basis, hop, out_len):
    """Transposed 1-D convolution of (B, F, N) with a synthesis basis (N, L)."""
    return overlap_add(matmul(coeffs, basis), hop, out_len)


def gradcheck(build, leaves, eps=1e-5, floor=1e-6):
    """Max relative error between backward() and central finite differences.

    `build` is a zero-argument callable returning a scalar Tensor computed
    from `leaves`; it is re-evaluated with each leaf coordinate nudged by
    ±eps. The relative error denominator is floored so coordinates where
    both gradients vanish compare at absolute scale.
    """
    for leaf in leaves:
        leaf.grad = None
        if not leaf.data.flags.c_contiguous:
            raise InputError("gradcheck leaves must be contiguous")
    out = build()
    if out.data.size != 1:
        raise InputError("gradcheck target must be scalar")
    out.backward()
    analytic = [
        np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad.copy()
        for leaf in leaves
    ]

    worst = 0.0
    for leaf, ana in zip(leaves, analytic):
        flat = leaf.data.reshape(-1)
        ana_flat = ana.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            with no_grad():
                hi = float(build().data)
            flat[i] = saved - eps
            with no_grad():
                lo = float(build().data)
            flat[i] = saved
            fd = (hi - lo) / (2 * eps)
            err = abs(ana_flat[i] - fd) / max(abs(ana_flat[i]), abs(fd), floor)
            worst = max(worst, err)
    return worst
