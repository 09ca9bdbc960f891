"""Minimal reverse-mode differentiation over numpy arrays.

Each op builds a :class:`Tensor` that remembers its parents and a closure
mapping the output gradient to parent gradients. ``Tensor.backward`` walks
the graph in reverse topological order. Ops are fused where that keeps the
backward pass simple and numerically stable (softmax, layer norm, conv).
"""
from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()
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
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # make numpy defer to the reflected operators below
    __array_ufunc__ = None

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: add(self, neg(_wrap(other)))
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, other: matmul(self, other)
    __rmatmul__ = lambda self, other: matmul(other, self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, req, parents if req else (), backward if req else None)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))
    return _make(a.data + b.data, (a, b), backward)


def neg(a) -> Tensor:
    return _make(-a.data, (a,), lambda g: a._accumulate(-g))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))
    return _make(a.data * b.data, (a, b), backward)


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes, with broadcasting."""
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))
    return _make(a.data @ b.data, (a, b), backward)


def swap_last(a) -> Tensor:
    return _make(np.swapaxes(a.data, -1, -2), (a,),
                 lambda g: a._accumulate(np.swapaxes(g, -1, -2)))


def reshape(a, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: a._accumulate(g.reshape(a.shape)))


def silu(a) -> Tensor:
    sig = 1.0 / (1.0 + np.exp(-a.data))
    out = a.data * sig
    return _make(out, (a,), lambda g: a._accumulate(g * (sig + out * (1.0 - sig))))


def mean(a) -> Tensor:
    n = a.data.size
    return _make(a.data.mean(), (a,), lambda g: a._accumulate(np.full(a.shape, g / n)))


def mse(pred, target) -> Tensor:
    """Mean of squared differences over every entry."""
    pred, target = _wrap(pred), _wrap(target)
    diff = pred.data - target.data
    n = diff.size

    def backward(g):
        if pred.requires_grad:
            pred._accumulate(g * 2.0 * diff / n)
        if target.requires_grad:
            target._accumulate(-g * 2.0 * diff / n)
    return _make(np.mean(diff * diff), (pred, target), backward)


def layer_norm(x, gain, bias, eps=1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            gain._accumulate(_unbroadcast(g * xhat, gain.shape))
        if bias.requires_grad:
            bias._accumulate(_unbroadcast(g, bias.shape))
        if x.requires_grad:
            gh = g * gain.data
            dx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
            x._accumulate(dx)
    return _make(out, (x, gain, bias), backward)


def masked_softmax(logits, mask) -> Tensor:
    """Row softmax over the last axis where ``mask`` is False gets weight 0.

    Masked logits are dropped before the max is taken, so unmasked weights do
    not depend on masked entries at all. Every row needs one allowed entry.
    """
    mask = np.asarray(mask, dtype=bool)
    z = np.where(mask, logits.data, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        logits._accumulate(p * (g - (g * p).sum(axis=-1, keepdims=True)))
    return _make(p, (logits,), backward)


def conv1d(x, w, b) -> Tensor:
    """Same-padded 1-D convolution along axis -2.

    ``x`` is ``(..., L, Cin)``, ``w`` is ``(K, Cin, Cout)`` with odd ``K``,
    ``b`` is ``(Cout,)``.
    """
    k = w.shape[0]
    if k % 2 != 1:
        raise ValueError("kernel size must be odd")
    half = k // 2
    length = x.shape[-2]
    pad = [(0, 0)] * (x.data.ndim - 2) + [(half, half), (0, 0)]
    xp = np.pad(x.data, pad)
    out = b.data + sum(xp[..., i:i + length, :] @ w.data[i] for i in range(k))

    def backward(g):
        if b.requires_grad:
            b._accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))
        if w.requires_grad:
            gw = np.empty_like(w.data)
            g2 = g.reshape(-1, g.shape[-1])
            for i in range(k):
                gw[i] = xp[..., i:i + length, :].reshape(-1, xp.shape[-1]).T @ g2
            w._accumulate(gw)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(k):
                gxp[..., i:i + length, :] += g @ w.data[i].T
            x._accumulate(gxp[..., half:half + length, :])
    return _make(out, (x, w, b), backward)


def pool2(x) -> Tensor:
    """Average adjacent pairs along axis -2 (length must be even)."""
    *lead, length, c = x.shape
    out = x.data.reshape(*lead, length // 2, 2, c).mean(axis=-2)
    return _make(out, (x,), lambda g: x._accumulate(np.repeat(g, 2, axis=-2) * 0.5))


def upsample2(x) -> Tensor:
    """Repeat every row along axis -2 twice."""
    *lead, length, c = x.shape

    def backward(g):
        x._accumulate(g.reshape(*lead, length, 2, c).sum(axis=-2))
    return _make(np.repeat(x.data, 2, axis=-2), (x,), backward)
