"""Reverse-mode differentiation over float64 numpy arrays.

Deliberately small: only the primitives needed to express dense tanh
networks, lifted one-step residual losses, and finite-horizon tracking
costs (affine maps, tanh, elementwise arithmetic, batched matrix-vector
products, sums of squares). There is no general taping of user code.
"""

from __future__ import annotations

import numpy as np


class NonFiniteError(FloatingPointError):
    """A differentiated scalar evaluated to NaN or infinity."""


def _as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """Node in the computation tape wrapping a float64 ndarray."""

    __slots__ = ("value", "grad", "_parents")

    def __init__(self, value, parents=()):
        self.value = _as_f64(value)
        self.grad = None
        self._parents = parents

    @property
    def shape(self):
        return self.value.shape

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        other = _wrap(other)
        out = Tensor(self.value + other.value, (
            (self, lambda g: _unbroadcast(g, self.value.shape)),
            (other, lambda g: _unbroadcast(g, other.value.shape)),
        ))
        return out

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.value, ((self, lambda g: -g),))

    def __sub__(self, other):
        return self + (-_wrap(other))

    def __rsub__(self, other):
        return _wrap(other) + (-self)

    def __mul__(self, other):
        other = _wrap(other)
        a, b = self.value, other.value
        return Tensor(a * b, (
            (self, lambda g: _unbroadcast(g * b, a.shape)),
            (other, lambda g: _unbroadcast(g * a, b.shape)),
        ))

    __rmul__ = __mul__

    def __matmul__(self, other):
        other = _wrap(other)
        a, b = self.value, other.value
        if a.ndim != 2 or b.ndim not in (1, 2):
            raise ValueError("matmul supports (n,k)@(k,m) and (n,k)@(k,)")
        if b.ndim == 2:
            parents = (
                (self, lambda g: g @ b.T),
                (other, lambda g: a.T @ g),
            )
        else:
            parents = (
                (self, lambda g: np.outer(g, b)),
                (other, lambda g: a.T @ g),
            )
        return Tensor(a @ b, parents)

    # -- shape ops --------------------------------------------------------

    def reshape(self, *shape):
        old = self.value.shape
        return Tensor(self.value.reshape(*shape),
                      ((self, lambda g: g.reshape(old)),))

    def __getitem__(self, key):
        value = self.value[key]

        def vjp(g, key=key, shape=self.value.shape):
            full = np.zeros(shape)
            full[key] = g
            return full

        return Tensor(value, ((self, vjp),))

    # -- reductions / nonlinearities ---------------------------------------

    def sum(self):
        shape = self.value.shape
        return Tensor(self.value.sum(),
                      ((self, lambda g: np.broadcast_to(g, shape).copy()),))

    def sum_sq(self):
        """Sum of squared entries as a scalar node."""
        v = self.value
        return Tensor((v * v).sum(), ((self, lambda g: (2.0 * g) * v),))

    def tanh(self):
        t = np.tanh(self.value)
        return Tensor(t, ((self, lambda g: g * (1.0 - t * t)),))

    # -- backward pass ------------------------------------------------------

    def backward(self):
        """Accumulate gradients of this scalar into every tape node."""
        if self.value.shape != ():
            raise ValueError("backward() requires a scalar")
        if not np.isfinite(self.value):
            raise NonFiniteError("non-finite value in differentiated scalar")
        order = _toposort(self)
        self.grad = np.float64(1.0)
        for node in order:
            g = node.grad
            if g is None:
                continue
            for parent, vjp in node._parents:
                contrib = vjp(g)
                if parent.grad is None:
                    parent.grad = np.array(contrib, dtype=np.float64, copy=True)
                else:
                    parent.grad += contrib


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    """Tape node that never receives a gradient of interest (still valid)."""
    return Tensor(x)


def _toposort(root: Tensor):
    """Reverse topological order via iterative postorder DFS."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order[::-1]


# -- composite primitives ----------------------------------------------------


def concat(tensors, axis=0) -> Tensor:
    """Concatenate tape nodes along an axis."""
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.value.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    value = np.concatenate([t.value for t in tensors], axis=axis)

    parents = []
    for t, a, b in zip(tensors, offsets[:-1], offsets[1:]):
        idx = [slice(None)] * value.ndim
        idx[axis] = slice(a, b)
        idx = tuple(idx)
        parents.append((t, lambda g, idx=idx: g[idx]))
    return Tensor(value, tuple(parents))


def matvec(a, v) -> Tensor:
    """(p, q) matrix times (q,) vector."""
    a, v = _wrap(a), _wrap(v)
    av, vv = a.value, v.value
    return Tensor(av @ vv, (
        (a, lambda g: np.outer(g, vv)),
        (v, lambda g: av.T @ g),
    ))


def batched_matvec(k, v) -> Tensor:
    """Per-sample matrix-vector products: (n,p,q) x (n,q) -> (n,p)."""
    k, v = _wrap(k), _wrap(v)
    kv, vv = k.value, v.value
    out = np.einsum("npq,nq->np", kv, vv)
    return Tensor(out, (
        (k, lambda g: g[:, :, None] * vv[:, None, :]),
        (v, lambda g: np.einsum("npq,np->nq", kv, g)),
    ))


def value_and_grad(fn, x: np.ndarray):
    """Evaluate ``fn`` on a leaf wrapping ``x`` and return (value, d/dx).

    ``fn`` must map a Tensor to a scalar Tensor using tape primitives only.
    """
    leaf = Tensor(x)
    out = fn(leaf)
    out.backward()
    g = leaf.grad
    if g is None:
        g = np.zeros_like(leaf.value)
    return float(out.value), np.asarray(g, dtype=np.float64)


def gradient(fn, x: np.ndarray) -> np.ndarray:
    """Gradient of a tape-expressible scalar function at ``x``."""
    return value_and_grad(fn, x)[1]
