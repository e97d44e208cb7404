"""Minimal reverse-mode autodiff over dense float64 arrays.

Define-by-run: every op returns a new Tensor that remembers its parents
and a closure that routes the incoming gradient to them.  Broadcasting is
restricted to leading axes (a trailing-aligned smaller shape must match
exactly), which keeps every backward rule auditable.
"""

from __future__ import annotations

import numpy as np


class AutodiffError(ValueError):
    pass


class ShapeError(AutodiffError):
    pass


class NonFiniteError(AutodiffError):
    pass


class Tensor:
    """Dense float64 array node in the computation graph."""

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, *, op="leaf", parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = op
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def item(self):
        return float(self.data.reshape(-1)[0])


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(out, op):
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"non-finite output of op '{op}'")
    return out


def _check_broadcast(a_shape, b_shape, op):
    """Allow equal shapes or broadcast of the smaller over leading axes."""
    small, big = sorted((a_shape, b_shape), key=len)
    if small == big:
        return
    if big[len(big) - len(small):] != small:
        raise ShapeError(f"op '{op}': shapes {a_shape} and {b_shape} not "
                         f"broadcastable over leading axes")


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of leading-axis broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _node(data, parents, backward, op):
    rq = any(p.requires_grad for p in parents)
    _check_finite(data, op)
    return Tensor(data, rq, op=op, parents=parents, backward=backward if rq else None)


# ---------------------------------------------------------------------------
# elementwise and linear-algebra primitives


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape, "add")
    out = a.data + b.data

    def bwd(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return _node(out, (a, b), bwd, "add")


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape, "sub")
    out = a.data - b.data

    def bwd(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)

    return _node(out, (a, b), bwd, "sub")


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape, "mul")
    out = a.data * b.data

    def bwd(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _node(out, (a, b), bwd, "mul")


def scale(a, c):
    a = _as_tensor(a)
    c = float(c)
    out = a.data * c

    def bwd(g):
        return (g * c,)

    return _node(out, (a,), bwd, "scale")


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bwd(g):
        ga = (_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
              if a.requires_grad else None)
        gb = (_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
              if b.requires_grad else None)
        return ga, gb

    return _node(out, (a, b), bwd, "matmul")


def transpose(a):
    a = _as_tensor(a)
    if a.data.ndim < 2:
        raise ShapeError(f"transpose needs >=2-d operand, got {a.shape}")
    out = np.swapaxes(a.data, -1, -2)

    def bwd(g):
        return (np.swapaxes(g, -1, -2),)

    return _node(out, (a,), bwd, "transpose")


def reshape(a, shape):
    a = _as_tensor(a)
    out = a.data.reshape(shape)
    in_shape = a.data.shape

    def bwd(g):
        return (g.reshape(in_shape),)

    return _node(out, (a,), bwd, "reshape")


def gather_rows(a, idx):
    """Select rows of `a` along axis 0 by integer index array."""
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"gather_rows index out of range for {a.shape[0]} rows")
    out = a.data[idx]

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _node(out, (a,), bwd, "gather_rows")


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(out, tuple(tensors), bwd, "concat")


def relu(a):
    a = _as_tensor(a)
    out = np.maximum(a.data, 0.0)
    mask = a.data > 0.0

    def bwd(g):
        return (g * mask,)

    return _node(out, (a,), bwd, "relu")


def exp(a):
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)  # overflow surfaces as NonFiniteError below

    def bwd(g):
        return (g * out,)

    return _node(out, (a,), bwd, "exp")


def log(a):
    a = _as_tensor(a)
    if np.any(a.data <= 0.0):
        raise NonFiniteError("log of non-positive value")
    out = np.log(a.data)

    def bwd(g):
        return (g / a.data,)

    return _node(out, (a,), bwd, "log")


def sin(a):
    a = _as_tensor(a)
    out = np.sin(a.data)

    def bwd(g):
        return (g * np.cos(a.data),)

    return _node(out, (a,), bwd, "sin")


def cos(a):
    a = _as_tensor(a)
    out = np.cos(a.data)

    def bwd(g):
        return (-g * np.sin(a.data),)

    return _node(out, (a,), bwd, "cos")


# ---------------------------------------------------------------------------
# reductions


def sum_(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    in_shape = a.data.shape

    def bwd(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, in_shape),)

    return _node(out, (a,), bwd, "sum")


def mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def squared_norm(a, axis=None):
    """Sum of squares over all entries (axis=None) or one axis."""
    return sum_(mul(a, a), axis=axis)


# ---------------------------------------------------------------------------
# normalization / attention / control


def softmax(a, temperature=1.0, axis=-1):
    a = _as_tensor(a)
    if temperature <= 0.0:
        raise AutodiffError(f"softmax temperature must be > 0, got {temperature}")
    x = a.data / temperature
    x = x - x.max(axis=axis, keepdims=True)
    e = np.exp(x)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot) / temperature,)

    return _node(out, (a,), bwd, "softmax")


def layer_norm(a, eps=1e-5):
    """Normalize the last axis to zero mean, unit variance (no affine)."""
    a = _as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = xc * inv

    def bwd(g):
        gy = g * inv
        return (gy - gy.mean(axis=-1, keepdims=True)
                - out * (gy * out).mean(axis=-1, keepdims=True),)

    return _node(out, (a,), bwd, "layer_norm")


_MASK_FILL = -1e30


def attention(q, k, v, causal=False):
    """Fused scaled dot-product attention over the last two axes.

    q, k, v: (..., T, dh).  With causal=True position j attends only to
    positions <= j.
    """
    q, k, v = _as_tensor(q), _as_tensor(k), _as_tensor(v)
    if q.shape != k.shape or k.shape != v.shape:
        raise ShapeError(f"attention operands must share shape, got "
                         f"{q.shape}, {k.shape}, {v.shape}")
    t, dh = q.shape[-2], q.shape[-1]
    inv_sqrt = 1.0 / np.sqrt(dh)
    scores = np.matmul(q.data, np.swapaxes(k.data, -1, -2)) * inv_sqrt
    if causal:
        mask = np.triu(np.ones((t, t), dtype=bool), k=1)
        scores = np.where(mask, _MASK_FILL, scores)
    scores = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    p = e / e.sum(axis=-1, keepdims=True)
    out = np.matmul(p, v.data)

    def bwd(g):
        gv = np.matmul(np.swapaxes(p, -1, -2), g)
        gp = np.matmul(g, np.swapaxes(v.data, -1, -2))
        gs = p * (gp - (gp * p).sum(axis=-1, keepdims=True))
        gq = np.matmul(gs, k.data) * inv_sqrt
        gk = np.matmul(np.swapaxes(gs, -1, -2), q.data) * inv_sqrt
        return gq, gk, gv

    return _node(out, (q, k, v), bwd, "attention")


def stop_gradient(a):
    """Identity in forward, zero gradient in backward."""
    a = _as_tensor(a)
    return Tensor(a.data.copy(), requires_grad=False, op="stop_gradient")


# ---------------------------------------------------------------------------
# backward pass and gradient checking


def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root):
    """Accumulate gradients of a scalar `root` into every node's .grad."""
    if root.data.size != 1:
        raise AutodiffError(f"backward root must be scalar, got shape {root.shape}")
    order = _toposort(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._backward(node.grad)):
            if g is None or (not parent.requires_grad and parent._backward is None):
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad = parent.grad + g


def grad_check(fn, tensors, wrt, eps=1e-5):
    """Max relative error between backward and central differences.

    fn(tensors) -> scalar Tensor; `wrt` names the entry of `tensors` to
    perturb.  Error metric per coordinate: |a - n| / max(1, |a|, |n|).
    """
    if not (0.0 < eps <= 1e-3):
        raise AutodiffError(f"eps must be in (0, 1e-3], got {eps}")
    leaf = tensors[wrt]
    root = fn(tensors)
    backward(root)
    analytic = (leaf.grad if leaf.grad is not None
                else np.zeros_like(leaf.data)).copy()
    numeric = np.zeros_like(leaf.data)
    flat = leaf.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = fn(tensors).item()
        flat[i] = orig - eps
        lo = fn(tensors).item()
        flat[i] = orig
        nflat[i] = (hi - lo) / (2.0 * eps)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom)) if flat.size else 0.0
