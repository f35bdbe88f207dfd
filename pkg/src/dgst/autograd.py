"""Reverse-mode automatic differentiation over dense numpy buffers.

Deliberately small: only the ops the seq2seq transferrers need. Float32 is
the production dtype, but every op is dtype-generic so the gradient-check
suite can run the identical code in float64. Any op that produces NaN/Inf
aborts with :class:`NumericalError`.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "NumericalError",
    "ShapeError",
    "no_grad",
    "constant",
    "zeros",
    "matmul",
    "linear",
    "add",
    "sub",
    "mul",
    "scale",
    "tanh",
    "sigmoid",
    "concat",
    "slice_cols",
    "embedding",
    "lstm_step",
    "mask_mix",
    "softmax_cross_entropy",
    "sum_all",
    "backward",
]


class NumericalError(ArithmeticError):
    """An op produced NaN or Inf."""


class ShapeError(ValueError):
    """Operand shapes do not agree."""


_grad_enabled = True


class no_grad:
    """Disable graph recording inside the block (generation, evaluation)."""

    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._saved
        return False


def _check_finite(data, op):
    # One-pass probe: the sum is non-finite iff some element is, except for
    # overflow of huge finite values; the full scan disambiguates that case.
    if not np.isfinite(data.sum()) and not np.all(np.isfinite(data)):
        raise NumericalError(f"non-finite values produced by {op}")


class Tensor:
    """A dense array plus the bookkeeping needed for reverse mode.

    Leaf tensors with ``requires_grad=True`` accumulate into ``.grad``;
    intermediate gradients live only for the duration of a backward pass.
    """

    __slots__ = ("data", "grad", "requires_grad", "parents", "vjp")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        _check_finite(arr, "tensor creation")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.parents = ()
        self.vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def constant(data, dtype=None):
    return Tensor(data, requires_grad=False, dtype=dtype)


def zeros(shape, dtype=np.float32):
    return Tensor(np.zeros(shape, dtype=dtype))


def _result(data, op, parents, vjp):
    """Wrap an op output, recording the graph edge when grads are on."""
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.parents = ()
    out.vjp = None
    out.requires_grad = False
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.vjp = vjp
    return out


def _unbroadcast(grad, shape):
    """Sum a gradient down to the shape it was broadcast from."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shapes do not agree: {a.data.shape} vs {b.data.shape}")
    out = a.data @ b.data

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _result(out, "matmul", (a, b), vjp)


def add(a, b):
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add shapes do not agree: {a.data.shape} vs {b.data.shape}") from None

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _result(out, "add", (a, b), vjp)


def sub(a, b):
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub shapes do not agree: {a.data.shape} vs {b.data.shape}") from None

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _result(out, "sub", (a, b), vjp)


def mul(a, b):
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul shapes do not agree: {a.data.shape} vs {b.data.shape}") from None

    def vjp(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _result(out, "mul", (a, b), vjp)


def scale(x, s):
    s = float(s)
    out = x.data * np.asarray(s, dtype=x.data.dtype)

    def vjp(g):
        return (g * np.asarray(s, dtype=g.dtype),)

    return _result(out, "scale", (x,), vjp)


def linear(x, w, b):
    """x @ w + b with bias broadcast over rows."""
    return add(matmul(x, w), b)


def tanh(x):
    out = np.tanh(x.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _result(out, "tanh", (x,), vjp)


def _sigmoid_values(z):
    # tanh form: overflow-free and a single vectorized C call
    return 0.5 * np.tanh(0.5 * z) + 0.5


def sigmoid(x):
    out = _sigmoid_values(x.data)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _result(out, "sigmoid", (x,), vjp)


def concat(parts, axis):
    parts = list(parts)
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(parts))
        )

    return _result(out, "concat", tuple(parts), vjp)


def slice_cols(x, start, stop):
    out = x.data[:, start:stop]

    def vjp(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return _result(np.ascontiguousarray(out), "slice_cols", (x,), vjp)


def embedding(emb, ids):
    """Row lookup emb[ids]; gradient scatter-adds into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= emb.data.shape[0]):
        raise ShapeError(f"embedding ids out of range for table {emb.data.shape}")
    out = emb.data[ids]

    def vjp(g):
        full = np.zeros_like(emb.data)
        np.add.at(full, ids, g)
        return (full,)

    return _result(out, "embedding", (emb,), vjp)


def _gates_input(x, wx, h_prev, wh, b):
    """Fused x @ wx + h_prev @ wh + b (one graph node, five parents)."""
    out = x.data @ wx.data + h_prev.data @ wh.data + b.data

    def vjp(g):
        return (
            g @ wx.data.T,
            x.data.T @ g,
            g @ wh.data.T,
            h_prev.data.T @ g,
            g.sum(axis=0),
        )

    return _result(out, "lstm_gates", (x, wx, h_prev, wh, b), vjp)


def _lstm_activation(z, c_prev):
    """Fused gate nonlinearities; returns [h | c] concatenated along axis 1.

    Gate layout along the 4H axis is input, forget, candidate, output:
    i,f,o = sigmoid, g = tanh, c = f*c_prev + i*g, h = o*tanh(c).
    """
    hidden = c_prev.data.shape[1]
    zd = z.data
    i = _sigmoid_values(zd[:, :hidden])
    f = _sigmoid_values(zd[:, hidden : 2 * hidden])
    g_cand = np.tanh(zd[:, 2 * hidden : 3 * hidden])
    o = _sigmoid_values(zd[:, 3 * hidden :])
    c = f * c_prev.data + i * g_cand
    tanh_c = np.tanh(c)
    out = np.concatenate([o * tanh_c, c], axis=1)

    def vjp(grad):
        gh = grad[:, :hidden]
        dc = gh * o * (1.0 - tanh_c * tanh_c) + grad[:, hidden:]
        dz = np.concatenate(
            [
                dc * g_cand * i * (1.0 - i),
                dc * c_prev.data * f * (1.0 - f),
                dc * i * (1.0 - g_cand * g_cand),
                gh * tanh_c * o * (1.0 - o),
            ],
            axis=1,
        )
        return dz, dc * f

    return _result(out, "lstm_activation", (z, c_prev), vjp)


def lstm_step(x, h_prev, c_prev, wx, wh, b):
    """One LSTM cell update; returns (h, c)."""
    hidden = h_prev.data.shape[1]
    if wx.data.shape[1] != 4 * hidden or wh.data.shape != (hidden, 4 * hidden):
        raise ShapeError(
            f"lstm_step weight shapes {wx.data.shape}/{wh.data.shape} do not "
            f"match hidden size {hidden}"
        )
    if x.data.shape[0] != h_prev.data.shape[0] or x.data.shape[1] != wx.data.shape[0]:
        raise ShapeError(
            f"lstm_step input {x.data.shape} does not match wx {wx.data.shape} "
            f"and state {h_prev.data.shape}"
        )
    hc = _lstm_activation(_gates_input(x, wx, h_prev, wh, b), c_prev)
    return slice_cols(hc, 0, hidden), slice_cols(hc, hidden, 2 * hidden)


def mask_mix(new, old, keep):
    """keep * new + (1 - keep) * old with a constant [B, 1] keep column."""
    k = keep.data
    out = k * new.data + (1.0 - k) * old.data

    def vjp(g):
        return g * k, g * (1.0 - k)

    return _result(out, "mask_mix", (new, old), vjp)


def softmax_cross_entropy(logits, targets, mask=None):
    """Mean negative log softmax probability of each target over unmasked rows.

    Fused op: the value is the scalar loss, the vjp is
    (softmax - onehot) / count on unmasked rows and 0 elsewhere.
    """
    z = logits.data
    n, v = z.shape
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (n,):
        raise ShapeError(f"targets shape {targets.shape} does not match logits rows {n}")
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        raise ShapeError(f"target id out of range for {v} classes")
    if mask is None:
        mask = np.ones(n, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("softmax_cross_entropy: all positions are masked")

    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted[np.arange(n), targets] - lse
    loss = -(logp * mask).sum() / count
    loss = np.asarray(loss, dtype=z.dtype)

    def vjp(g):
        probs = np.exp(shifted - lse[:, None])
        probs[np.arange(n), targets] -= 1.0
        probs *= (mask.astype(z.dtype) / count)[:, None]
        return (probs * g,)

    return _result(loss, "softmax_cross_entropy", (logits,), vjp)


def sum_all(x):
    out = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def vjp(g):
        return (np.broadcast_to(g, x.data.shape).astype(x.data.dtype),)

    return _result(out, "sum_all", (x,), vjp)


def _toposort(root):
    """Iterative post-order over the recorded graph (graphs get deep)."""
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
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``.grad``."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.parents:
        raise ValueError("backward without a recorded forward pass")
    order = _toposort(loss)
    # Stored arrays are never mutated in place: a vjp may hand the same
    # array object to several parents (add with equal shapes), so
    # accumulation always allocates a fresh sum.
    flowing = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = flowing.pop(id(node), None)
        if g is None or not node.requires_grad:
            continue
        if not node.parents:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if not parent.requires_grad:
                continue
            acc = flowing.get(id(parent))
            flowing[id(parent)] = pg if acc is None else acc + pg
