"""Tape-based reverse-mode autodiff over numpy float64 arrays.

Each op builds a node holding the forward value and a closure that pushes the
incoming gradient to its parents. `backward(root)` runs one reverse sweep in
topological order. Stochastic ops take their noise draws as explicit arrays,
so a rebuilt graph with the same draws is bit-identical and the reverse sweep
differentiates the exact sampled path.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    """A graph node: forward value, accumulated gradient, reverse closure."""

    __slots__ = ("data", "grad", "_parents", "_backward", "is_const")

    def __init__(self, data, parents=(), backward_fn=None, is_const=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward_fn
        self.is_const = is_const

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, const={self.is_const})"

    # operator sugar; all arithmetic funnels through the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(const(np.asarray(other, dtype=np.float64)), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def __abs__(self):
        return absval(self)


def const(data) -> Tensor:
    """A constant leaf: participates in forward math, receives no gradient."""
    return Tensor(data, is_const=True)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else const(np.asarray(x, dtype=np.float64))


def _accum(t: Tensor, g: np.ndarray):
    if t.is_const:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcasted gradient back to the parent's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(root: Tensor, seed: np.ndarray | None = None):
    """Reverse sweep from ``root``; gradients accumulate on non-const nodes."""
    topo = []
    visited = set()
    stack = [(root, False)]
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
            if id(p) not in visited:
                stack.append((p, False))
    root.grad = np.ones_like(root.data) if seed is None else np.asarray(seed, dtype=np.float64)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---- arithmetic ----


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def back(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return Tensor(out_data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data

    def back(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return Tensor(out_data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def back(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, (a, b), back)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data / b.data

    def back(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return Tensor(out_data, (a, b), back)


def absval(a: Tensor) -> Tensor:
    """|a| with the subgradient convention sign(0) = 0."""
    a = _as_tensor(a)
    sgn = np.sign(a.data)

    def back(g):
        _accum(a, g * sgn)

    return Tensor(np.abs(a.data), (a,), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def back(g):
        if not a.is_const:
            _accum(a, g @ b.data.T)
        if not b.is_const:
            _accum(b, a.data.T @ g)

    return Tensor(a.data @ b.data, (a, b), back)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused dense layer x @ w + b (rows are batch entries)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    out_data = x.data @ w.data + b.data

    def back(g):
        if not x.is_const:
            _accum(x, g @ w.data.T)
        if not w.is_const:
            _accum(w, x.data.T @ g)
        _accum(b, _unbroadcast(g, b.data.shape))

    return Tensor(out_data, (x, w, b), back)


# ---- reductions / shaping ----


def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    x = _as_tensor(x)
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.data.shape).copy())

    return Tensor(out_data, (x,), back)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def dotsum(x: Tensor, weights: np.ndarray) -> Tensor:
    """sum_i w_i * x_i over a flat batch, summed in canonical (sorted) order.

    Sorting the summands before adding makes the value an exact function of
    the multiset of contributions, so the loss is bit-invariant under batch
    permutation. The gradient (d/dx_i = w_i) does not depend on the order.
    """
    x = _as_tensor(x)
    w = np.asarray(weights, dtype=np.float64)
    terms = np.sort((x.data * w).ravel())

    def back(g):
        _accum(x, g * w)

    return Tensor(terms.sum(), (x,), back)


def weighted_colsum(x: Tensor, weights: np.ndarray) -> Tensor:
    """Per-column sum_r w_r * x_rc in canonical order; (R, C) -> (C,)."""
    x = _as_tensor(x)
    w = np.asarray(weights, dtype=np.float64)
    terms = np.sort(x.data * w[:, None], axis=0)

    def back(g):
        _accum(x, w[:, None] * g[None, :])

    return Tensor(terms.sum(axis=0), (x,), back)


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)

    def back(g):
        _accum(x, g.reshape(x.data.shape))

    return Tensor(x.data.reshape(shape), (x,), back)


def concat(tensors, axis=-1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return Tensor(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back)


def getitem(x: Tensor, key) -> Tensor:
    x = _as_tensor(x)

    def back(g):
        if not x.is_const:
            full = np.zeros_like(x.data)
            full[key] = g
            _accum(x, full)

    return Tensor(x.data[key], (x,), back)


def repeat_rows(x: Tensor, k: int) -> Tensor:
    """Repeat each row k times along axis 0 (used to fan a batch out to K samples)."""
    x = _as_tensor(x)
    n = x.data.shape[0]

    def back(g):
        _accum(x, g.reshape((n, k) + x.data.shape[1:]).sum(axis=1))

    return Tensor(np.repeat(x.data, k, axis=0), (x,), back)


# ---- nonlinearities ----


def exp(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out_data = np.exp(x.data)

    def back(g):
        _accum(x, g * out_data)

    return Tensor(out_data, (x,), back)


def log(x: Tensor) -> Tensor:
    x = _as_tensor(x)

    def back(g):
        _accum(x, g / x.data)

    return Tensor(np.log(x.data), (x,), back)


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out_data = np.tanh(x.data)

    def back(g):
        _accum(x, g * (1.0 - out_data * out_data))

    return Tensor(out_data, (x,), back)


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out_data = np.empty_like(x.data)
    pos = x.data >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def back(g):
        _accum(x, g * out_data * (1.0 - out_data))

    return Tensor(out_data, (x,), back)


def elu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    neg = x.data < 0
    out_data = np.where(neg, np.expm1(x.data), x.data)

    def back(g):
        _accum(x, g * np.where(neg, out_data + 1.0, 1.0))

    return Tensor(out_data, (x,), back)


def relu_mask(x: Tensor, mask: np.ndarray) -> Tensor:
    """Multiply by a constant 0/1 mask (masking inactive loop iterations)."""
    return mul(x, np.asarray(mask, dtype=np.float64))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        _accum(x, out_data * (g - inner))

    return Tensor(out_data, (x,), back)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse

    def back(g):
        _accum(x, g - np.exp(out_data) * g.sum(axis=axis, keepdims=True))

    return Tensor(out_data, (x,), back)


def logsumexp(x: Tensor, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    out_keep = m + np.log(np.exp(x.data - m).sum(axis=axis, keepdims=True))
    out_data = np.squeeze(out_keep, axis=axis)

    def back(g):
        _accum(x, np.exp(x.data - out_keep) * np.expand_dims(g, axis))

    return Tensor(out_data, (x,), back)


# ---- recurrent cell ----


def rnn_cell(h: Tensor, x: Tensor, w_h: Tensor, w_x: Tensor, b: Tensor) -> Tensor:
    """Vanilla cell h' = tanh(h @ w_h + x @ w_x + b), fused into one node.

    Unrolling this over a sequence gives exact backpropagation through time;
    the reverse closure carries the analytic partials for all five inputs.
    """
    h, x = _as_tensor(h), _as_tensor(x)
    out_data = np.tanh(h.data @ w_h.data + x.data @ w_x.data + b.data)

    def back(g):
        gpre = g * (1.0 - out_data * out_data)
        if not h.is_const:
            _accum(h, gpre @ w_h.data.T)
        if not x.is_const:
            _accum(x, gpre @ w_x.data.T)
        _accum(w_h, h.data.T @ gpre)
        _accum(w_x, x.data.T @ gpre)
        _accum(b, _unbroadcast(gpre, b.data.shape))

    return Tensor(out_data, (h, x, w_h, w_x, b), back)


# ---- stochastic reparameterizations ----


def gaussian_reparam(mu: Tensor, log_sigma: Tensor, eps: np.ndarray) -> Tensor:
    """mu + exp(log_sigma) * eps with pathwise gradients to mu and log_sigma.

    ``eps`` is the recorded standard-normal draw; passing it explicitly keeps
    replays and finite-difference checks on the exact sampled path.
    """
    mu, log_sigma = _as_tensor(mu), _as_tensor(log_sigma)
    eps = np.asarray(eps, dtype=np.float64)
    sig = np.exp(log_sigma.data)

    def back(g):
        _accum(mu, _unbroadcast(g, mu.data.shape))
        _accum(log_sigma, _unbroadcast(g * sig * eps, log_sigma.data.shape))

    return Tensor(mu.data + sig * eps, (mu, log_sigma), back)


GUMBEL_U_CLAMP = 1e-12


def gumbel_noise(shape, rng: np.random.Generator) -> np.ndarray:
    """Standard Gumbel draws with uniforms clamped away from {0, 1}."""
    u = np.clip(rng.uniform(size=shape), GUMBEL_U_CLAMP, 1.0 - GUMBEL_U_CLAMP)
    return -np.log(-np.log(u))


def gumbel_softmax(logits: Tensor, omega: float, rng=None, noise: np.ndarray | None = None) -> Tensor:
    """softmax((logits + g) / omega) with g standard Gumbel; rows are draws.

    Differentiable w.r.t. ``logits``; pass ``noise`` to replay a fixed draw.
    """
    logits = _as_tensor(logits)
    if noise is None:
        noise = gumbel_noise(logits.data.shape, rng)
    return softmax(mul(add(logits, noise), 1.0 / float(omega)), axis=-1)
