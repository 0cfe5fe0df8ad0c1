"""Minimal dense-tensor numerics with reverse-mode differentiation.

Buffers are 64-bit numpy arrays; the autodiff graph is a per-output record
of parent tensors and backward closures, walked in reverse topological
order.  Only the primitives the transformer needs are provided.
"""

from __future__ import annotations

import numpy as np

GELU_C = 0.7978845608  # sqrt(2/pi), tanh-approximation constant


class Tensor:
    """A dense float64 array plus an optional gradient buffer.

    ``requires_grad`` marks leaves that should accumulate gradients;
    intermediate results inherit it from their parents.  ``grad`` stays
    ``None`` until ``backward`` reaches the tensor.
    """

    __slots__ = ("values", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        if self.values.size != 1:
            raise ValueError(f"backward requires a scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        self.grad = np.ones_like(self.values)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        tag = f" name={self.name}" if self.name else ""
        return f"<Tensor shape={self.shape}{tag}>"


def _wrap(values, parents, backward) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    out = Tensor(values, requires_grad=needs)
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` undoing numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(_unbroadcast(g, b.shape))

    return _wrap(a.values + b.values, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        a._accum(_unbroadcast(g * b.values, a.shape))
        b._accum(_unbroadcast(g * a.values, b.shape))

    return _wrap(a.values * b.values, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    def backward(g):
        a._accum(g * s)

    return _wrap(a.values * s, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; batched when both operands carry equal batch dims,
    or when ``b`` is a plain 2-d matrix applied to every batch row of ``a``."""
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dims disagree: {a.shape} x {b.shape}")
    if a.values.ndim != b.values.ndim and b.values.ndim != 2:
        raise ValueError(f"unsupported matmul ranks: {a.shape} x {b.shape}")

    def backward(g):
        a._accum(g @ np.swapaxes(b.values, -1, -2))
        if b.values.ndim == 2 and a.values.ndim > 2:
            k = a.shape[-1]
            n = g.shape[-1]
            b._accum(a.values.reshape(-1, k).T @ g.reshape(-1, n))
        else:
            b._accum(np.swapaxes(a.values, -1, -2) @ g)

    return _wrap(a.values @ b.values, (a, b), backward)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    def backward(g):
        a._accum(g.reshape(a.shape))

    return _wrap(a.values.reshape(shape), (a,), backward)


def transpose(a: Tensor, axes: tuple) -> Tensor:
    inverse = tuple(np.argsort(axes))

    def backward(g):
        a._accum(g.transpose(inverse))

    return _wrap(a.values.transpose(axes), (a,), backward)


def select_position(a: Tensor, pos: int) -> Tensor:
    """Pick one time step from a [batch, time, dim] tensor."""

    def backward(g):
        full = np.zeros_like(a.values)
        full[:, pos, :] = g
        a._accum(full)

    return _wrap(a.values[:, pos, :], (a,), backward)


def slice_time(a: Tensor, lo: int, hi: int) -> Tensor:
    """Take time steps [lo, hi) from a [batch, time, dim] tensor."""

    def backward(g):
        full = np.zeros_like(a.values)
        full[:, lo:hi, :] = g
        a._accum(full)

    return _wrap(a.values[:, lo:hi, :], (a,), backward)


def softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis, max-subtracted for stability."""
    shifted = a.values - a.values.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        a._accum(y * (g - dot))

    return _wrap(y, (a,), backward)


def gelu(a: Tensor) -> Tensor:
    x = a.values
    inner = GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    y = 0.5 * x * (1.0 + t)

    def backward(g):
        sech2 = 1.0 - t * t
        d = 0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3 * 0.044715 * x * x)
        a._accum(g * d)

    return _wrap(y, (a,), backward)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit population variance,
    then apply the affine (gain, bias)."""
    x = a.values
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    y = xhat * gain.values + bias.values

    def backward(g):
        reduce_axes = tuple(range(g.ndim - 1))
        gain._accum((g * xhat).sum(axis=reduce_axes))
        bias._accum(g.sum(axis=reduce_axes))
        gh = g * gain.values
        term = gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
        a._accum(inv * term)

    return _wrap(y, (a, gain, bias), backward)


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ValueError("token id out of embedding range")

    def backward(g):
        full = np.zeros_like(weight.values)
        np.add.at(full, ids, g)
        weight._accum(full)

    return _wrap(weight.values[ids], (weight,), backward)


def gather_rows(table: Tensor, idx: np.ndarray) -> Tensor:
    """Index the trailing axis of a [heads, buckets] table with an integer
    map ``idx`` of shape [t, t], yielding [heads, t, t] (relative-position
    attention bias lookup)."""
    idx = np.asarray(idx)

    def backward(g):
        full = np.zeros_like(table.values)
        for h in range(table.shape[0]):
            np.add.at(full[h], idx, g[h])
        table._accum(full)

    return _wrap(table.values[:, idx], (table,), backward)


def cross_entropy(logits: Tensor, gold: np.ndarray, weights: np.ndarray | None = None) -> Tensor:
    """Weighted mean of -log softmax(logits)[gold] over the first axis.

    ``logits`` is [n, classes]; ``weights`` defaults to all-ones (plain
    batch mean).  Backward is (softmax - onehot) * w / sum(w) per row.
    """
    gold = np.asarray(gold)
    n, c = logits.shape
    if gold.min() < 0 or gold.max() >= c:
        raise ValueError(f"gold class out of range [0, {c})")
    if weights is None:
        weights = np.ones(n)
    w = np.asarray(weights, dtype=np.float64)
    total = w.sum()
    shifted = logits.values - logits.values.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1))
    nll = logz - shifted[np.arange(n), gold]
    loss = float((nll * w).sum() / total)

    def backward(g):
        p = np.exp(shifted - logz[:, None])
        p[np.arange(n), gold] -= 1.0
        logits._accum(g * p * (w / total)[:, None])

    return _wrap(loss, (logits,), backward)


def grad_check(f, params: list[Tensor], eps: float = 1e-5) -> float:
    """Compare reverse-mode gradients of the scalar ``f()`` against central
    finite differences over every element of ``params``.

    Returns the maximum relative error, with denominator
    max(|analytic|, |numeric|, 1e-8).
    """
    for p in params:
        p.zero_grad()
    out = f()
    out.backward()
    analytic = [np.array(p.grad if p.grad is not None else np.zeros_like(p.values)) for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.values.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f().item()
            flat[i] = orig - eps
            lo = f().item()
            flat[i] = orig
            gn = (hi - lo) / (2 * eps)
            a = ga.reshape(-1)[i]
            err = abs(a - gn) / max(abs(a), abs(gn), 1e-8)
            worst = max(worst, err)
    return worst
