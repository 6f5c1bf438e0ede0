"""Minimal reverse-mode autodiff over float64 matrices, plus Adam.

Nodes form a DAG; backward walks nodes in reverse construction order, which
fixes the reduction order and makes gradients bit-reproducible. Everything is
64-bit; no broadcasting beyond what each primitive states.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import NonScalarLoss, ShapeMismatch

_ids = itertools.count()


class Node:
    """One value in the computation graph.

    `backward_fn(g)` returns one gradient array (or None) per parent.
    Leaf nodes (constants, parameters) have no parents.
    """

    __slots__ = ("value", "parents", "backward_fn", "grad", "nid")

    def __init__(self, value, parents=(), backward_fn=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.grad = None
        self.nid = next(_ids)

    @property
    def shape(self):
        return self.value.shape


class Parameter(Node):
    """Trainable leaf with Adam state."""

    __slots__ = ("m", "v", "t")

    def __init__(self, value):
        super().__init__(np.array(value, dtype=np.float64))
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)
        self.t = 0

    def zero_grad(self):
        self.grad = None


def constant(value) -> Node:
    return Node(value)


def backward(loss: Node):
    """Populate .grad on every node reachable from `loss`.

    Deterministic: nodes are processed in strictly decreasing construction id.
    """
    if loss.value.size != 1:
        raise NonScalarLoss(f"loss has shape {loss.value.shape}")
    # collect reachable nodes
    seen = {loss.nid: loss}
    stack = [loss]
    while stack:
        node = stack.pop()
        for p in node.parents:
            if p.nid not in seen:
                seen[p.nid] = p
                stack.append(p)
    order = sorted(seen.values(), key=lambda n: n.nid, reverse=True)
    loss.grad = np.ones_like(loss.value)
    for node in order:
        if node.grad is None or node.backward_fn is None:
            continue
        grads = node.backward_fn(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.value)
            parent.grad += g


# ---------------------------------------------------------------- primitives

def _same_shape(a, b):
    if a.value.shape != b.value.shape:
        raise ShapeMismatch(f"{a.value.shape} vs {b.value.shape}")


def add(a: Node, b: Node) -> Node:
    _same_shape(a, b)
    return Node(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: Node, b: Node) -> Node:
    _same_shape(a, b)
    return Node(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a: Node, b: Node) -> Node:
    _same_shape(a, b)
    return Node(a.value * b.value, (a, b),
                lambda g: (g * b.value, g * a.value))


def scale(a: Node, k: float) -> Node:
    return Node(a.value * k, (a,), lambda g: (g * k,))


def add_const(a: Node, c) -> Node:
    return Node(a.value + c, (a,), lambda g: (g,))


def mul_const(a: Node, c) -> Node:
    c = np.asarray(c, dtype=np.float64)
    return Node(a.value * c, (a,), lambda g: (g * c,))


def sum_nodes(nodes) -> Node:
    """n-ary elementwise sum (single node; fixed accumulation order)."""
    nodes = list(nodes)
    out = nodes[0].value.copy()
    for n in nodes[1:]:
        _same_shape(nodes[0], n)
        out += n.value
    return Node(out, tuple(nodes), lambda g: tuple(g for _ in nodes))


def matmul(x: Node, w: Node) -> Node:
    if x.value.shape[-1] != w.value.shape[0]:
        raise ShapeMismatch(f"matmul {x.value.shape} @ {w.value.shape}")
    return Node(x.value @ w.value, (x, w),
                lambda g: (g @ w.value.T, x.value.T @ g))


def add_bias(x: Node, b: Node) -> Node:
    """x (N,C) + b (C,) broadcast over rows."""
    if x.value.shape[-1] != b.value.shape[0]:
        raise ShapeMismatch(f"bias {b.value.shape} on {x.value.shape}")
    return Node(x.value + b.value[None, :], (x, b),
                lambda g: (g, g.sum(axis=0)))


def affine(x: Node, w: Node, b: Node) -> Node:
    return add_bias(matmul(x, w), b)


def relu(x: Node) -> Node:
    mask = x.value > 0
    return Node(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Node) -> Node:
    # tanh formulation: stable in both tails
    v = 0.5 * (np.tanh(0.5 * x.value) + 1.0)
    return Node(v, (x,), lambda g: (g * v * (1.0 - v),))


def tanh(x: Node) -> Node:
    v = np.tanh(x.value)
    return Node(v, (x,), lambda g: (g * (1.0 - v * v),))


def exp(x: Node) -> Node:
    v = np.exp(x.value)
    return Node(v, (x,), lambda g: (g * v,))


def log(x: Node) -> Node:
    return Node(np.log(x.value), (x,), lambda g: (g / x.value,))


def softplus(x: Node) -> Node:
    v = np.logaddexp(0.0, x.value)
    s = 1.0 / (1.0 + np.exp(-np.clip(x.value, -500, 500)))
    return Node(v, (x,), lambda g: (g * s,))


def clamp_min(x: Node, c: float) -> Node:
    mask = x.value > c
    return Node(np.where(mask, x.value, c), (x,), lambda g: (g * mask,))


def softmax_rows(x: Node) -> Node:
    z = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    v = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * v).sum(axis=-1, keepdims=True)
        return (v * (g - dot),)

    return Node(v, (x,), bwd)


def slice_cols(x: Node, start: int, stop: int) -> Node:
    n_cols = x.value.shape[-1]

    def bwd(g):
        full = np.zeros_like(x.value)
        full[..., start:stop] = g
        return (full,)

    if not (0 <= start <= stop <= n_cols):
        raise ShapeMismatch(f"slice [{start}:{stop}] of width {n_cols}")
    return Node(x.value[..., start:stop], (x,), bwd)


def concat_cols(*nodes) -> Node:
    widths = [n.value.shape[-1] for n in nodes]
    splits = np.cumsum(widths)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=-1))

    return Node(np.concatenate([n.value for n in nodes], axis=-1), nodes, bwd)


def reshape(x: Node, shape) -> Node:
    orig = x.value.shape
    return Node(x.value.reshape(shape), (x,),
                lambda g: (g.reshape(orig),))


def gather_rows(x: Node, idx, fill: float = 0.0) -> Node:
    """Rows x[idx]; idx == -1 yields a constant `fill` row (no gradient)."""
    idx = np.asarray(idx, dtype=np.int64)
    valid = idx >= 0
    safe = np.where(valid, idx, 0)
    v = x.value[safe].copy()
    if not valid.all():
        v[~valid] = fill

    def bwd(g):
        gx = np.zeros_like(x.value)
        np.add.at(gx, idx[valid], g[valid])
        return (gx,)

    return Node(v, (x,), bwd)


def scatter_add_rows(x: Node, idx, n_out: int) -> Node:
    """(N,C) rows scattered (with accumulation) into an (n_out,C) output."""
    idx = np.asarray(idx, dtype=np.int64)
    out = np.zeros((n_out, x.value.shape[1]), dtype=np.float64)
    np.add.at(out, idx, x.value)
    return Node(out, (x,), lambda g: (g[idx],))


def rowwise_max(*nodes) -> Node:
    """Elementwise max across same-shape nodes; ties route grad to the lowest index."""
    stacked = np.stack([n.value for n in nodes], axis=0)
    arg = np.argmax(stacked, axis=0)  # first occurrence = lowest index
    v = np.take_along_axis(stacked, arg[None], axis=0)[0]

    def bwd(g):
        return tuple(g * (arg == i) for i in range(len(nodes)))

    return Node(v, nodes, bwd)


def row_sum(x: Node) -> Node:
    """Sum over the last axis, keepdims."""
    shape = x.value.shape

    def bwd(g):
        return (np.broadcast_to(g, shape).copy(),)

    return Node(x.value.sum(axis=-1, keepdims=True), (x,), bwd)


def sum_all(x: Node) -> Node:
    shape = x.value.shape
    return Node(np.array(x.value.sum()), (x,),
                lambda g: (np.broadcast_to(g, shape).copy(),))


# --------------------------------------------------------------------- adam

class AdamConfig:
    """Adam hyperparameters with step decay of the learning rate."""

    def __init__(self, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8,
                 decay=0.75, decay_interval=5):
        assert lr > 0 and 0 < beta1 < 1 and 0 < beta2 < 1
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.decay = decay
        self.decay_interval = decay_interval

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.decay ** (epoch // self.decay_interval)


def adam_step(params, config: AdamConfig, epoch: int = 0):
    """One Adam update (bias-corrected) over `params` in fixed order."""
    lr = config.lr_at(epoch)
    for p in params:
        g = p.grad
        if g is None:
            continue
        p.t += 1
        p.m = config.beta1 * p.m + (1 - config.beta1) * g
        p.v = config.beta2 * p.v + (1 - config.beta2) * g * g
        m_hat = p.m / (1 - config.beta1 ** p.t)
        v_hat = p.v / (1 - config.beta2 ** p.t)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + config.eps)
