"""Define-by-run reverse-mode autodiff.

Every op takes a ``Tape`` as its first argument and accepts ``Node`` or
plain array inputs; plain arrays are constants and receive no gradient.
Passing ``tape=None`` runs the same computation on raw arrays with no
recording, which is how frozen sub-networks and inference paths execute.
"""

from __future__ import annotations

import math

import numpy as np


class ShapeMismatchError(ValueError):
    pass


class TapeReuseError(RuntimeError):
    pass


class Node:
    __slots__ = ("value", "grad", "name")

    def __init__(self, value, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.name = name

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        tag = self.name or "node"
        return f"Node({tag}, shape={self.value.shape})"


def value_of(x):
    """Raw array behind a Node or constant."""
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def _name_of(x):
    if isinstance(x, Node) and x.name:
        return x.name
    return f"array{np.shape(value_of(x))}"


class Tape:
    """Records one forward pass for a single backward traversal."""

    def __init__(self):
        self._entries = []
        self._stores = []
        self._param_nodes = {}
        self._consumed = False

    def param(self, store, name) -> Node:
        """Leaf node for a named parameter; cached so repeated use of the same
        parameter accumulates into one gradient."""
        key = (id(store), name)
        node = self._param_nodes.get(key)
        if node is None:
            node = Node(store[name], name=name)
            self._param_nodes[key] = node
            if store not in self._stores:
                self._stores.append(store)
        return node

    def record(self, out_node: Node, backward_fn) -> None:
        if self._consumed:
            raise TapeReuseError("tape already consumed by backward()")
        self._entries.append((out_node, backward_fn))

    def backward(self, output: Node, output_grad=None) -> dict:
        """Traverse the recorded ops in reverse; returns a gradient for every
        parameter of every store touched in forward (zeros if untouched)."""
        if self._consumed:
            raise TapeReuseError("tape already consumed by backward()")
        if not self._entries and not self._param_nodes:
            raise TapeReuseError("backward() on an empty tape")
        self._consumed = True
        if output_grad is None:
            output_grad = np.ones_like(output.value)
        output.accumulate(np.asarray(output_grad, dtype=np.float64))
        for node, fn in reversed(self._entries):
            if node.grad is not None:
                fn()
        grads = {}
        for store in self._stores:
            for name in store.names():
                key = (id(store), name)
                node = self._param_nodes.get(key)
                if node is not None and node.grad is not None:
                    grads[name] = node.grad
                else:
                    grads[name] = np.zeros_like(store[name])
        return grads


def _unbroadcast(g, shape):
    """Sum a gradient back down to the shape it was broadcast from."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _maybe(tape, out_value, inputs_with_grads):
    """Wrap op output; `inputs_with_grads` maps input -> fn(g) -> grad."""
    if tape is None:
        return out_value
    out = Node(out_value)

    def bwd():
        g = out.grad
        for x, to_grad in inputs_with_grads:
            if isinstance(x, Node):
                x.accumulate(to_grad(g))

    tape.record(out, bwd)
    return out


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------


def add(tape, a, b):
    av, bv = value_of(a), value_of(b)
    out = av + bv
    return _maybe(
        tape,
        out,
        [(a, lambda g: _unbroadcast(g, av.shape)), (b, lambda g: _unbroadcast(g, bv.shape))],
    )


def sub(tape, a, b):
    av, bv = value_of(a), value_of(b)
    out = av - bv
    return _maybe(
        tape,
        out,
        [(a, lambda g: _unbroadcast(g, av.shape)), (b, lambda g: _unbroadcast(-g, bv.shape))],
    )


def mul(tape, a, b):
    av, bv = value_of(a), value_of(b)
    out = av * bv
    return _maybe(
        tape,
        out,
        [
            (a, lambda g: _unbroadcast(g * bv, av.shape)),
            (b, lambda g: _unbroadcast(g * av, bv.shape)),
        ],
    )


def neg(tape, a):
    return _maybe(tape, -value_of(a), [(a, lambda g: -g)])


def scale(tape, a, c: float):
    c = float(c)
    return _maybe(tape, value_of(a) * c, [(a, lambda g: g * c)])


def square(tape, a):
    av = value_of(a)
    return _maybe(tape, av * av, [(a, lambda g: 2.0 * av * g)])


def exp(tape, a):
    out = np.exp(value_of(a))
    return _maybe(tape, out, [(a, lambda g: g * out)])


def tanh(tape, a):
    out = np.tanh(value_of(a))
    return _maybe(tape, out, [(a, lambda g: g * (1.0 - out * out))])


def silu(tape, a):
    av = value_of(a)
    sig = 1.0 / (1.0 + np.exp(-av))
    out = av * sig
    return _maybe(tape, out, [(a, lambda g: g * (sig * (1.0 + av * (1.0 - sig))))])


def minimum(tape, a, b):
    """Elementwise min; ties route the gradient to the first argument."""
    av, bv = value_of(a), value_of(b)
    take_a = av <= bv
    out = np.where(take_a, av, bv)
    return _maybe(
        tape,
        out,
        [
            (a, lambda g: _unbroadcast(g * take_a, av.shape)),
            (b, lambda g: _unbroadcast(g * ~take_a, bv.shape)),
        ],
    )


def maximum(tape, a, b):
    """Elementwise max; ties route the gradient to the first argument."""
    av, bv = value_of(a), value_of(b)
    take_a = av >= bv
    out = np.where(take_a, av, bv)
    return _maybe(
        tape,
        out,
        [
            (a, lambda g: _unbroadcast(g * take_a, av.shape)),
            (b, lambda g: _unbroadcast(g * ~take_a, bv.shape)),
        ],
    )


def matmul(tape, a, b):
    av, bv = value_of(a), value_of(b)
    if av.shape[-1] != bv.shape[-2 if bv.ndim > 1 else 0]:
        raise ShapeMismatchError(
            f"matmul {_name_of(a)} {av.shape} @ {_name_of(b)} {bv.shape}"
        )
    out = av @ bv
    return _maybe(
        tape,
        out,
        [
            (a, lambda g: _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)),
            (b, lambda g: _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)),
        ],
    )


def sum_(tape, a):
    av = value_of(a)
    return _maybe(tape, np.asarray(av.sum()), [(a, lambda g: np.broadcast_to(g, av.shape) * 1.0)])


def mean_(tape, a):
    av = value_of(a)
    n = av.size
    return _maybe(
        tape,
        np.asarray(av.mean()),
        [(a, lambda g: np.broadcast_to(g / n, av.shape) * 1.0)],
    )


def reshape(tape, a, shape):
    av = value_of(a)
    return _maybe(tape, av.reshape(shape), [(a, lambda g: g.reshape(av.shape))])


def transpose(tape, a, axes):
    inv = np.argsort(axes)
    return _maybe(
        tape, np.transpose(value_of(a), axes), [(a, lambda g: np.transpose(g, inv))]
    )


def concat(tape, parts, axis=0):
    vals = [value_of(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    splits = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def grad_for(i):
        return lambda g: np.split(g, splits, axis=axis)[i]

    return _maybe(tape, out, [(p, grad_for(i)) for i, p in enumerate(parts)])


def pick(tape, a, rows, cols):
    """a[rows, cols] for index vectors; backward scatter-adds."""
    av = value_of(a)
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    out = av[rows, cols]

    def to_grad(g):
        ga = np.zeros_like(av)
        np.add.at(ga, (rows, cols), g)
        return ga

    return _maybe(tape, out, [(a, to_grad)])


def embedding_lookup(tape, table, ids):
    tv = value_of(table)
    ids = np.asarray(ids, dtype=np.int64)
    out = tv[ids]

    def to_grad(g):
        gt = np.zeros_like(tv)
        np.add.at(gt, ids, g)
        return gt

    return _maybe(tape, out, [(table, to_grad)])


def softmax(tape, x, mask=None, axis=-1):
    """Softmax along ``axis``; ``mask`` is an additive constant array whose
    -inf entries are excluded exactly."""
    xv = value_of(x)
    if mask is not None:
        xv = xv + mask
    m = xv.max(axis=axis, keepdims=True)
    e = np.exp(xv - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def to_grad(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return out * (g - dot)

    return _maybe(tape, out, [(x, to_grad)])


def log_softmax(tape, x, mask=None, axis=-1):
    xv = value_of(x)
    if mask is not None:
        xv = xv + mask
    m = xv.max(axis=axis, keepdims=True)
    shifted = xv - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    sm = np.exp(out)

    def to_grad(g):
        return g - sm * g.sum(axis=axis, keepdims=True)

    return _maybe(tape, out, [(x, to_grad)])


def layer_norm(tape, x, gain, bias, eps: float = 1e-10):
    """Normalize the last axis to zero mean / unit variance, then rescale."""
    xv, gv, bv = value_of(x), value_of(gain), value_of(bias)
    if gv.shape[-1] != xv.shape[-1]:
        raise ShapeMismatchError(
            f"layer_norm {_name_of(x)} {xv.shape} with gain {_name_of(gain)} {gv.shape}"
        )
    d = xv.shape[-1]
    mu = xv.mean(axis=-1, keepdims=True)
    xc = xv - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    out = xhat * gv + bv

    def grad_x(g):
        dxhat = g * gv
        term1 = dxhat
        term2 = dxhat.mean(axis=-1, keepdims=True)
        term3 = xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        return inv_std * (term1 - term2 - term3)

    def grad_gain(g):
        return _unbroadcast(g * xhat, gv.shape)

    def grad_bias(g):
        return _unbroadcast(g, bv.shape)

    return _maybe(tape, out, [(x, grad_x), (gain, grad_gain), (bias, grad_bias)])


# ---------------------------------------------------------------------------
# composite layers
# ---------------------------------------------------------------------------


def affine(tape, x, w, b):
    xv, wv = value_of(x), value_of(w)
    if xv.shape[-1] != wv.shape[0]:
        raise ShapeMismatchError(
            f"affine {_name_of(x)} {xv.shape} @ {_name_of(w)} {wv.shape}"
        )
    return add(tape, matmul(tape, x, w), b)


def attention(tape, query, keys, values, n_heads: int, mask=None):
    """Multi-head scaled dot-product attention.

    ``query`` is (n_q, w); ``keys``/``values`` are (n_k, w) and may come from
    an external cache (cross-attention). ``mask`` is an additive array
    broadcastable to (n_heads, n_q, n_k); -inf entries are excluded.
    """
    qv, kv, vv = value_of(query), value_of(keys), value_of(values)
    if qv.shape[-1] != kv.shape[-1] or kv.shape != vv.shape:
        raise ShapeMismatchError(
            f"attention {_name_of(query)} {qv.shape}, {_name_of(keys)} {kv.shape}, "
            f"{_name_of(values)} {vv.shape}"
        )
    w = qv.shape[-1]
    if w % n_heads != 0:
        raise ShapeMismatchError(f"width {w} not divisible by {n_heads} heads")
    n_q, n_k, d = qv.shape[0], kv.shape[0], w // n_heads

    qh = transpose(tape, reshape(tape, query, (n_q, n_heads, d)), (1, 0, 2))
    kh = transpose(tape, reshape(tape, keys, (n_k, n_heads, d)), (1, 2, 0))
    vh = transpose(tape, reshape(tape, values, (n_k, n_heads, d)), (1, 0, 2))
    scores = scale(tape, matmul(tape, qh, kh), 1.0 / math.sqrt(d))
    attn = softmax(tape, scores, mask=mask, axis=-1)
    mixed = matmul(tape, attn, vh)
    return reshape(tape, transpose(tape, mixed, (1, 0, 2)), (n_q, w))


def gated_mlp(tape, x, w_gate, b_gate, w_up, b_up, w_down, b_down):
    """silu(x W_g + b_g) * (x W_u + b_u) projected back down."""
    gate = silu(tape, affine(tape, x, w_gate, b_gate))
    up = affine(tape, x, w_up, b_up)
    return affine(tape, mul(tape, gate, up), w_down, b_down)
