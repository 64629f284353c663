"""Minimal reverse-mode differentiation over numpy arrays.

A :class:`Tape` records every operation whose inputs include a value that
lives on it.  Plain numpy arrays (and :class:`Var` objects created with
``tape=None``) are constants: an operation whose inputs are all constants is
evaluated eagerly and nothing is recorded, which is how frozen networks are
run without ever touching the tape.

All values are float64.  Subgradient conventions: ReLU and the hinge use 0 at
the kink, max-pooling routes the gradient to the first maximal element, and
the L2 distance has gradient 0 where the distance is exactly 0.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

NORM_EPS = 1e-12


class DetachedError(RuntimeError):
    """A value from a different (or no) tape was used where a taped loss was expected."""


class Var:
    __slots__ = ("value", "tape", "parents", "backward_fn", "name")

    def __init__(self, value, tape: "Tape | None" = None, parents=(), backward_fn=None, name=None):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self):
        return self.value.shape

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

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def __repr__(self):
        where = "const" if self.tape is None else "taped"
        return f"Var({where}, shape={self.value.shape})"


class Tape:
    """Records operations in execution order for a single backward pass."""

    def __init__(self):
        self.nodes: list[Var] = []
        self.leaves: dict[str, Var] = {}

    def leaf(self, value, name: str | None = None) -> Var:
        v = Var(np.array(value, dtype=np.float64), self, name=name)
        if name is not None:
            if name in self.leaves:
                raise ValueError(f"duplicate leaf name {name!r}")
            self.leaves[name] = v
        return v

    def watch(self, params: dict[str, np.ndarray]) -> dict[str, Var]:
        return {k: self.leaf(v, k) for k, v in params.items()}

    def backward(self, loss: Var) -> dict[str, np.ndarray]:
        """Gradients of scalar ``loss`` for every named leaf on this tape."""
        if not isinstance(loss, Var) or loss.tape is not self:
            raise DetachedError("loss was not produced on this tape")
        if loss.value.size != 1:
            raise ValueError("loss must be a scalar")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None or node.backward_fn is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or parent.tape is not self:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        return {
            name: grads.get(id(v), np.zeros_like(v.value)) for name, v in self.leaves.items()
        }


def const(value) -> Var:
    return Var(np.asarray(value, dtype=np.float64))


def _lift(x) -> Var:
    return x if isinstance(x, Var) else const(x)


def _tape_of(inputs: Sequence[Var]) -> "Tape | None":
    tape = None
    for v in inputs:
        if v.tape is not None:
            if tape is not None and v.tape is not tape:
                raise DetachedError("operands live on different tapes")
            tape = v.tape
    return tape


def _record(value, inputs: Sequence[Var], backward_fn: Callable) -> Var:
    tape = _tape_of(inputs)
    if tape is None:
        return Var(value)
    out = Var(value, tape, tuple(inputs), backward_fn)
    tape.nodes.append(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --- elementwise ---------------------------------------------------------


def add(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    sa, sb = a.value.shape, b.value.shape
    return _record(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    sa, sb = a.value.shape, b.value.shape
    return _record(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    av, bv = a.value, b.value

    def back(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return _record(av * bv, (a, b), back)


def relu(x) -> Var:
    x = _lift(x)
    on = x.value > 0
    return _record(np.where(on, x.value, 0.0), (x,), lambda g: (g * on,))


def hinge(x) -> Var:
    """max(x, 0); identical to relu but kept separate for readability at call sites."""
    return relu(x)


def softplus(x) -> Var:
    x = _lift(x)
    v = x.value
    out = np.logaddexp(0.0, v)
    sig = 0.5 * (1.0 + np.tanh(0.5 * v))
    return _record(out, (x,), lambda g: (g * sig,))


def sum_all(x) -> Var:
    x = _lift(x)
    shape = x.value.shape
    return _record(np.asarray(x.value.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def sum_squares(x) -> Var:
    x = _lift(x)
    v = x.value
    return _record(np.asarray((v * v).sum()), (x,), lambda g: (2.0 * g * v,))


# --- shape ---------------------------------------------------------------


def getitem(x, idx) -> Var:
    x = _lift(x)
    shape = x.value.shape

    def back(g):
        full = np.zeros(shape)
        full[idx] = g
        return (full,)

    return _record(x.value[idx], (x,), back)


def concat(parts: Sequence, axis: int = -1) -> Var:
    parts = [_lift(p) for p in parts]
    ax = axis % parts[0].value.ndim
    sizes = [p.value.shape[ax] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _record(np.concatenate([p.value for p in parts], axis=ax), parts, back)


# --- linear maps ----------------------------------------------------------


def linear(x, w, b=None) -> Var:
    """``x @ w.T + b`` over the last axis of ``x``; ``w`` is (out, in)."""
    x, w = _lift(x), _lift(w)
    xv, wv = x.value, w.value
    out = xv @ wv.T
    inputs = [x, w]
    if b is not None:
        b = _lift(b)
        out = out + b.value
        inputs.append(b)

    def back(g):
        gx = g @ wv
        g2 = g.reshape(-1, g.shape[-1])
        gw = g2.T @ xv.reshape(-1, xv.shape[-1])
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _record(out, inputs, back)


def pointwise(x, w, b) -> Var:
    """Per-pixel affine channel map: (N, Cin, H, W) -> (N, Cout, H, W)."""
    x, w, b = _lift(x), _lift(w), _lift(b)
    xv, wv = x.value, w.value
    n, c, h, wd = xv.shape
    flat = xv.reshape(n, c, h * wd)
    out = (wv @ flat + b.value[:, None]).reshape(n, -1, h, wd)

    def back(g):
        gf = g.reshape(n, -1, h * wd)
        gx = (wv.T @ gf).reshape(xv.shape)
        gw = (gf @ flat.transpose(0, 2, 1)).sum(axis=0)
        return gx, gw, gf.sum(axis=(0, 2))

    return _record(out, (x, w, b), back)


# --- pooling -------------------------------------------------------------


def avgpool2(x) -> Var:
    """2x2 average pooling with stride 2 over the last two axes."""
    x = _lift(x)
    v = x.value
    n, c, h, w = v.shape
    if h % 2 or w % 2:
        raise ValueError(f"avgpool2 needs even spatial dims, got {h}x{w}")
    out = (v[:, :, 0::2, 0::2] + v[:, :, 1::2, 0::2] + v[:, :, 0::2, 1::2] + v[:, :, 1::2, 1::2]) * 0.25

    def back(g):
        q = g * 0.25
        full = np.empty((n, c, h, w))
        full[:, :, 0::2, 0::2] = q
        full[:, :, 1::2, 0::2] = q
        full[:, :, 0::2, 1::2] = q
        full[:, :, 1::2, 1::2] = q
        return (full,)

    return _record(out, (x,), back)


def global_max(x) -> Var:
    """Per-channel spatial maximum: (N, C, H, W) -> (N, C)."""
    x = _lift(x)
    v = x.value
    n, c, h, w = v.shape
    flat = v.reshape(n, c, h * w)
    arg = flat.argmax(axis=2)
    out = np.take_along_axis(flat, arg[..., None], axis=2)[..., 0]

    def back(g):
        gf = np.zeros((n, c, h * w))
        np.put_along_axis(gf, arg[..., None], g[..., None], axis=2)
        return (gf.reshape(n, c, h, w),)

    return _record(out, (x,), back)


# --- normalisation -------------------------------------------------------


def l2_normalize(x, eps: float = NORM_EPS) -> Var:
    """Row-wise L2 normalisation over the last axis.

    Rows with norm below ``eps`` pass through unchanged (identity gradient),
    so an all-zero feature stays all-zero.
    """
    x = _lift(x)
    v = x.value
    norm = np.sqrt((v * v).sum(axis=-1, keepdims=True))
    small = norm < eps
    safe = np.where(small, 1.0, norm)
    y = np.where(small, v, v / safe)

    def back(g):
        proj = g - y * (g * y).sum(axis=-1, keepdims=True)
        return (np.where(small, g, proj / safe),)

    return _record(y, (x,), back)


def softmax(x, axis: int = -1) -> Var:
    x = _lift(x)
    v = x.value
    e = np.exp(v - v.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _record(s, (x,), back)


def l2_distance(a, b) -> Var:
    """Row-wise Euclidean distance over the last axis."""
    a, b = _lift(a), _lift(b)
    diff = a.value - b.value
    d = np.sqrt((diff * diff).sum(axis=-1))
    safe = np.where(d > 0, d, 1.0)
    unit = np.where((d > 0)[..., None], diff / safe[..., None], 0.0)

    def back(g):
        ga = g[..., None] * unit
        return ga, -ga

    return _record(d, (a, b), back)
