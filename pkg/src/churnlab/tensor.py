"""Array-valued reverse-mode autodiff and the small MLP trained on top of it.

A :class:`Tape` records every operation as a node holding its forward value.
:class:`Var` is a thin handle (tape, node id) with the usual operator
overloads, so losses read like numpy code::

    tape = Tape()
    w = tape.param(np.array(3.0))
    loss = w * w
    compute_gradients(tape, loss)   # -> array([6.])

Everything runs in float64 on a single thread so that identical inputs give
bit-identical parameter trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, UsageError

__all__ = [
    "Tape",
    "Var",
    "ModelParams",
    "OptState",
    "LrSchedule",
    "init_params",
    "forward_probs",
    "build_forward",
    "compute_gradients",
    "optimizer_step",
    "lr_at",
    "softmax",
    "tanh",
    "log",
    "exp",
    "absolute",
    "clip",
    "sum_rows",
    "gather",
    "mean",
    "total",
]


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (the inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


@dataclass
class _Node:
    op: str
    inputs: tuple
    value: np.ndarray
    ctx: object = None


class Tape:
    """Linear record of array operations; node ids are list positions."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.param_ids: list[int] = []

    def __len__(self):
        return len(self.nodes)

    def _push(self, op, inputs, value, ctx=None):
        self.nodes.append(_Node(op, tuple(inputs), value, ctx))
        return Var(self, len(self.nodes) - 1)

    def param(self, value):
        """Leaf that receives a gradient in :func:`compute_gradients`."""
        var = self._push("param", (), np.array(value, dtype=np.float64))
        self.param_ids.append(var.id)
        return var

    def constant(self, value):
        return self._push("const", (), np.array(value, dtype=np.float64))

    def value(self, var):
        return self.nodes[var.id if isinstance(var, Var) else var].value

    def backward(self, loss):
        """Reverse sweep from a scalar node; returns per-node gradients."""
        loss_id = loss.id if isinstance(loss, Var) else int(loss)
        out = self.nodes[loss_id].value
        if out.size != 1:
            raise UsageError(f"loss node must be scalar, got shape {out.shape}")
        grads: list = [None] * (loss_id + 1)
        grads[loss_id] = np.ones_like(out)
        for i in range(loss_id, -1, -1):
            g = grads[i]
            if g is None:
                continue
            node = self.nodes[i]
            if not node.inputs:
                continue
            for j, gj in zip(node.inputs, _BACKWARD[node.op](node, g, self.nodes)):
                if gj is None:
                    continue
                gj = _unbroadcast(gj, self.nodes[j].value.shape)
                grads[j] = gj if grads[j] is None else grads[j] + gj
        return grads


class Var:
    """Handle to one node of a :class:`Tape`."""

    __slots__ = ("tape", "id")
    __array_priority__ = 1000

    def __init__(self, tape, node_id):
        self.tape = tape
        self.id = node_id

    @property
    def value(self):
        return self.tape.nodes[self.id].value

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.shape})"

    def _lift(self, other):
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise UsageError("operands live on different tapes")
            return other
        return self.tape.constant(other)

    def __add__(self, other):
        other = self._lift(other)
        return self.tape._push("add", (self.id, other.id), self.value + other.value)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._lift(other)
        return self.tape._push("sub", (self.id, other.id), self.value - other.value)

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        if not isinstance(other, Var) and np.ndim(other) == 0:
            c = float(other)
            return self.tape._push("scale", (self.id,), self.value * c, c)
        other = self._lift(other)
        return self.tape._push("mul", (self.id, other.id), self.value * other.value)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Var) and np.ndim(other) == 0:
            c = float(other)
            return self.tape._push("divc", (self.id,), self.value / c, c)
        other = self._lift(other)
        return self.tape._push("div", (self.id, other.id), self.value / other.value)

    def __neg__(self):
        return self.tape._push("neg", (self.id,), -self.value)

    def __matmul__(self, other):
        other = self._lift(other)
        return self.tape._push("matmul", (self.id, other.id), self.value @ other.value)


# ---- primitive functions ---------------------------------------------------


def tanh(x):
    return x.tape._push("tanh", (x.id,), np.tanh(x.value))


def exp(x):
    return x.tape._push("exp", (x.id,), np.exp(x.value))


def log(x):
    return x.tape._push("log", (x.id,), np.log(x.value))


def absolute(x):
    return x.tape._push("abs", (x.id,), np.abs(x.value))


def clip(x, lo, hi):
    """Clamp to [lo, hi]; gradient passes only where the input was inside."""
    return x.tape._push("clip", (x.id,), np.clip(x.value, lo, hi), (lo, hi))


def _softmax_rows(z):
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x):
    """Row-wise softmax with max subtraction."""
    return x.tape._push("softmax", (x.id,), _softmax_rows(x.value))


def sum_rows(x):
    """Sum over the last axis, keeping it as a size-1 column."""
    return x.tape._push("sum_rows", (x.id,), x.value.sum(axis=-1, keepdims=True))


def total(x):
    return x.tape._push("sum", (x.id,), np.array(x.value.sum()))


def mean(x):
    return x.tape._push("mean", (x.id,), np.array(x.value.mean()))


def gather(x, index):
    """Per-row column selection ``x[i, index[i, j]]``; indices carry no gradient."""
    index = np.asarray(index, dtype=np.intp)
    if index.ndim == 1:
        index = index[:, None]
    val = np.take_along_axis(x.value, index, axis=1)
    return x.tape._push("gather", (x.id,), val, index)


def _bw_gather(node, g, nodes):
    src = nodes[node.inputs[0]].value
    out = np.zeros_like(src)
    rows = np.arange(src.shape[0])[:, None]
    np.add.at(out, (np.broadcast_to(rows, node.ctx.shape), node.ctx), g)
    return (out,)


def _bw_matmul(node, g, nodes):
    a = nodes[node.inputs[0]].value
    b = nodes[node.inputs[1]].value
    return (g @ b.T, a.T @ g)


def _bw_softmax(node, g, nodes):
    p = node.value
    return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)


def _bw_clip(node, g, nodes):
    x = nodes[node.inputs[0]].value
    lo, hi = node.ctx
    return (np.where((x >= lo) & (x <= hi), g, 0.0),)


_BACKWARD = {
    "add": lambda n, g, ns: (g, g),
    "sub": lambda n, g, ns: (g, -g),
    "mul": lambda n, g, ns: (g * ns[n.inputs[1]].value, g * ns[n.inputs[0]].value),
    "div": lambda n, g, ns: (
        g / ns[n.inputs[1]].value,
        -g * ns[n.inputs[0]].value / ns[n.inputs[1]].value ** 2,
    ),
    "scale": lambda n, g, ns: (g * n.ctx,),
    "divc": lambda n, g, ns: (g / n.ctx,),
    "neg": lambda n, g, ns: (-g,),
    "matmul": _bw_matmul,
    "tanh": lambda n, g, ns: (g * (1.0 - n.value**2),),
    "exp": lambda n, g, ns: (g * n.value,),
    "log": lambda n, g, ns: (g / ns[n.inputs[0]].value,),
    "abs": lambda n, g, ns: (g * np.sign(ns[n.inputs[0]].value),),
    "clip": _bw_clip,
    "softmax": _bw_softmax,
    "sum_rows": lambda n, g, ns: (np.broadcast_to(g, ns[n.inputs[0]].value.shape),),
    "sum": lambda n, g, ns: (np.broadcast_to(g, ns[n.inputs[0]].value.shape),),
    "mean": lambda n, g, ns: (
        np.broadcast_to(g / ns[n.inputs[0]].value.size, ns[n.inputs[0]].value.shape),
    ),
    "gather": _bw_gather,
}


def compute_gradients(tape, loss, params=None):
    """Flat gradient of a scalar ``loss`` w.r.t. parameter leaves.

    ``params`` selects and orders the leaves (default: every ``tape.param`` in
    creation order). Leaves the loss does not depend on get zeros.
    """
    grads = tape.backward(loss)
    ids = tape.param_ids if params is None else [p.id if isinstance(p, Var) else p for p in params]
    parts = []
    for i in ids:
        g = grads[i] if i < len(grads) else None
        shape = tape.nodes[i].value.shape
        parts.append(np.zeros(shape).ravel() if g is None else np.asarray(g, dtype=np.float64).ravel())
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)


# ---- the model -------------------------------------------------------------


@dataclass
class ModelParams:
    """Dense-layer weights in one flat float64 vector.

    Per layer the layout is the (in, out) weight matrix in row-major order
    followed by the bias of length ``out``.
    """

    layer_shapes: tuple
    values: np.ndarray

    def __post_init__(self):
        self.layer_shapes = tuple((int(a), int(b)) for a, b in self.layer_shapes)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.size_for(self.layer_shapes),):
            raise ConfigError(
                f"expected {self.size_for(self.layer_shapes)} parameter values, got {self.values.shape}"
            )

    @staticmethod
    def size_for(layer_shapes):
        return sum(i * o + o for i, o in layer_shapes)

    @property
    def n_classes(self):
        return self.layer_shapes[-1][1]

    def layers(self):
        """(weight, bias) views into ``values``."""
        out, pos = [], 0
        for i, o in self.layer_shapes:
            w = self.values[pos : pos + i * o].reshape(i, o)
            pos += i * o
            b = self.values[pos : pos + o]
            pos += o
            out.append((w, b))
        return out

    def copy(self):
        return ModelParams(self.layer_shapes, self.values.copy())


def layer_shapes_for(sizes):
    """[2, 32, 3] -> ((2, 32), (32, 3))."""
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise ConfigError(f"invalid layer sizes {sizes}")
    return tuple(zip(sizes[:-1], sizes[1:]))


def init_params(sizes, init_seed, stream=0):
    """Glorot-uniform weights, zero biases, drawn from a counter-based stream.

    ``stream`` separates models that share one init seed (the second model of
    a co-distillation pair, ensemble teachers).
    """
    from .data import keyed_generator

    shapes = layer_shapes_for(sizes)
    values = []
    for li, (i, o) in enumerate(shapes):
        rng = keyed_generator(init_seed, "init", stream, li)
        limit = math.sqrt(6.0 / (i + o))
        values.append(rng.uniform(-limit, limit, size=i * o))
        values.append(np.zeros(o))
    return ModelParams(shapes, np.concatenate(values))


def _check_batch(params, batch):
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != params.layer_shapes[0][0]:
        raise ConfigError(
            f"batch has shape {batch.shape}; first layer expects {params.layer_shapes[0][0]} columns"
        )
    return batch


def forward_probs(params, batch):
    """Class probabilities of the tanh MLP on ``batch`` (N x D) -> (N x K)."""
    h = _check_batch(params, batch)
    layers = params.layers()
    for li, (w, b) in enumerate(layers):
        z = h @ w + b
        if not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite activation in layer {li}", layer=li)
        h = z if li == len(layers) - 1 else np.tanh(z)
    return _softmax_rows(h)


def build_forward(tape, params, batch):
    """Record the forward pass on ``tape``.

    Returns ``(probs, leaves)`` where ``leaves`` lists the parameter Vars in
    the same order as ``params.values``.
    """
    x = tape.constant(_check_batch(params, batch))
    leaves = []
    h = x
    layers = params.layers()
    for li, (w, b) in enumerate(layers):
        wv = tape.param(w)
        bv = tape.param(b)
        leaves += [wv, bv]
        h = h @ wv + bv
        if not np.all(np.isfinite(h.value)):
            raise NumericError(f"non-finite activation in layer {li}", layer=li)
        if li < len(layers) - 1:
            h = tanh(h)
    return softmax(h), leaves


# ---- optimisation ----------------------------------------------------------


@dataclass
class OptState:
    velocity: np.ndarray
    momentum: float = 0.9
    step: int = 0

    @classmethod
    def zeros(cls, n, momentum=0.9):
        return cls(np.zeros(n), momentum)


def optimizer_step(params, grads, state, lr):
    """One SGD step with Nesterov momentum.

    v <- mu*v - lr*g ;  w <- w + mu*v - lr*g   (v already updated)
    """
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.values.shape or state.velocity.shape != params.values.shape:
        raise UsageError(
            f"length mismatch: params {params.values.shape}, grads {grads.shape}, "
            f"velocity {state.velocity.shape}"
        )
    if not np.all(np.isfinite(grads)):
        raise NumericError(f"non-finite gradient at step {state.step}", step=state.step)
    mu = state.momentum
    v = mu * state.velocity - lr * grads
    w = params.values + mu * v - lr * grads
    if not np.all(np.isfinite(w)):
        raise NumericError(f"non-finite parameters after step {state.step}", step=state.step)
    return ModelParams(params.layer_shapes, w), OptState(v, mu, state.step + 1)


@dataclass
class LrSchedule:
    peak_lr: float
    warmup_steps: int = 0
    decay_steps: tuple = field(default_factory=tuple)
    decay_factor: float = 0.1

    def __post_init__(self):
        self.decay_steps = tuple(sorted(int(s) for s in self.decay_steps))
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be >= 0")
        if not 0.0 < self.decay_factor < 1.0:
            raise ConfigError("decay_factor must lie in (0, 1)")


def lr_at(schedule, step):
    """Linear warmup to ``peak_lr``, then a factor per decay point passed."""
    if step < schedule.warmup_steps:
        return schedule.peak_lr * (step / schedule.warmup_steps)
    passed = sum(1 for s in schedule.decay_steps if s <= step)
    return schedule.peak_lr * schedule.decay_factor**passed
