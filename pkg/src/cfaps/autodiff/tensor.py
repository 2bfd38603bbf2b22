"""Minimal dense-tensor library with reverse-mode autodiff.

Define-by-run: every op executed while a Graph is active is recorded on
that graph's tape, and `backward` replays the tape in reverse. Tensors
hold float64 numpy arrays. There is no implicit broadcasting; shapes must
match exactly except through the explicit `broadcast_to` op.
"""

from __future__ import annotations

import numpy as np


class AutodiffError(Exception):
    """Raised for shape mismatches, non-finite results, and misuse."""


_GRAPH_STACK: list["Graph"] = []


def _active_graph():
    return _GRAPH_STACK[-1] if _GRAPH_STACK else None


class Tensor:
    """A dense float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "_needs_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        # True if a gradient path to some leaf flows through this tensor.
        self._needs_grad = requires_grad
        if requires_grad:
            g = _active_graph()
            if g is not None:
                g.add_leaf(self)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise AutodiffError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Small operator surface for readable layer code.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Graph:
    """Tape of recorded operations plus the leaves that want gradients.

    Recording order is a valid evaluation order by construction, so the
    backward pass is a single reverse sweep visiting each node once.
    """

    def __init__(self):
        self.nodes = []   # (out, inputs, backward_fn)
        self.leaves = []
        self._leaf_ids = set()

    def add_leaf(self, t: Tensor):
        if id(t) not in self._leaf_ids:
            self._leaf_ids.add(id(t))
            self.leaves.append(t)

    def record(self, out: Tensor, inputs, backward_fn):
        self.nodes.append((out, inputs, backward_fn))

    def __enter__(self):
        _GRAPH_STACK.append(self)
        return self

    def __exit__(self, *exc):
        popped = _GRAPH_STACK.pop()
        assert popped is self, "graph stack corrupted"
        return False


def backward(graph: Graph, scalar_output: Tensor, leaves=None) -> dict:
    """Reverse sweep: returns {leaf Tensor: gradient ndarray-backed Tensor}.

    `scalar_output` must have a single element. Leaves default to every
    requires_grad tensor seen by the graph; untouched leaves get zeros.
    """
    if scalar_output.data.size != 1:
        raise AutodiffError(
            f"backward needs a scalar output, got shape {scalar_output.data.shape}"
        )
    if leaves is None:
        leaves = graph.leaves
    else:
        leaves = list(leaves)
        for t in leaves:
            graph.add_leaf(t)

    grads: dict[int, np.ndarray] = {id(scalar_output): np.ones_like(scalar_output.data)}
    seen = set()
    for out, inputs, fn in reversed(graph.nodes):
        key = id(out)
        if key in seen:
            raise AutodiffError("graph node visited twice; tape corrupted")
        seen.add(key)
        g = grads.pop(key, None)
        if g is None:
            continue
        in_grads = fn(g)
        for t, ig in zip(inputs, in_grads):
            if ig is None or not t._needs_grad:
                continue
            k = id(t)
            if k in grads:
                grads[k] = grads[k] + ig
            else:
                grads[k] = ig

    out_map = {}
    for leaf in leaves:
        g = grads.get(id(leaf))
        if g is None:
            g = np.zeros_like(leaf.data)
        out_map[leaf] = Tensor(g)
    return out_map


def _check_finite(arr: np.ndarray, op: str):
    # Fast path: a single reduction. NaN/Inf propagate through the sum.
    s = arr.sum()
    if np.isfinite(s):
        return
    if np.isfinite(arr).all():
        raise AutodiffError(f"{op}: output magnitudes overflow float64 summation")
    raise AutodiffError(f"{op}: non-finite values in output")


def _emit(op: str, data: np.ndarray, inputs, backward_fn) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    out._needs_grad = any(t._needs_grad for t in inputs)
    g = _active_graph()
    if g is not None and out._needs_grad:
        for t in inputs:
            if t.requires_grad:
                g.add_leaf(t)
        g.record(out, inputs, backward_fn)
    return out


def _shapes(inputs):
    return ", ".join(str(t.data.shape) for t in inputs)


# ---------------------------------------------------------------------------
# Elementwise and linear-algebra ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2D x 2D, or batched 3D x 3D with equal leading dimension."""
    A, B = a.data, b.data
    ok = (A.ndim == 2 and B.ndim == 2 and A.shape[1] == B.shape[0]) or (
        A.ndim == 3 and B.ndim == 3 and A.shape[0] == B.shape[0] and A.shape[2] == B.shape[1]
    )
    if not ok:
        raise AutodiffError(f"matmul: incompatible shapes {_shapes([a, b])}")
    out = A @ B

    def back(g):
        ga = g @ B.swapaxes(-1, -2) if a._needs_grad else None
        gb = A.swapaxes(-1, -2) @ g if b._needs_grad else None
        return ga, gb

    return _emit("matmul", out, [a, b], back)


def _same_shape(op, a, b):
    if a.data.shape != b.data.shape:
        raise AutodiffError(f"{op}: shape mismatch {_shapes([a, b])}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _emit("add", a.data + b.data, [a, b], lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _emit("sub", a.data - b.data, [a, b], lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    A, B = a.data, b.data
    return _emit("mul", A * B, [a, b], lambda g: (g * B, g * A))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit("scale", a.data * c, [a], lambda g: (g * c,))


def broadcast_to(a: Tensor, shape) -> Tensor:
    """Explicit broadcast; the only sanctioned shape expansion."""
    shape = tuple(int(s) for s in shape)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise AutodiffError(f"broadcast_to: cannot broadcast {a.data.shape} to {shape}")
    in_shape = a.data.shape

    def back(g):
        extra = g.ndim - len(in_shape)
        if extra:
            g = g.sum(axis=tuple(range(extra)))
        axes = tuple(i for i, s in enumerate(in_shape) if s == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g,)

    return _emit("broadcast_to", np.ascontiguousarray(out), [a], back)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise AutodiffError("concat: empty input list")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise AutodiffError(f"concat: incompatible shapes {_shapes(tensors)}")
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit("concat", out, tensors, back)


def narrow(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice along one axis."""
    n = a.data.shape[axis]
    if not (0 <= start < stop <= n):
        raise AutodiffError(f"slice: range [{start}, {stop}) invalid for axis {axis} of {a.data.shape}")
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def back(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _emit("slice", np.ascontiguousarray(a.data[idx]), [a], back)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise AutodiffError(f"reshape: cannot view {a.data.shape} as {shape}")
    in_shape = a.data.shape
    return _emit("reshape", out, [a], lambda g: (g.reshape(in_shape),))


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    in_shape = a.data.shape

    def back(g):
        if axis is None:
            return (np.full(in_shape, g if np.ndim(g) == 0 else g.reshape(())),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, in_shape).copy(),)

    return _emit("reduce_sum", np.asarray(out, dtype=np.float64), [a], back)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    in_shape = a.data.shape
    count = a.data.size if axis is None else in_shape[axis]
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            v = (g if np.ndim(g) == 0 else g.reshape(())) / count
            return (np.full(in_shape, v),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2 / count, in_shape).copy(),)

    return _emit("reduce_mean", np.asarray(out, dtype=np.float64), [a], back)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    return _emit("relu", out, [a], lambda g: (g * (out > 0),))


def sigmoid(a: Tensor) -> Tensor:
    # tanh form: markedly faster than exp on this class of hardware.
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _emit("sigmoid", y, [a], lambda g: (g * (y * (1.0 - y)),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _emit("tanh", y, [a], lambda g: (g * (1.0 - y * y),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _emit("exp", y, [a], lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    y = np.log(a.data)
    return _emit("log", y, [a], lambda g: (g / a.data,))


def softmax_lastdim(a: Tensor) -> Tensor:
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((g - dot) * y,)

    return _emit("softmax_lastdim", y, [a], back)


def layer_norm_lastdim(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last dim to zero mean, unit variance (no affine)."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def back(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return ((g - gm - y * gy) * inv,)

    return _emit("layer_norm_lastdim", y, [a], back)


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows of a 2D tensor by integer index (repeats allowed)."""
    idx = np.asarray(indices, dtype=np.intp)
    if a.data.ndim != 2 or idx.ndim != 1:
        raise AutodiffError(f"gather_rows: need 2D tensor and 1D indices, got {a.data.shape}, {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise AutodiffError("gather_rows: index out of range")
    no_repeats = idx.size == 0 or np.bincount(idx, minlength=a.data.shape[0]).max() <= 1

    def back(g):
        full = np.zeros_like(a.data)
        if no_repeats:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _emit("gather_rows", a.data[idx], [a], back)


def scatter_mean_rows(a: Tensor, group_ids, num_groups: int) -> Tensor:
    """Mean-reduce rows of a 2D tensor into `num_groups` buckets.

    Empty groups yield zero rows.
    """
    gid = np.asarray(group_ids, dtype=np.intp)
    if a.data.ndim != 2 or gid.shape != (a.data.shape[0],):
        raise AutodiffError(f"scatter_mean_rows: need 2D tensor and one group id per row, got {a.data.shape}, {gid.shape}")
    if gid.size and (gid.min() < 0 or gid.max() >= num_groups):
        raise AutodiffError("scatter_mean_rows: group id out of range")
    sums = np.zeros((num_groups, a.data.shape[1]))
    np.add.at(sums, gid, a.data)
    counts = np.bincount(gid, minlength=num_groups).astype(np.float64)
    denom = np.maximum(counts, 1.0)[:, None]
    out = sums / denom

    def back(g):
        return (g[gid] / denom[gid],)

    return _emit("scatter_mean_rows", out, [a], back)


# ---------------------------------------------------------------------------
# Dispatch by op kind
# ---------------------------------------------------------------------------

_OPS = {
    "matmul": lambda inputs, **kw: matmul(*inputs),
    "add": lambda inputs, **kw: add(*inputs),
    "sub": lambda inputs, **kw: sub(*inputs),
    "mul": lambda inputs, **kw: mul(*inputs),
    "scale": lambda inputs, *, c, **kw: scale(inputs[0], c),
    "broadcast_to": lambda inputs, *, shape, **kw: broadcast_to(inputs[0], shape),
    "concat": lambda inputs, *, axis=-1, **kw: concat(inputs, axis=axis),
    "slice": lambda inputs, *, axis, start, stop, **kw: narrow(inputs[0], axis, start, stop),
    "reshape": lambda inputs, *, shape, **kw: reshape(inputs[0], shape),
    "reduce_sum": lambda inputs, *, axis=None, keepdims=False, **kw: reduce_sum(inputs[0], axis, keepdims),
    "reduce_mean": lambda inputs, *, axis=None, keepdims=False, **kw: reduce_mean(inputs[0], axis, keepdims),
    "relu": lambda inputs, **kw: relu(inputs[0]),
    "sigmoid": lambda inputs, **kw: sigmoid(inputs[0]),
    "tanh": lambda inputs, **kw: tanh(inputs[0]),
    "exp": lambda inputs, **kw: exp(inputs[0]),
    "log": lambda inputs, **kw: log(inputs[0]),
    "softmax_lastdim": lambda inputs, **kw: softmax_lastdim(inputs[0]),
    "layer_norm_lastdim": lambda inputs, **kw: layer_norm_lastdim(inputs[0]),
    "gather_rows": lambda inputs, *, indices, **kw: gather_rows(inputs[0], indices),
    "scatter_mean_rows": lambda inputs, *, group_ids, num_groups, **kw: scatter_mean_rows(inputs[0], group_ids, num_groups),
}


def forward_op(kind: str, inputs, **attrs) -> Tensor:
    """Run one named op on the active graph."""
    fn = _OPS.get(kind)
    if fn is None:
        raise AutodiffError(f"unknown op kind {kind!r}")
    return fn(list(inputs), **attrs)


def custom_op(name: str, out_data: np.ndarray, inputs, backward_fn) -> Tensor:
    """Record a composite op with a hand-written backward.

    `backward_fn(grad_out) -> tuple of grads aligned with inputs` (None
    entries for inputs that need no gradient). Used for fused layers
    where composing primitives would be needlessly slow.
    """
    return _emit(name, out_data, list(inputs), backward_fn)
