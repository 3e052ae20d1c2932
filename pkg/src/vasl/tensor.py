"""Rank-4 double-precision tensors with tape-based reverse-mode differentiation.

Every tensor is laid out as ``[batch, channel, height, width]``; scalars are
``[1, 1, 1, 1]``.  Operations performed while a :class:`Tape` is active and
at least one operand is tracked (a parameter with ``requires_grad`` or the
output of an earlier recorded op) append a node to the tape.  Recording order
is creation order, so the tape is topologically sorted by construction.

    >>> w = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    >>> with Tape():
    ...     loss = sum_all(w * w)
    ...     backward(loss)
    >>> w.grad[0, 0]
    array([[2., 2.],
           [2., 2.]])
"""

from contextlib import contextmanager

import numpy as np

from . import rng

__all__ = [
    "Tensor",
    "Tape",
    "TapeError",
    "backward",
    "randn",
    "zeros",
    "ones",
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "relu",
    "sigmoid",
    "concat_channels",
    "split_channels",
    "swap_axes",
    "channel_gate",
    "sum_all",
    "mean_all",
    "kink_trace",
]


class TapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 4:
            raise ValueError(f"tensors are rank 4 [N, C, H, W], got shape {arr.shape}")
        rng.element_count(arr.shape)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = None
        self.name = name

    @property
    def dims(self):
        return tuple(self.data.shape)

    @property
    def size(self):
        return self.data.size

    @property
    def tracked(self):
        return self.requires_grad or self._node is not None

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got {self.dims}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(dims={list(self.dims)}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

_active = []
_kinks = []


class Tape:
    """Ordered record of differentiable operations.

    Single owner; use as a context manager to make it the recording target.
    """

    def __init__(self):
        self.nodes = []
        self.consumed = False

    def __enter__(self):
        _active.append(self)
        return self

    def __exit__(self, *exc):
        _active.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, out, inputs, backward_fn):
        out._node = (self, len(self.nodes))
        self.nodes.append((inputs, backward_fn))


def _record(out, inputs, backward_fn):
    if not _active:
        return out
    tape = _active[-1]
    if any(t.tracked for t in inputs):
        tape.record(out, inputs, backward_fn)
    return out


@contextmanager
def kink_trace():
    """Collect the branch decisions (relu signs, max arg-indices, clamps) of
    every op evaluated inside the block.  Two forwards that differ only by a
    small input perturbation lie on the same smooth piece iff their traces
    are equal."""
    log = []
    _kinks.append(log)
    try:
        yield log
    finally:
        _kinks.remove(log)


def _log_kink(decision):
    for log in _kinks:
        log.append(decision)


def backward(loss):
    """Propagate d(loss)/d(.) to every ``requires_grad`` leaf feeding ``loss``.

    Leaf gradients accumulate into ``.grad``; the tape can be replayed once.
    """
    if loss.dims != (1, 1, 1, 1):
        raise ValueError(f"backward needs a scalar [1,1,1,1] loss, got {list(loss.dims)}")
    if loss._node is None:
        raise TapeError("loss is not connected to any recorded operation")
    tape, root = loss._node
    if tape.consumed:
        raise TapeError("tape already replayed; record a fresh forward pass")
    tape.consumed = True

    grads = {root: np.ones((1, 1, 1, 1))}
    for idx in range(root, -1, -1):
        g = grads.pop(idx, None)
        if g is None:
            continue
        inputs, fn = tape.nodes[idx]
        tape.nodes[idx] = None
        for t, gi in zip(inputs, fn(g)):
            if gi is None:
                continue
            node = t._node
            if node is not None and node[0] is tape:
                j = node[1]
                if j in grads:
                    grads[j] = grads[j] + gi
                else:
                    grads[j] = gi
            elif t.requires_grad:
                t.grad = gi.copy() if t.grad is None else t.grad + gi
    tape.nodes = []


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def randn(dims, seed, requires_grad=False):
    n = rng.element_count(dims)
    return Tensor(rng.standard_normal(n, seed).reshape(tuple(int(d) for d in dims)), requires_grad)


def zeros(dims, requires_grad=False):
    return Tensor(np.zeros(tuple(dims)), requires_grad)


def ones(dims, requires_grad=False):
    return Tensor(np.ones(tuple(dims)), requires_grad)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def _same_dims(a, b, op):
    if a.dims != b.dims:
        raise ValueError(f"{op}: dims mismatch {list(a.dims)} vs {list(b.dims)}")


def add(a, b):
    _same_dims(a, b, "add")
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (g, g))


def sub(a, b):
    _same_dims(a, b, "sub")
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (g, -g))


def mul(a, b):
    _same_dims(a, b, "mul")
    out = Tensor(a.data * b.data)
    return _record(out, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a, c):
    c = float(c)
    out = Tensor(a.data * c)
    return _record(out, (a,), lambda g: (g * c,))


def add_scalar(a, c):
    out = Tensor(a.data + float(c))
    return _record(out, (a,), lambda g: (g,))


def relu(a):
    mask = a.data > 0
    _log_kink(mask)
    # maximum (unlike where) lets NaN through so bad inputs surface in the loss
    out = Tensor(np.maximum(a.data, 0.0))
    return _record(out, (a,), lambda g: (g * mask,))


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a):
    s = _sigmoid(a.data)
    out = Tensor(s)
    return _record(out, (a,), lambda g: (g * s * (1.0 - s),))


# ---------------------------------------------------------------------------
# structural
# ---------------------------------------------------------------------------

def concat_channels(parts):
    parts = list(parts)
    if not parts:
        raise ValueError("concat_channels needs at least one tensor")
    n, _, h, w = parts[0].dims
    for p in parts[1:]:
        if (p.dims[0], p.dims[2], p.dims[3]) != (n, h, w):
            raise ValueError(
                f"concat_channels: batch/spatial mismatch {list(parts[0].dims)} vs {list(p.dims)}"
            )
    if len(parts) == 1:
        return parts[0]
    bounds = np.cumsum([0] + [p.dims[1] for p in parts])
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))

    def bw(g):
        return tuple(g[:, bounds[k]:bounds[k + 1]] for k in range(len(parts)))

    return _record(out, tuple(parts), bw)


def split_channels(x, widths):
    """Inverse of :func:`concat_channels` for known slab widths."""
    if sum(widths) != x.dims[1]:
        raise ValueError(f"split widths {list(widths)} do not sum to {x.dims[1]} channels")
    outs = []
    start = 0
    for w in widths:
        stop = start + w
        piece = Tensor(x.data[:, start:stop].copy())

        def bw(g, start=start, stop=stop):
            full = np.zeros_like(x.data)
            full[:, start:stop] = g
            return (full,)

        outs.append(_record(piece, (x,), bw))
        start = stop
    return outs


def swap_axes(x, a, b):
    """Exchange two of the four axes (its own inverse)."""
    axes = [0, 1, 2, 3]
    axes[a], axes[b] = axes[b], axes[a]
    out = Tensor(np.ascontiguousarray(x.data.transpose(axes)))
    return _record(out, (x,), lambda g: (np.ascontiguousarray(g.transpose(axes)),))


def channel_gate(x, gate):
    """``x * gate`` where a one-channel ``gate`` is shared by every channel."""
    n, _, h, w = x.dims
    if gate.dims != (n, 1, h, w):
        raise ValueError(f"channel_gate: gate dims {list(gate.dims)} do not fit {list(x.dims)}")
    out = Tensor(x.data * gate.data)

    def bw(g):
        return g * gate.data, (g * x.data).sum(axis=1, keepdims=True)

    return _record(out, (x, gate), bw)


def sum_all(x):
    out = Tensor(np.array(x.data.sum()).reshape(1, 1, 1, 1))
    shape = x.dims
    return _record(out, (x,), lambda g: (np.full(shape, g.reshape(-1)[0]),))


def mean_all(x):
    n = x.size
    out = Tensor(np.array(x.data.mean()).reshape(1, 1, 1, 1))
    shape = x.dims
    return _record(out, (x,), lambda g: (np.full(shape, g.reshape(-1)[0] / n),))
