"""Tensors, parameters and the reverse-mode tape."""
from __future__ import annotations

import numpy as np

_TAPES = []
_CHECKED = [False]


def set_checked(enabled):
    """Turn on NaN checks after every op; returns the previous setting."""
    previous = _CHECKED[0]
    _CHECKED[0] = bool(enabled)
    return previous


class Tensor:
    """A dense float array that can take part in reverse-mode differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "__weakref__")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def __repr__(self):
        return "Tensor(shape=%s, requires_grad=%s)" % (self.shape, self.requires_grad)

    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)


class Parameter(Tensor):
    """Trainable tensor with a name and an Adagrad accumulator."""

    __slots__ = ("name", "accumulator")

    def __init__(self, data, name="", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.accumulator = np.zeros_like(self.data)

    def __repr__(self):
        return "Parameter(%r, shape=%s)" % (self.name, self.shape)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


class Tape:
    """Records differentiable ops executed inside ``with Tape() as tape:``.

    Ops are appended in execution order, which is a topological order of the
    computation graph; :meth:`backward` replays them in exact reverse.
    """

    def __init__(self):
        self.records = []
        self._used = False

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def record(self, out, inputs, backward_fn):
        self.records.append((out, inputs, backward_fn))

    def leaves(self):
        produced = {id(out) for out, _, _ in self.records}
        seen = {}
        for _, inputs, _ in self.records:
            for t in inputs:
                if t.requires_grad and id(t) not in produced:
                    seen[id(t)] = t
        return list(seen.values())

    def backward(self, loss):
        """Fill ``.grad`` of every leaf reached from ``loss`` (a scalar)."""
        if not isinstance(loss, Tensor) or loss.data.size != 1:
            raise ValueError("backward needs a scalar loss tensor")
        if self._used:
            raise RuntimeError("tape already consumed by a backward pass")
        self._used = True
        for leaf in self.leaves():
            leaf.grad = None
        for out, _, _ in self.records:
            out.grad = None
        loss.grad = np.ones_like(loss.data)
        for out, inputs, fn in reversed(self.records):
            g = out.grad
            if g is None:
                continue
            grads = fn(g)
            for t, gi in zip(inputs, grads):
                if gi is None or not t.requires_grad:
                    continue
                if gi.shape != t.data.shape:
                    gi = np.broadcast_to(gi, t.data.shape)
                t.grad = gi.copy() if t.grad is None else t.grad + gi
        return loss


def backward(loss, tape, params=()):
    """Run ``tape.backward(loss)``; parameters not reached get zero gradients."""
    tape.backward(loss)
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


def record(out, inputs, backward_fn):
    """Register ``out`` on the active tape if any input needs gradients."""
    if _CHECKED[0] and np.isnan(out.data).any():
        raise FloatingPointError("NaN produced by %s" % getattr(backward_fn, "__qualname__", "op"))
    if not _TAPES:
        return out
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _TAPES[-1].record(out, inputs, backward_fn)
    return out


def active_tape():
    return _TAPES[-1] if _TAPES else None
