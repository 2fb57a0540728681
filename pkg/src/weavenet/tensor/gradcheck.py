"""Central finite-difference gradient checks."""
from __future__ import annotations

import numpy as np

from .core import Tape


def numeric_gradient(f, x, h=1e-5):
    """Central differences of scalar ``f()`` with respect to array ``x`` (in place)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = float(f())
        flat[i] = old - h
        down = float(f())
        flat[i] = old
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def relative_error(analytic, numeric, floor=1e-8):
    """max |a - n| / max(|a| + |n|, floor) over the whole array, as a scalar."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = max(np.abs(analytic).max(initial=0.0) + np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / denom)


def check_gradients(loss_fn, tensors, h=1e-5):
    """Compare tape gradients against finite differences.

    ``loss_fn()`` must build a scalar Tensor from ``tensors`` (all with
    ``requires_grad``). Returns the list of relative errors, one per tensor.
    """
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    def value():
        return loss_fn().data

    errors = []
    for t, a in zip(tensors, analytic):
        numeric = numeric_gradient(value, t.data, h=h)
        errors.append(relative_error(a, numeric))
    return errors
