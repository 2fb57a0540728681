"""Adagrad parameter updates."""
from __future__ import annotations

import numpy as np


def adagrad_step(params, grads=None, lr=0.003, eps=1e-8):
    """One in-place Adagrad update.

    ``acc += g**2`` then ``p -= lr * g / (sqrt(acc) + eps)``. When ``grads`` is
    None each parameter's ``.grad`` is used; a missing gradient counts as zero.
    """
    params = list(params)
    if grads is None:
        grads = [p.grad for p in params]
    grads = list(grads)
    if len(grads) != len(params):
        raise ValueError("got %d gradients for %d parameters" % (len(grads), len(params)))
    for p, g in zip(params, grads):
        if g is None:
            continue
        g = np.asarray(g, dtype=p.data.dtype)
        if g.shape != p.data.shape:
            raise ValueError("gradient shape %s does not match %s for %r" % (g.shape, p.data.shape, p.name))
        p.accumulator += g * g
        p.data -= lr * g / (np.sqrt(p.accumulator) + eps)
    return params


def sgd_step(params, grads=None, lr=0.0003):
    """Plain gradient descent, used by the fingerprint network baseline."""
    params = list(params)
    if grads is None:
        grads = [p.grad for p in params]
    for p, g in zip(params, grads):
        if g is not None:
            p.data -= lr * np.asarray(g, dtype=p.data.dtype)
    return params
