"""Differentiable operations.

Every op takes and returns :class:`Tensor` objects and records a backward
closure on the active tape. Row masks are boolean arrays over the leading
axes; masked rows never contribute to outputs, statistics or gradients.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Tensor, as_tensor, record


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    out = Tensor(a.data + b.data)
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    out = Tensor(a.data - b.data)
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    out = Tensor(a.data * b.data)
    return record(out, (a, b), lambda g: (
        _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def dense(x, w, b=None):
    """Affine map over the last axis: ``x @ w + b`` (``b`` may be None)."""
    x = as_tensor(x)
    if x.shape[-1] != w.shape[0] or (b is not None and w.shape[1:] != b.shape):
        raise ValueError("dense shape mismatch: x%s, W%s, b%s"
                         % (x.shape, w.shape, None if b is None else b.shape))
    data = x.data @ w.data
    if b is not None:
        data = data + b.data
    out = Tensor(data)

    def backward(g):
        flat_g = g.reshape(-1, g.shape[-1])
        gx = g @ w.data.T
        gw = x.data.reshape(-1, x.shape[-1]).T @ flat_g
        if b is None:
            return gx, gw
        return gx, gw, flat_g.sum(axis=0)

    return record(out, (x, w) if b is None else (x, w, b), backward)


def relu(x):
    """max(0, x) with subgradient 0 at 0; NaN passes through."""
    positive = x.data > 0
    out = Tensor(np.where(x.data <= 0, 0.0, x.data).astype(x.dtype))
    return record(out, (x,), lambda g: (g * positive,))


def square(x):
    out = Tensor(x.data * x.data)
    return record(out, (x,), lambda g: (2.0 * g * x.data,))


def sqrt(x):
    """Elementwise square root; gradient taken as 0 where the input is 0."""
    root = np.sqrt(x.data)
    out = Tensor(root)

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(root > 0, 0.5 / root, 0.0)
        return (g * d,)

    return record(out, (x,), backward)


def exp(x):
    e = np.exp(x.data)
    out = Tensor(e)
    return record(out, (x,), lambda g: (g * e,))


def log(x):
    out = Tensor(np.log(x.data))
    return record(out, (x,), lambda g: (g / x.data,))


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    out = Tensor(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return record(out, (x,), backward)


def mean(x, axis=None, keepdims=False):
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x, shape):
    out = Tensor(x.data.reshape(shape))
    return record(out, (x,), lambda g: (g.reshape(x.shape),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return record(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def gather(x, index):
    """Rows ``x[index]`` along the first axis."""
    index = np.asarray(index, dtype=np.int64)
    out = Tensor(x.data[index])

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return record(out, (x,), backward)


def segment_sum(x, segment_ids, num_segments):
    """Sum rows of ``x`` sharing a segment id; empty segments give zeros."""
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    data = np.zeros((num_segments,) + x.shape[1:], dtype=x.dtype)
    np.add.at(data, segment_ids, x.data)
    out = Tensor(data)
    return record(out, (x,), lambda g: (g[segment_ids],))


def masked_sum(x, mask, axis):
    """Sum over ``axis`` with entries where ``mask`` is False excluded.

    ``mask`` covers the leading ``mask.ndim`` axes of ``x``.
    """
    mask = np.asarray(mask, dtype=bool)
    expand = mask.reshape(mask.shape + (1,) * (x.ndim - mask.ndim))
    out = Tensor(np.where(expand, x.data, 0.0).sum(axis=axis))

    def backward(g):
        g = np.expand_dims(g, axis)
        return (np.where(expand, np.broadcast_to(g, x.shape), 0.0),)

    return record(out, (x,), backward)


def segment_rms(x, segment_ids, num_segments):
    """sqrt(mean of squares) per segment; gradient 0 where the RMS is 0."""
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    counts = np.bincount(segment_ids, minlength=num_segments).astype(x.dtype)
    if np.any(counts == 0):
        raise ValueError("RMS reduction over a molecule with zero atoms")
    sq = np.zeros((num_segments,) + x.shape[1:], dtype=x.dtype)
    np.add.at(sq, segment_ids, x.data * x.data)
    shape = (-1,) + (1,) * (x.ndim - 1)
    rms = np.sqrt(sq / counts.reshape(shape))
    out = Tensor(rms)

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(rms > 0, g / (rms * counts.reshape(shape)), 0.0)
        return (x.data * scale[segment_ids],)

    return record(out, (x,), backward)


def softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return record(out, (x,), backward)


def softmax_cross_entropy(logits, labels, weights):
    """Weighted cross-entropy of per-task class logits.

    ``logits`` is [n, tasks, classes]; ``labels`` integer [n, tasks];
    ``weights`` [n, tasks] (0 drops an entry). Returns
    ``sum(weights * -log softmax[label]) / n``.
    """
    labels = np.asarray(labels)
    weights = np.asarray(weights, dtype=logits.dtype)
    n = logits.shape[0]
    z = logits.data
    shifted = z - z.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_norm
    safe_labels = np.where(weights > 0, labels, 0).astype(np.int64)
    picked = np.take_along_axis(log_probs, safe_labels[..., None], axis=-1)[..., 0]
    value = -(weights * picked).sum() / n
    out = Tensor(np.asarray(value, dtype=logits.dtype))

    def backward(g):
        probs = np.exp(log_probs)
        onehot = np.zeros_like(probs)
        np.put_along_axis(onehot, safe_labels[..., None], 1.0, axis=-1)
        return (g * weights[..., None] * (probs - onehot) / n,)

    return record(out, (logits,), backward)


def l2_loss(pred, target, weights):
    """``sum(weights * (pred - target)**2) / n`` over [n, tasks] arrays."""
    target = np.asarray(target, dtype=pred.dtype)
    weights = np.asarray(weights, dtype=pred.dtype)
    n = pred.shape[0]
    diff = np.where(weights > 0, pred.data - np.nan_to_num(target), 0.0)
    out = Tensor(np.asarray((weights * diff * diff).sum() / n, dtype=pred.dtype))
    return record(out, (pred,), lambda g: (g * 2.0 * weights * diff / n,))


def gaussian_memberships(x, means, variances):
    """Normalized Gaussian bin contributions, shape x.shape + (bins,).

    Unnormalized memberships exp(-(x - mean)^2 / (2 var)) divided by their sum
    over bins, computed in log space so far-out points stay finite.
    """
    means = np.asarray(means, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    logits = -((x[..., None] - means) ** 2) / (2.0 * variances)
    logits -= logits.max(axis=-1, keepdims=True)
    m = np.exp(logits)
    return m / m.sum(axis=-1, keepdims=True)


def gaussian_histogram(x, segment_ids, num_segments, means, variances):
    """Fuzzy histogram of every feature column, summed per segment.

    ``x`` is [atoms, features]; the output is [segments, features * bins]
    laid out feature-major (all bins of feature 0, then feature 1, ...).
    """
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    means = np.asarray(means, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    c = gaussian_memberships(x.data, means, variances)          # [N, D, K]
    n_feat, n_bins = x.shape[1], len(means)
    hist = np.zeros((num_segments, n_feat, n_bins), dtype=x.dtype)
    np.add.at(hist, segment_ids, c)
    out = Tensor(hist.reshape(num_segments, n_feat * n_bins))

    def backward(g):
        g = g.reshape(num_segments, n_feat, n_bins)[segment_ids]   # [N, D, K]
        ds = -(x.data[..., None] - means) / variances               # d logit / dx
        inner = (c * ds).sum(axis=-1, keepdims=True)
        dc_dx = c * (ds - inner)
        return ((g * dc_dx).sum(axis=-1).astype(x.dtype),)

    return record(out, (x,), backward)


@dataclass
class BatchNormState:
    """Running statistics for one batch-norm layer."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.99
    eps: float = 1e-5
    skipped_batches: int = 0

    @classmethod
    def create(cls, width, dtype=np.float64, momentum=0.99, eps=1e-5):
        return cls(np.zeros(width, dtype=dtype), np.ones(width, dtype=dtype), momentum, eps)


def batch_norm(x, gamma, beta, state, training, mask=None):
    """Per-feature normalization over valid rows, then ``gamma * xhat + beta``.

    Training mode uses the batch statistics of the valid rows (biased
    variance) and updates the running averages; inference mode uses the
    running averages. With fewer than two valid rows in training mode the
    input passes through unchanged and ``state.skipped_batches`` is bumped.
    Masked rows come out as zeros.
    """
    x = as_tensor(x)
    data = x.data
    if mask is None:
        valid = np.ones(data.shape[:-1], dtype=bool)
    else:
        valid = np.asarray(mask, dtype=bool)
    rows = data[valid]
    count = rows.shape[0]
    vmask = valid[..., None]

    if training and count < 2:
        state.skipped_batches += 1
        out = Tensor(np.where(vmask, data, 0.0).astype(data.dtype))
        return record(out, (x,), lambda g: (np.where(vmask, g, 0.0),))

    if training:
        mu = rows.mean(axis=0)
        var = rows.var(axis=0)
        m = state.momentum
        state.running_mean = m * state.running_mean + (1.0 - m) * mu
        state.running_var = m * state.running_var + (1.0 - m) * var
    else:
        mu, var = state.running_mean, state.running_var
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (data - mu) * inv_std
    out_data = np.where(vmask, gamma.data * xhat + beta.data, 0.0).astype(data.dtype)
    out = Tensor(out_data)

    def backward(g):
        g = np.where(vmask, g, 0.0)
        gv = g[valid]
        xv = xhat[valid]
        dgamma = (gv * xv).sum(axis=0)
        dbeta = gv.sum(axis=0)
        dxhat = gv * gamma.data
        if training:
            dx_valid = inv_std * (dxhat - dxhat.mean(axis=0) - xv * (dxhat * xv).mean(axis=0))
        else:
            dx_valid = dxhat * inv_std
        dx = np.zeros_like(data)
        dx[valid] = dx_valid
        return dx, dgamma, dbeta

    return record(out, (x, gamma, beta), backward)


def dropout(x, rate, rng, training):
    """Inverted dropout: zero with probability ``rate``, scale survivors."""
    if not training or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    out = Tensor(x.data * keep)
    return record(out, (x,), lambda g: (g * keep,))

