"""Minibatch Adagrad training with periodic checkpoints and per-task model selection.

Run directory layout written by :func:`train` when ``checkpoint_dir`` is set::

    <checkpoint_dir>/step_<N>.ckpt      parameters, batch-norm statistics, accumulators
    <checkpoint_dir>/../checkpoint_index.json
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .featurizer import GraphBatch, encode_molecule
from .metrics import MetricError, roc_auc
from .tensor import Tape, backward, checkpoint
from .tensor.optim import adagrad_step


class TrainingDiverged(FloatingPointError):
    """The training loss became NaN or infinite."""


@dataclass
class TrainConfig:
    batch_size: int = 96
    learning_rate: float = 0.003
    max_steps: int = 2000
    checkpoint_every: int = 1000
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.max_steps < 0 or self.checkpoint_every < 1:
            raise ValueError("max_steps must be >= 0 and checkpoint_every >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class CheckpointEntry:
    step: int
    path: str
    metrics: dict
    blob: bytes = field(default=None, repr=False)


class CheckpointIndex:
    """Checkpoints in increasing step order with per-task validation metrics."""

    def __init__(self, task_kinds=None):
        self.entries = []
        self.task_kinds = dict(task_kinds or {})

    def add(self, entry: CheckpointEntry):
        if self.entries and entry.step <= self.entries[-1].step:
            raise ValueError("checkpoint steps must increase (%d after %d)" % (entry.step, self.entries[-1].step))
        self.entries.append(entry)

    def __len__(self):
        return len(self.entries)

    def step(self, step):
        for e in self.entries:
            if e.step == step:
                return e
        raise KeyError("no checkpoint at step %d" % step)

    def to_dict(self):
        return {"task_kinds": self.task_kinds,
                "entries": [{"step": e.step, "path": e.path, "metrics": e.metrics} for e in self.entries]}

    def save(self, path):
        """Write JSON with checkpoint paths relative to the index file."""
        d = self.to_dict()
        base = os.path.dirname(os.path.abspath(path))
        for e in d["entries"]:
            if e["path"] is not None:
                e["path"] = os.path.relpath(os.path.abspath(e["path"]), base)
        with open(path, "w") as fh:
            json.dump(d, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            d = json.load(fh)
        idx = cls(d.get("task_kinds"))
        base = os.path.dirname(os.path.abspath(path))
        for e in d["entries"]:
            p = e["path"]
            if p is not None and not os.path.isabs(p):
                p = os.path.join(base, p)
            idx.add(CheckpointEntry(e["step"], p, e["metrics"]))
        return idx

    def arrays(self, step):
        e = self.step(step)
        return checkpoint.loads(e.blob) if e.blob is not None else checkpoint.load(e.path)


def select_best_per_task(index: CheckpointIndex, task_kinds=None):
    """Task -> step of the best validation metric; ties go to the earliest step.

    Classification maximizes AUC, regression minimizes MSE. NaN metrics never win
    unless every checkpoint is NaN for that task, in which case the last step is used.
    """
    if len(index) == 0:
        raise ValueError("checkpoint index is empty")
    kinds = dict(index.task_kinds)
    kinds.update(task_kinds or {})
    tasks = list(dict.fromkeys(list(index.task_kinds) + list(index.entries[0].metrics)))
    best = {}
    for t in tasks:
        sign = -1.0 if kinds.get(t) == "regression" else 1.0
        chosen, chosen_value = None, -math.inf
        for e in index.entries:
            v = e.metrics.get(t, math.nan)
            if v is None or math.isnan(v):
                continue
            if sign * v > chosen_value:
                chosen, chosen_value = e.step, sign * v
        best[t] = chosen if chosen is not None else index.entries[-1].step
    return best


def encode_all(model, graphs):
    cfg = model.cfg.feature_config
    return [encode_molecule(g, cfg) for g in graphs]


def predict_encoded(model, encoded, batch_size=256):
    """Inference-mode predictions ``[n, tasks]`` for pre-encoded molecules."""
    out = []
    for start in range(0, len(encoded), batch_size):
        batch = GraphBatch.from_encoded(encoded[start:start + batch_size])
        out.append(model.predict(batch).values)
    return np.concatenate(out, axis=0) if out else np.zeros((0, len(model.tasks)))


def validation_metrics(model, encoded, labels):
    """Per-task AUC (classification) or MSE (regression); NaN when undefined."""
    labels = np.asarray(labels, dtype=np.float64).reshape(len(encoded), -1)
    pred = predict_encoded(model, encoded)
    metrics = {}
    for t, task in enumerate(model.tasks):
        keep = ~np.isnan(labels[:, t])
        y, p = labels[keep, t], pred[keep, t]
        if task.is_classification:
            try:
                metrics[task.name] = roc_auc(p, y)
            except MetricError:
                metrics[task.name] = math.nan
        else:
            metrics[task.name] = float(np.mean((p - y) ** 2)) if y.size else math.nan
    return metrics


def train(model, train_graphs, train_labels, train_weights, cfg: TrainConfig,
          valid_graphs=None, valid_labels=None, checkpoint_dir=None, log=None):
    """Fit ``model`` in place and return the checkpoint index.

    Minibatches are drawn from a fresh seeded permutation every epoch.
    Checkpoints are taken every ``cfg.checkpoint_every`` steps and at the final
    step, with validation metrics when a validation set is given. Without
    ``checkpoint_dir`` checkpoints are kept in memory.
    """
    train_labels = np.asarray(train_labels, dtype=np.float64).reshape(len(train_graphs), -1)
    train_weights = np.asarray(train_weights, dtype=np.float64).reshape(train_labels.shape)
    train_weights = np.where(np.isnan(train_labels), 0.0, train_weights)
    encoded = encode_all(model, train_graphs)
    valid_encoded = encode_all(model, valid_graphs) if valid_graphs is not None else None
    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)
    index = CheckpointIndex({t.name: t.kind for t in model.tasks})
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    n = len(encoded)
    order, cursor = rng.permutation(n), 0
    running = []

    def take_checkpoint(step):
        metrics = validation_metrics(model, valid_encoded, valid_labels) if valid_encoded is not None else {}
        extra = {"step": step}
        if checkpoint_dir is None:
            blob = checkpoint.dumps(model.params.state_arrays(), {"kind": "weave", "model": model.cfg.to_dict(), **extra})
            index.add(CheckpointEntry(step, None, metrics, blob))
        else:
            path = os.path.join(checkpoint_dir, "step_%d.ckpt" % step)
            model.save(path, extra)
            index.add(CheckpointEntry(step, path, metrics))
        if log is not None:
            log({"event": "checkpoint", "step": step, "metrics": metrics})

    for step in range(1, cfg.max_steps + 1):
        if cursor >= n:
            order, cursor = rng.permutation(n), 0
        rows = order[cursor:cursor + cfg.batch_size]
        cursor += cfg.batch_size
        # a batch with every label missing carries no signal; the step still counts
        if np.any(train_weights[rows] > 0):
            batch = GraphBatch.from_encoded([encoded[i] for i in rows])
            with Tape() as tape:
                loss = model.loss(batch, train_labels[rows], train_weights[rows], training=True)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged("loss became %r at step %d" % (value, step))
            backward(loss, tape, params)
            adagrad_step(params, lr=cfg.learning_rate)
            running.append(value)
        if log is not None and step % cfg.log_every == 0:
            log({"event": "train", "step": step, "loss": float(np.mean(running)) if running else math.nan})
            running = []
        if step % cfg.checkpoint_every == 0 or step == cfg.max_steps:
            take_checkpoint(step)
    if cfg.max_steps == 0:
        take_checkpoint(0)
    return index


def load_checkpoint_into(model, index, step):
    arrays, _ = index.arrays(step)
    model.params.load_state_arrays(arrays)
    return model


def predict_best_per_task(model, index, graphs, task_kinds=None):
    """Predictions where column ``t`` comes from task ``t``'s selected checkpoint."""
    best = select_best_per_task(index, task_kinds)
    encoded = encode_all(model, graphs)
    out = np.zeros((len(graphs), len(model.tasks)))
    cache = {}
    for t, task in enumerate(model.tasks):
        step = best[task.name]
        if step not in cache:
            load_checkpoint_into(model, index, step)
            cache[step] = predict_encoded(model, encoded)
        out[:, t] = cache[step][:, t]
    return out, best
