"""Scikit-learn style estimators for the graph model and the fingerprint baselines.

All classifiers accept ``y`` as a vector (one task) or an ``[n, tasks]``
matrix with NaN marking missing labels. ``predict_scores`` always returns
``[n, tasks]`` active-class probabilities (or values for regression);
``predict_proba`` follows scikit-learn and returns ``[n, 2]`` for one task
or a list of such arrays for several.
"""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, TransformerMixin
from sklearn.model_selection import train_test_split
from sklearn.utils.validation import check_array, check_is_fitted

from .datasets import compute_class_weights
from .featurizer import as_graph
from .fingerprints import morgan_fingerprint, tanimoto_matrix
from .metrics import MetricError, roc_auc
from .model import LR_L2_GRID, ModelConfig, PMTNNConfig, TaskSpec, WeaveModel, build_logistic_regression, build_pmtnn
from .tensor import Tape, backward
from .tensor.optim import adagrad_step, sgd_step
from .train import CheckpointEntry, CheckpointIndex, TrainConfig, predict_best_per_task, select_best_per_task, train
from .weave import WeaveConfig


def _as_graphs(X):
    if isinstance(X, str):
        raise TypeError("expected a sequence of SMILES strings or graphs, got a single string")
    graphs = [as_graph(x) for x in X]
    if not graphs:
        raise ValueError("no molecules given")
    return graphs


def _label_matrix(y, n):
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if y.ndim != 2 or y.shape[0] != n:
        raise ValueError("y must have %d rows, got shape %s" % (n, y.shape))
    return y


def _check_binary(y):
    present = y[~np.isnan(y)]
    if not np.all(np.isin(present, (0.0, 1.0))):
        raise ValueError("classification labels must be 0, 1 or NaN")


def _proba_output(scores):
    probs = [np.stack([1.0 - scores[:, t], scores[:, t]], axis=1) for t in range(scores.shape[1])]
    return probs[0] if len(probs) == 1 else probs


def _task_names(n_tasks, names):
    if names is None:
        return ["task_%d" % t for t in range(n_tasks)] if n_tasks > 1 else ["y"]
    names = list(names)
    if len(names) != n_tasks:
        raise ValueError("%d task names for %d label columns" % (len(names), n_tasks))
    return names


class MorganFingerprinter(TransformerMixin, BaseEstimator):
    """SMILES (or graphs) to folded circular fingerprint bits.

    Parameters
    ----------
    radius : int
    n_bits : int
        Folded length, a power of two.
    """

    def __init__(self, radius=2, n_bits=2048):
        self.radius = radius
        self.n_bits = n_bits

    def fit(self, X, y=None):
        if self.n_bits < 1 or self.n_bits & (self.n_bits - 1):
            raise ValueError("n_bits must be a power of two")
        self.n_features_out_ = self.n_bits
        return self

    def transform(self, X):
        return np.stack([morgan_fingerprint(g, self.radius, self.n_bits) for g in _as_graphs(X)])


class _WeaveEstimator(BaseEstimator):
    _task_kind = None

    def __init__(self, mode="full", num_modules=1, max_pair_distance=2, conv_depth=50,
                 final_atom_depth=128, reduction="gaussian_histogram", fc_layers=(2000, 100),
                 max_atoms=60, batch_size=96, learning_rate=0.003, max_steps=2000,
                 checkpoint_every=1000, init="he_uniform", random_state=0, task_names=None):
        self.mode = mode
        self.num_modules = num_modules
        self.max_pair_distance = max_pair_distance
        self.conv_depth = conv_depth
        self.final_atom_depth = final_atom_depth
        self.reduction = reduction
        self.fc_layers = fc_layers
        self.max_atoms = max_atoms
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.max_steps = max_steps
        self.checkpoint_every = checkpoint_every
        self.init = init
        self.random_state = random_state
        self.task_names = task_names

    def model_config(self, tasks):
        d = self.conv_depth
        weave = WeaveConfig(self.num_modules, self.max_pair_distance, d, d, d, d, d, d,
                            self.final_atom_depth, self.reduction)
        return ModelConfig(weave=weave, fc_layers=tuple(self.fc_layers), tasks=tasks,
                           feature_mode=self.mode, max_atoms=self.max_atoms, init=self.init,
                           seed=self.random_state)

    def train_config(self):
        return TrainConfig(self.batch_size, self.learning_rate, self.max_steps,
                           self.checkpoint_every, self.random_state)

    def _prepare_targets(self, y):
        return y, np.where(np.isnan(y), 0.0, 1.0)

    def fit(self, X, y, eval_set=None, checkpoint_dir=None, log=None):
        """Train; with ``eval_set=(X_valid, y_valid)`` keep each task's best checkpoint."""
        graphs = _as_graphs(X)
        y = _label_matrix(y, len(graphs))
        names = _task_names(y.shape[1], self.task_names)
        tasks = [TaskSpec(n, self._task_kind) for n in names]
        targets, weights = self._prepare_targets(y)
        valid_graphs = valid_targets = None
        if eval_set is not None:
            valid_graphs = _as_graphs(eval_set[0])
            valid_targets = self._transform_targets(_label_matrix(eval_set[1], len(valid_graphs)))
        self.model_ = WeaveModel(self.model_config(tasks))
        self.index_ = train(self.model_, graphs, targets, weights, self.train_config(),
                            valid_graphs, valid_targets, checkpoint_dir=checkpoint_dir, log=log)
        self.best_steps_ = select_best_per_task(self.index_)
        self.n_tasks_ = len(tasks)
        return self

    def _transform_targets(self, y):
        return y

    def _raw_scores(self, X):
        check_is_fitted(self, "model_")
        scores, _ = predict_best_per_task(self.model_, self.index_, _as_graphs(X))
        return scores


class WeaveClassifier(ClassifierMixin, _WeaveEstimator):
    """Graph convolution classifier with one two-way softmax head per task.

    Actives are up-weighted per task so both classes carry equal total weight.
    """

    _task_kind = "binary_classification"

    def _prepare_targets(self, y):
        _check_binary(y)
        self.classes_ = np.array([0, 1])
        return y, compute_class_weights(y)

    def predict_scores(self, X):
        return self._raw_scores(X)

    def predict_proba(self, X):
        return _proba_output(self.predict_scores(X))

    def predict(self, X):
        s = self.predict_scores(X)
        out = (s >= 0.5).astype(np.int64)
        return out[:, 0] if out.shape[1] == 1 else out


class WeaveRegressor(RegressorMixin, _WeaveEstimator):
    """Graph convolution regressor; targets are standardized per task during training."""

    _task_kind = "regression"

    def _prepare_targets(self, y):
        self.y_mean_ = np.nanmean(y, axis=0)
        std = np.nanstd(y, axis=0)
        self.y_scale_ = np.where(std > 0, std, 1.0)
        return self._transform_targets(y), np.where(np.isnan(y), 0.0, 1.0)

    def _transform_targets(self, y):
        return (y - self.y_mean_) / self.y_scale_

    def predict_scores(self, X):
        return self._raw_scores(X) * self.y_scale_ + self.y_mean_

    def predict(self, X):
        s = self.predict_scores(X)
        return s[:, 0] if s.shape[1] == 1 else s


class PMTNNClassifier(ClassifierMixin, BaseEstimator):
    """Pyramidal multitask network on fingerprint bits.

    Defaults follow the published baseline (plain SGD, learning rate 3e-4,
    batch 128). ``optimizer="adagrad"`` is available for short runs.
    """

    def __init__(self, hidden=(2000, 100), dropout=0.25, weight_std=(0.01, 0.04), bias_init=(0.5, 3.0),
                 optimizer="sgd", learning_rate=0.0003, batch_size=128, max_steps=2000,
                 checkpoint_every=500, random_state=0, task_names=None):
        self.hidden = hidden
        self.dropout = dropout
        self.weight_std = weight_std
        self.bias_init = bias_init
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.checkpoint_every = checkpoint_every
        self.random_state = random_state
        self.task_names = task_names

    def fit(self, X, y, eval_set=None):
        if self.optimizer not in ("sgd", "adagrad"):
            raise ValueError("optimizer must be 'sgd' or 'adagrad'")
        X = check_array(X, dtype=np.float64)
        y = _label_matrix(y, X.shape[0])
        _check_binary(y)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        names = _task_names(y.shape[1], self.task_names)
        cfg = PMTNNConfig(tuple(self.hidden), self.dropout, tuple(self.weight_std), tuple(self.bias_init),
                          tasks=[TaskSpec(n) for n in names], seed=self.random_state)
        self.model_ = model = build_pmtnn(X.shape[1], cfg)
        weights = compute_class_weights(y)
        params = model.parameters()
        rng = np.random.default_rng(self.random_state)
        Xv = yv = None
        if eval_set is not None:
            Xv = check_array(eval_set[0], dtype=np.float64)
            yv = _label_matrix(eval_set[1], Xv.shape[0])
        index = CheckpointIndex({n: "binary_classification" for n in names})
        snapshots = {}
        order, cursor, n = rng.permutation(len(X)), 0, len(X)
        for step in range(1, self.max_steps + 1):
            if cursor >= n:
                order, cursor = rng.permutation(n), 0
            rows = order[cursor:cursor + self.batch_size]
            cursor += self.batch_size
            if np.any(weights[rows] > 0):
                with Tape() as tape:
                    loss = model.loss(X[rows], y[rows], weights[rows], training=True)
                backward(loss, tape, params)
                if self.optimizer == "sgd":
                    sgd_step(params, lr=self.learning_rate)
                else:
                    adagrad_step(params, lr=self.learning_rate)
            if step % self.checkpoint_every == 0 or step == self.max_steps:
                snapshots[step] = {k: p.data.copy() for k, p in model.params.params.items()}
                metrics = {}
                if Xv is not None:
                    pv = model.predict(Xv).values
                    for t, name in enumerate(names):
                        keep = ~np.isnan(yv[:, t])
                        try:
                            metrics[name] = roc_auc(pv[keep, t], yv[keep, t])
                        except MetricError:
                            metrics[name] = math.nan
                index.add(CheckpointEntry(step, None, metrics))
        self.index_ = index
        self.best_steps_ = select_best_per_task(index)
        self._snapshots = snapshots
        self.task_names_ = names
        return self

    def predict_scores(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        out = np.zeros((X.shape[0], len(self.task_names_)))
        current = {k: p.data for k, p in self.model_.params.params.items()}
        try:
            for t, name in enumerate(self.task_names_):
                snap = self._snapshots[self.best_steps_[name]]
                for k, p in self.model_.params.params.items():
                    p.data = snap[k]
                out[:, t] = self.model_.predict(X).values[:, t]
        finally:
            for k, p in self.model_.params.params.items():
                p.data = current[k]
        return out

    def predict_proba(self, X):
        return _proba_output(self.predict_scores(X))

    def predict(self, X):
        s = (self.predict_scores(X) >= 0.5).astype(np.int64)
        return s[:, 0] if s.shape[1] == 1 else s


class LogisticRegressionBaseline(ClassifierMixin, BaseEstimator):
    """Per-task L2 logistic regression with the penalty picked on validation AUC.

    Without an ``eval_set`` a stratified 20% of the training data is held out
    for the grid search.
    """

    def __init__(self, l2_grid=LR_L2_GRID, max_iter=10000, random_state=0):
        self.l2_grid = l2_grid
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y, eval_set=None):
        X = check_array(X, dtype=np.float64)
        y = _label_matrix(y, X.shape[0])
        _check_binary(y)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        self.models_, self.l2_, self.grid_scores_ = [], [], []
        for t in range(y.shape[1]):
            keep = ~np.isnan(y[:, t])
            Xt, yt = X[keep], y[keep, t].astype(int)
            if eval_set is not None:
                Xv = check_array(eval_set[0], dtype=np.float64)
                yv_all = _label_matrix(eval_set[1], Xv.shape[0])[:, t]
                kv = ~np.isnan(yv_all)
                Xtr, ytr, Xv, yv = Xt, yt, Xv[kv], yv_all[kv].astype(int)
            else:
                Xtr, Xv, ytr, yv = train_test_split(Xt, yt, test_size=0.2, stratify=yt,
                                                    random_state=self.random_state)
            best, best_auc, scores = None, -math.inf, []
            for lam in self.l2_grid:
                m = build_logistic_regression(X.shape[1], lam, self.max_iter)
                m.set_params(class_weight="balanced")
                m.fit(Xtr, ytr)
                try:
                    auc = roc_auc(m.predict_proba(Xv)[:, 1], yv)
                except MetricError:
                    auc = math.nan
                scores.append(auc)
                # ties keep the earlier grid value
                if not math.isnan(auc) and auc > best_auc:
                    best, best_auc = (lam, m), auc
            if best is None:
                best = (self.l2_grid[0], m)
            self.l2_.append(best[0])
            self.models_.append(best[1])
            self.grid_scores_.append(scores)
        return self

    def predict_scores(self, X):
        check_is_fitted(self, "models_")
        X = check_array(X, dtype=np.float64)
        return np.stack([m.predict_proba(X)[:, 1] for m in self.models_], axis=1)

    def predict_proba(self, X):
        return _proba_output(self.predict_scores(X))

    def predict(self, X):
        s = (self.predict_scores(X) >= 0.5).astype(np.int64)
        return s[:, 0] if s.shape[1] == 1 else s


class MaxSimClassifier(ClassifierMixin, BaseEstimator):
    """Score = highest Tanimoto similarity to any training active of the task."""

    def fit(self, X, y, eval_set=None):
        X = check_array(X, dtype=bool)
        y = _label_matrix(y, X.shape[0])
        _check_binary(y)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        self.actives_ = []
        for t in range(y.shape[1]):
            act = X[y[:, t] == 1]
            if len(act) == 0:
                raise ValueError("task %d has no training actives" % t)
            self.actives_.append(act)
        return self

    def predict_scores(self, X):
        check_is_fitted(self, "actives_")
        X = check_array(X, dtype=bool)
        return np.stack([tanimoto_matrix(X, act).max(axis=1) for act in self.actives_], axis=1)

    def predict_proba(self, X):
        return _proba_output(self.predict_scores(X))

    def predict(self, X):
        s = (self.predict_scores(X) >= 0.5).astype(np.int64)
        return s[:, 0] if s.shape[1] == 1 else s
