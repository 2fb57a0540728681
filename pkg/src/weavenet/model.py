"""Full networks: graph convolution, fingerprint MLP and logistic regression."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.linear_model import LogisticRegression

from .featurizer import FeatureConfig, GraphBatch
from .tensor import Tensor, checkpoint, ops
from .weave import ParameterSet, WeaveConfig, build_weave_parameters, weave_forward

TASK_KINDS = ("binary_classification", "regression")
LR_L2_GRID = tuple(10.0 ** k for k in range(-4, 3))


@dataclass
class TaskSpec:
    name: str
    kind: str = "binary_classification"

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError("unknown task kind %r" % self.kind)

    @property
    def is_classification(self):
        return self.kind == "binary_classification"


def _check_tasks(tasks):
    tasks = [t if isinstance(t, TaskSpec) else TaskSpec(**t) for t in tasks]
    if not tasks:
        raise ValueError("at least one task is required")
    names = [t.name for t in tasks]
    if len(set(names)) != len(names):
        raise ValueError("task names must be unique: %s" % names)
    return tasks


@dataclass
class ModelConfig:
    """Graph-convolution model configuration.

    ``feature_mode`` and ``max_atoms`` pick the input featurization; the pair
    distance cutoff comes from ``weave.max_pair_distance``. ``dropout`` is
    only read by the fingerprint network.
    """

    weave: WeaveConfig = field(default_factory=WeaveConfig)
    fc_layers: tuple = (2000, 100)
    tasks: list = field(default_factory=lambda: [TaskSpec("y")])
    dropout: float = 0.0
    feature_mode: str = "full"
    max_atoms: int = 60
    init: str = "he_uniform"
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.weave, dict):
            self.weave = WeaveConfig.from_dict(self.weave)
        self.fc_layers = tuple(int(w) for w in self.fc_layers)
        if any(w < 1 for w in self.fc_layers):
            raise ValueError("fully connected widths must be >= 1")
        self.tasks = _check_tasks(self.tasks)

    @property
    def feature_config(self):
        return FeatureConfig(self.feature_mode, self.max_atoms, self.weave.max_pair_distance)

    def to_dict(self):
        d = asdict(self)
        d["weave"] = self.weave.to_dict()
        d["fc_layers"] = list(self.fc_layers)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass
class Prediction:
    """Per-molecule, per-task outputs.

    ``values[:, t]`` is the active-class probability for classification
    tasks and the predicted value for regression tasks.
    """

    values: np.ndarray
    task_names: list


class _TaskHeads:
    """Shared head and loss logic for networks ending in per-task outputs."""

    tasks: list
    params: ParameterSet

    def _build_heads(self, width, std=None):
        for t in self.tasks:
            out = 2 if t.is_classification else 1
            weight = None if std is None else self.params.rng.normal(0.0, std, size=(width, out))
            self.params.dense("head/" + t.name, width, out, weight=weight)

    def _heads(self, h):
        return [ops.dense(h, self.params.get("head/%s/W" % t.name), self.params.get("head/%s/b" % t.name))
                for t in self.tasks]

    def loss_from_outputs(self, outputs, labels, weights):
        """Sum over tasks of weighted cross-entropy or squared error, divided by n.

        Entries with weight 0 (missing labels) contribute nothing.
        """
        labels = np.asarray(labels, dtype=np.float64).reshape(len(outputs[0].data), -1)
        weights = np.asarray(weights, dtype=np.float64).reshape(labels.shape)
        weights = np.where(np.isnan(labels), 0.0, weights)
        if not np.any(weights > 0):
            raise ValueError("every label in the batch is missing")
        total = None
        for t, (task, out) in enumerate(zip(self.tasks, outputs)):
            w = weights[:, t:t + 1]
            y = np.nan_to_num(labels[:, t:t + 1])
            if task.is_classification:
                term = ops.softmax_cross_entropy(ops.reshape(out, (-1, 1, 2)), y.astype(np.int64), w)
            else:
                term = ops.l2_loss(out, y, w)
            total = term if total is None else ops.add(total, term)
        return total

    @staticmethod
    def _outputs_to_values(tasks, outputs):
        cols = []
        for task, out in zip(tasks, outputs):
            if task.is_classification:
                z = out.data - out.data.max(axis=1, keepdims=True)
                e = np.exp(z)
                cols.append(e[:, 1] / e.sum(axis=1))
            else:
                cols.append(out.data[:, 0])
        return np.stack(cols, axis=1)

    def parameters(self):
        return self.params.ordered()

    def num_parameters(self):
        return self.params.count()


class WeaveModel(_TaskHeads):
    """Weave stack, reduction, fully connected trunk and task heads."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.tasks = cfg.tasks
        self.params = ParameterSet(np.random.default_rng(cfg.seed), init=cfg.init)
        fc = cfg.feature_config
        build_weave_parameters(self.params, cfg.weave, fc.atom_depth, fc.pair_depth)
        width = cfg.weave.molecule_width
        for k, w in enumerate(cfg.fc_layers):
            self.params.conv("fc_%d" % k, width, w)
            width = w
        self._build_heads(width)

    def molecule_features(self, batch: GraphBatch, training=False, trace=None):
        return weave_forward(self.params, self.cfg.weave, batch, training, trace=trace)

    def forward(self, batch: GraphBatch, training=False, dtype=None, trace=None):
        """Per-task output tensors (two logits or one value per molecule)."""
        if dtype is not None:
            batch = batch.astype(dtype)
        self.params.cast = dtype
        try:
            h = self.molecule_features(batch, training, trace=trace)
            for k in range(len(self.cfg.fc_layers)):
                h = ops.relu(ops.batch_norm(
                    ops.dense(h, self.params.get("fc_%d/W" % k)),
                    self.params.get("fc_%d/bn/gamma" % k), self.params.get("fc_%d/bn/beta" % k),
                    self.params.bn["fc_%d/bn" % k], training))
            return self._heads(h)
        finally:
            self.params.cast = None

    def loss(self, batch, labels, weights, training=True):
        return self.loss_from_outputs(self.forward(batch, training=training), labels, weights)

    def predict(self, batch, dtype=None):
        return Prediction(self._outputs_to_values(self.tasks, self.forward(batch, dtype=dtype)),
                          [t.name for t in self.tasks])

    def save(self, path, extra=None):
        config = {"kind": "weave", "model": self.cfg.to_dict()}
        if extra:
            config.update(extra)
        checkpoint.save(path, self.params.state_arrays(), config)

    @classmethod
    def load(cls, path):
        arrays, config = checkpoint.load(path)
        if config.get("kind") != "weave":
            raise checkpoint.CheckpointError("%s is not a graph-convolution checkpoint" % path)
        model = cls(ModelConfig.from_dict(config["model"]))
        model.params.load_state_arrays(arrays)
        return model, config


def build_graphconv_model(cfg: ModelConfig) -> WeaveModel:
    return WeaveModel(cfg)


@dataclass
class PMTNNConfig:
    """Fingerprint multitask network settings."""

    hidden: tuple = (2000, 100)
    dropout: float = 0.25
    weight_std: tuple = (0.01, 0.04)
    bias_init: tuple = (0.5, 3.0)
    head_std: float = 0.01
    tasks: list = field(default_factory=lambda: [TaskSpec("y")])
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.weight_std = tuple(self.weight_std)
        self.bias_init = tuple(self.bias_init)
        if not (len(self.hidden) == len(self.weight_std) == len(self.bias_init)):
            raise ValueError("hidden, weight_std and bias_init must have equal lengths")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        self.tasks = _check_tasks(self.tasks)

    def to_dict(self):
        d = asdict(self)
        for k in ("hidden", "weight_std", "bias_init"):
            d[k] = list(d[k])
        return d


class PMTNN(_TaskHeads):
    """Pyramidal multitask network on fingerprint bits: ReLU layers with dropout, no batch norm."""

    def __init__(self, input_width, cfg: PMTNNConfig):
        self.cfg = cfg
        self.input_width = int(input_width)
        self.tasks = cfg.tasks
        self.params = ParameterSet(np.random.default_rng(cfg.seed))
        self.dropout_rng = np.random.default_rng(cfg.seed + 1)
        width = self.input_width
        for k, (h, std, b0) in enumerate(zip(cfg.hidden, cfg.weight_std, cfg.bias_init)):
            weight = self.params.rng.normal(0.0, std, size=(width, h))
            self.params.dense("hidden_%d" % k, width, h, weight=weight, bias_value=b0)
            width = h
        self._build_heads(width, std=cfg.head_std)

    def forward(self, X, training=False):
        h = Tensor(np.asarray(X, dtype=np.float64))
        for k in range(len(self.cfg.hidden)):
            h = ops.relu(ops.dense(h, self.params.get("hidden_%d/W" % k), self.params.get("hidden_%d/b" % k)))
            h = ops.dropout(h, self.cfg.dropout, self.dropout_rng, training)
        return self._heads(h)

    def loss(self, X, labels, weights, training=True):
        return self.loss_from_outputs(self.forward(X, training=training), labels, weights)

    def predict(self, X):
        return Prediction(self._outputs_to_values(self.tasks, self.forward(X)),
                          [t.name for t in self.tasks])

    def save(self, path):
        config = {"kind": "pmtnn", "input_width": self.input_width, "model": self.cfg.to_dict()}
        checkpoint.save(path, self.params.state_arrays(), config)

    @classmethod
    def load(cls, path):
        arrays, config = checkpoint.load(path)
        if config.get("kind") != "pmtnn":
            raise checkpoint.CheckpointError("%s is not a fingerprint-network checkpoint" % path)
        model = cls(config["input_width"], PMTNNConfig(**config["model"]))
        model.params.load_state_arrays(arrays)
        return model, config


def build_pmtnn(input_width, cfg: PMTNNConfig = None) -> PMTNN:
    return PMTNN(input_width, cfg or PMTNNConfig())


def build_logistic_regression(input_width, l2_strength, max_iter=10000):
    """L2-penalized logistic regression for one task.

    The penalty is ``l2_strength / 2 * ||w||^2`` against the summed log-loss,
    i.e. ``C = 1 / l2_strength`` in scikit-learn terms. ``input_width`` is
    checked at fit time.
    """
    if l2_strength <= 0:
        raise ValueError("l2_strength must be positive")
    model = LogisticRegression(C=1.0 / l2_strength, solver="lbfgs", max_iter=max_iter)
    model.expected_width_ = int(input_width)
    return model


def forward(model, batch, training=False):
    return model.forward(batch, training=training)


def loss(model, batch, labels, weights, training=True):
    return model.loss(batch, labels, weights, training=training)
