"""CSV ingestion, class weights and cross-validation folds."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .molgraph import SmilesError, from_smiles
from .model import TaskSpec


class DataError(ValueError):
    """Bad or unusable input data."""


@dataclass
class Dataset:
    """Molecules with per-task labels.

    ``labels`` is ``[n_molecules, n_tasks]`` with NaN for missing entries;
    ``weights`` has the same shape and is exactly 0 where a label is missing.
    """

    smiles: list
    graphs: list
    labels: np.ndarray
    tasks: list
    weights: np.ndarray = None
    failures: list = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.float64).reshape(len(self.smiles), -1)
        if self.labels.shape[1] != len(self.tasks):
            raise DataError("label table has %d columns for %d tasks" % (self.labels.shape[1], len(self.tasks)))
        if self.weights is None:
            self.weights = np.where(np.isnan(self.labels), 0.0, 1.0)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != self.labels.shape:
            raise DataError("weights and labels differ in shape")
        if np.any(self.weights < 0):
            raise DataError("weights must be non-negative")
        self.weights = np.where(np.isnan(self.labels), 0.0, self.weights)

    def __len__(self):
        return len(self.smiles)

    @property
    def task_names(self):
        return [t.name for t in self.tasks]

    @property
    def n_failed(self):
        return len(self.failures)

    def subset(self, index):
        index = np.asarray(index, dtype=np.int64)
        return Dataset([self.smiles[i] for i in index], [self.graphs[i] for i in index],
                       self.labels[index], self.tasks, self.weights[index])


def infer_task_kind(column):
    present = column[~np.isnan(column)]
    if present.size and np.all(np.isin(present, (0.0, 1.0))):
        return "binary_classification"
    return "regression"


def _parse_label(text, line, column):
    text = text.strip()
    if text == "" or text.lower() in ("nan", "na", "none"):
        return np.nan
    try:
        return float(text)
    except ValueError:
        raise DataError("line %d: label %r in column %r is not a number" % (line, text, column)) from None


def load_csv(path, smiles_column="smiles", task_columns=None, task_kinds=None):
    """Read a header CSV of SMILES and label columns.

    Rows whose SMILES fail to parse are skipped and recorded in
    ``Dataset.failures`` as ``(line, smiles, message)``. Duplicate SMILES are
    kept as separate rows. ``task_columns`` defaults to every other column;
    task kinds are inferred (0/1 labels mean classification) unless given.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if smiles_column not in header:
            raise DataError("column %r not found in %s" % (smiles_column, path))
        if task_columns is None:
            task_columns = [c for c in header if c != smiles_column]
        missing = [c for c in task_columns if c not in header]
        if missing:
            raise DataError("task columns %s not found in %s" % (missing, path))
        smiles, graphs, rows, failures = [], [], [], []
        for line, row in enumerate(reader, start=2):
            text = (row[smiles_column] or "").strip()
            try:
                g = from_smiles(text)
            except (SmilesError, ValueError) as exc:
                failures.append((line, text, str(exc)))
                continue
            smiles.append(text)
            graphs.append(g)
            rows.append([_parse_label(row[c] or "", line, c) for c in task_columns])
    if not smiles:
        raise DataError("no usable molecules in %s" % path)
    labels = np.asarray(rows, dtype=np.float64).reshape(len(smiles), len(task_columns))
    if task_kinds is None:
        task_kinds = [infer_task_kind(labels[:, t]) for t in range(len(task_columns))]
    tasks = [TaskSpec(name, kind) for name, kind in zip(task_columns, task_kinds)]
    return Dataset(smiles, graphs, labels, tasks, failures=failures)


def compute_class_weights(labels, tasks=None):
    """Weights that give actives and inactives equal total weight per task.

    Inactives weigh 1 and actives ``n_inactive / n_active``. Tasks lacking one
    of the classes, and regression tasks, get weight 1 (with a warning for the
    degenerate classification case). Missing labels weigh 0.
    """
    if isinstance(labels, Dataset):
        tasks = labels.tasks if tasks is None else tasks
        labels = labels.labels
    labels = np.asarray(labels, dtype=np.float64)
    if labels.ndim == 1:
        labels = labels[:, None]
    weights = np.where(np.isnan(labels), 0.0, 1.0)
    for t in range(labels.shape[1]):
        if tasks is not None and not tasks[t].is_classification:
            continue
        col = labels[:, t]
        n_act = int(np.sum(col == 1))
        n_inact = int(np.sum(col == 0))
        if n_act == 0 or n_inact == 0:
            warnings.warn("task %d has only one class; using unit weights" % t, RuntimeWarning, stacklevel=2)
            continue
        weights[col == 1, t] = n_inact / n_act
    return weights


@dataclass
class FoldSplit:
    """Fold id per molecule; round ``i`` tests on fold i and validates on fold i+1."""

    folds: np.ndarray
    k: int
    seed: int = 0
    stratified: bool = True

    def roles(self, i):
        """``(train, valid, test)`` index arrays for cross-validation round ``i``."""
        if not 0 <= i < self.k:
            raise IndexError("round %d outside 0..%d" % (i, self.k - 1))
        test_fold, valid_fold = i, (i + 1) % self.k
        test = np.nonzero(self.folds == test_fold)[0]
        valid = np.nonzero(self.folds == valid_fold)[0]
        train = np.nonzero((self.folds != test_fold) & (self.folds != valid_fold))[0]
        return train, valid, test

    def write_manifest(self, path, ids=None):
        """CSV ``molecule,fold,<role in round 0>,...`` for auditing."""
        n = len(self.folds)
        ids = list(range(n)) if ids is None else list(ids)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["molecule", "fold"] + ["round_%d" % i for i in range(self.k)])
            for j in range(n):
                f = int(self.folds[j])
                roles = ["test" if f == i else "valid" if f == (i + 1) % self.k else "train"
                         for i in range(self.k)]
                w.writerow([ids[j], f] + roles)

    @classmethod
    def read_manifest(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        folds = np.asarray([int(r["fold"]) for r in rows], dtype=np.int64)
        k = sum(1 for key in rows[0] if key.startswith("round_")) if rows else 0
        return cls(folds, k)


def stratified_kfold(dataset, k=5, seed=0):
    """Seeded fold assignment, stratified on the first task when it is binary.

    Actives of the first task are shuffled and dealt round-robin over the
    folds, then the remaining molecules continue the deal, so each fold gets
    ``floor`` or ``ceil`` of the ideal active count. Regression data, or
    fewer than ``k`` actives, fall back to a plain shuffled deal.
    """
    labels = dataset.labels if isinstance(dataset, Dataset) else np.asarray(dataset, dtype=np.float64)
    labels = labels.reshape(len(labels), -1)
    n = len(labels)
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > n:
        raise DataError("k=%d exceeds the number of molecules (%d)" % (k, n))
    rng = np.random.default_rng(seed)
    first = labels[:, 0]
    binary = infer_task_kind(first) == "binary_classification"
    if isinstance(dataset, Dataset):
        binary = dataset.tasks[0].is_classification
    actives = np.nonzero(first == 1)[0] if binary else np.zeros(0, np.int64)
    stratified = binary and len(actives) >= k
    if binary and not stratified:
        warnings.warn("fewer than k actives; folds are not stratified", RuntimeWarning, stacklevel=2)
    folds = np.empty(n, dtype=np.int64)
    if stratified:
        order = np.concatenate([rng.permutation(actives), rng.permutation(np.nonzero(first != 1)[0])])
    else:
        order = rng.permutation(n)
    folds[order] = np.arange(n) % k
    return FoldSplit(folds, k, seed, stratified)
