"""Virtual-screening metrics and cross-model comparison statistics.

Conventions
-----------
* AUC is the Mann-Whitney statistic; a tied active/inactive pair counts 1/2.
* Enrichment and BEDROC rank by descending score. Equal scores keep their
  input order (stable sort), and :func:`tie_count` reports how many
  molecules share a score with another molecule.
* The ROC used for enrichment is the step curve of that ranking. TPR at a
  false positive rate ``f`` is read by linear interpolation along the
  curve; on a step curve this equals the highest TPR reached at FPR <= f.
* Quartiles use linear interpolation between order statistics
  (``numpy.percentile`` default, Hyndman-Fan type 7).
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

WILSON_Z = 1.959964
ENRICHMENT_FPRS = (0.01, 0.05, 0.10, 0.20)


class MetricError(ValueError):
    """Input cannot be scored (for example a single class)."""


def _check(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise MetricError("scores and labels differ in length")
    labels = labels.astype(bool)
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == len(labels):
        raise MetricError("both classes are required")
    return scores, labels


def roc_auc(scores, labels):
    """Probability that a random active outscores a random inactive (ties 1/2)."""
    scores, labels = _check(scores, labels)
    # average ranks handle ties exactly as half credit
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(len(scores))
    start = 0
    while start < len(scores):
        stop = start
        while stop + 1 < len(scores) and sorted_scores[stop + 1] == sorted_scores[start]:
            stop += 1
        ranks[order[start:stop + 1]] = 0.5 * (start + stop) + 1.0
        start = stop + 1
    n_pos = labels.sum()
    n_neg = len(labels) - n_pos
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def ranking(scores):
    """Indices by descending score; ties keep input order."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def tie_count(scores):
    """Number of molecules whose score equals another molecule's score."""
    _, counts = np.unique(np.asarray(scores, dtype=np.float64), return_counts=True)
    return int(counts[counts > 1].sum())


def roc_curve(scores, labels):
    """``(fpr, tpr)`` vertices of the ranking's step curve, starting at (0, 0)."""
    scores, labels = _check(scores, labels)
    ordered = labels[ranking(scores)]
    tp = np.concatenate([[0], np.cumsum(ordered)])
    fp = np.concatenate([[0], np.cumsum(~ordered)])
    return fp / fp[-1], tp / tp[-1]


def roc_enrichment(scores, labels, fpr):
    """TPR at the given false positive rate divided by that rate."""
    if not 0.0 < fpr < 1.0:
        raise MetricError("fpr must lie strictly between 0 and 1")
    x, y = roc_curve(scores, labels)
    # walk the curve as a polyline: find the last vertex at or before fpr
    k = int(np.searchsorted(x, fpr, side="right")) - 1
    if k + 1 < len(x) and x[k + 1] > x[k]:
        t = (fpr - x[k]) / (x[k + 1] - x[k])
        tpr = y[k] + t * (y[k + 1] - y[k])
    else:
        tpr = y[k]
    return float(tpr / fpr)


def _rie_sum(ranks, n_total, alpha):
    return float(np.sum(np.exp(-alpha * np.asarray(ranks, dtype=np.float64) / n_total)))


def bedroc(scores, labels, alpha=20.0):
    """Exponentially rank-weighted early recognition, rescaled to [0, 1].

    The robust initial enhancement sum over active ranks is mapped linearly
    so that all actives ranked first give 1 and all ranked last give 0.
    """
    if alpha <= 0:
        raise MetricError("alpha must be positive")
    scores, labels = _check(scores, labels)
    n_total = len(labels)
    ranks = np.nonzero(labels[ranking(scores)])[0] + 1
    n_pos = len(ranks)
    best = _rie_sum(np.arange(1, n_pos + 1), n_total, alpha)
    worst = _rie_sum(np.arange(n_total - n_pos + 1, n_total + 1), n_total, alpha)
    return float((_rie_sum(ranks, n_total, alpha) - worst) / (best - worst))


def bedroc_closed_form(ranks, n_total, alpha=20.0):
    """Published closed-form BEDROC for 1-based active ranks (used as a cross-check)."""
    ranks = np.asarray(ranks, dtype=np.float64)
    n = len(ranks)
    ra = n / n_total
    rie = np.sum(np.exp(-alpha * ranks / n_total)) / (
        ra * (1 - math.exp(-alpha)) / (math.exp(alpha / n_total) - 1))
    return float(rie * ra * math.sinh(alpha / 2) / (math.cosh(alpha / 2) - math.cosh(alpha / 2 - alpha * ra))
                 + 1.0 / (1 - math.exp(alpha * (1 - ra))))


def wilson_interval(successes, n, z=WILSON_Z):
    if n <= 0:
        raise MetricError("Wilson interval needs n >= 1")
    p = successes / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z / denom * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return max(0.0, center - half), min(1.0, center + half)


@dataclass
class SignTest:
    positive: int
    n: int
    lo: float
    hi: float

    @property
    def defined(self):
        return self.n > 0

    @property
    def significant(self):
        return self.defined and not (self.lo <= 0.5 <= self.hi)


def sign_test_wilson(deltas):
    """Wilson interval for the share of positive deltas among non-zero deltas.

    All-zero input returns an undefined result with NaN bounds.
    """
    deltas = np.asarray(deltas, dtype=np.float64).ravel()
    if deltas.size == 0:
        raise MetricError("no deltas given")
    nonzero = deltas[deltas != 0]
    pos = int(np.sum(nonzero > 0))
    if nonzero.size == 0:
        return SignTest(0, 0, math.nan, math.nan)
    lo, hi = wilson_interval(pos, nonzero.size)
    return SignTest(pos, int(nonzero.size), lo, hi)


def boxplot_median_ci(values):
    """median +/- 1.57 * IQR / sqrt(N) with type-7 quartiles."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise MetricError("no values given")
    q1, med, q3 = np.percentile(values, [25, 50, 75])
    half = 1.57 * (q3 - q1) / math.sqrt(values.size)
    return float(med - half), float(med + half)


@dataclass
class FoldMetrics:
    """Scores of one model on one task and fold."""

    model: str
    task: str
    fold: int
    n_active: int
    n_inactive: int
    auc: float
    e1: float
    e5: float
    e10: float
    e20: float
    bedroc: float
    ties: int
    mse: float = math.nan


def score_fold(model, task, fold, scores, labels, alpha=20.0, kind="binary_classification"):
    """All per-fold metrics; undefined metrics (one class present) come out NaN."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.float64).ravel()
    keep = ~np.isnan(labels)
    scores, labels = scores[keep], labels[keep]
    if kind == "regression":
        mse = float(np.mean((scores - labels) ** 2)) if labels.size else math.nan
        return FoldMetrics(model, task, fold, 0, 0, math.nan, math.nan, math.nan, math.nan,
                           math.nan, math.nan, tie_count(scores), mse)
    n_act = int(np.sum(labels == 1))
    n_inact = int(np.sum(labels == 0))
    if n_act == 0 or n_inact == 0:
        nan = math.nan
        return FoldMetrics(model, task, fold, n_act, n_inact, nan, nan, nan, nan, nan, nan, tie_count(scores))
    enr = [roc_enrichment(scores, labels, f) for f in ENRICHMENT_FPRS]
    return FoldMetrics(model, task, fold, n_act, n_inact, roc_auc(scores, labels), *enr,
                       bedroc(scores, labels, alpha), tie_count(scores))


@dataclass
class ModelSummary:
    model: str
    n_tasks: int
    n_folds: int
    median_auc: float
    median_delta_auc: float
    sign_positive: int
    sign_n: int
    ci_lo: float
    ci_hi: float
    significant: bool
    median_auc_ci: tuple = (math.nan, math.nan)
    mean_mse: float = math.nan


@dataclass
class EvalReport:
    rows: list
    summary: list
    reference: str = None
    task_means: dict = field(default_factory=dict)


def _task_means(rows, metric="auc"):
    """model -> task -> mean over folds, ignoring NaN folds."""
    acc = {}
    for r in rows:
        v = getattr(r, metric)
        if not math.isnan(v):
            acc.setdefault(r.model, {}).setdefault(r.task, []).append(v)
    return {m: {t: float(np.mean(v)) for t, v in tasks.items()} for m, tasks in acc.items()}


def aggregate_report(rows, reference=None):
    """Fold means per task, medians across tasks and sign tests against ``reference``.

    Every model must cover the same tasks as the reference.
    """
    rows = list(rows)
    models = list(dict.fromkeys(r.model for r in rows))
    if reference is not None and reference not in models:
        raise MetricError("reference model %r has no results" % reference)
    means = _task_means(rows)
    mse_means = _task_means(rows, "mse")
    summary = []
    for m in models:
        auc = means.get(m, {})
        model_rows = [r for r in rows if r.model == m]
        n_folds = len({r.fold for r in model_rows})
        med = float(np.median(list(auc.values()))) if auc else math.nan
        ci_auc = boxplot_median_ci(list(auc.values())) if auc else (math.nan, math.nan)
        mse = float(np.mean(list(mse_means[m].values()))) if m in mse_means else math.nan
        delta, sign = math.nan, SignTest(0, 0, math.nan, math.nan)
        if reference is not None and auc:
            ref = means.get(reference, {})
            if set(ref) != set(auc):
                raise MetricError("model %r and reference %r cover different tasks" % (m, reference))
            deltas = [auc[t] - ref[t] for t in sorted(auc)]
            delta = float(np.median(deltas))
            sign = sign_test_wilson(deltas)
        summary.append(ModelSummary(m, len(auc), n_folds, med, delta, sign.positive, sign.n,
                                    sign.lo, sign.hi, sign.significant, ci_auc, mse))
    return EvalReport(rows, summary, reference, means)


def write_report_csv(report, path):
    """Per (model, task, fold) rows with every metric."""
    names = list(FoldMetrics.__dataclass_fields__)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for r in report.rows:
            w.writerow([_fmt(v) for v in asdict(r).values()])


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else "%.6f" % v
    return v


def format_summary(report):
    """Fixed-width table: model, tasks, median AUC, median delta AUC, sign-test CI."""
    header = ("Model", "Tasks", "Folds", "Median AUC", "Median dAUC", "Sign test 95% CI", "Mean MSE")
    lines = []
    for s in report.summary:
        ci = "n=0" if s.sign_n == 0 else "[%.2f, %.2f]%s" % (s.ci_lo, s.ci_hi, " *" if s.significant else "")
        lines.append((s.model, str(s.n_tasks), str(s.n_folds), _fmt3(s.median_auc),
                      _fmt3(s.median_delta_auc), ci, _fmt3(s.mean_mse)))
    widths = [max(len(h), *(len(l[i]) for l in lines)) if lines else len(h) for i, h in enumerate(header)]
    out = ["  ".join(h.ljust(w) for h, w in zip(header, widths)),
           "  ".join("-" * w for w in widths)]
    out += ["  ".join(c.ljust(w) for c, w in zip(l, widths)) for l in lines]
    if report.reference:
        out.append("dAUC and sign test relative to %s; * marks an interval excluding 0.5" % report.reference)
    return "\n".join(out) + "\n"


def _fmt3(v):
    return "-" if v is None or (isinstance(v, float) and math.isnan(v)) else "%.3f" % v


def write_summary(report, path):
    with open(path, "w") as fh:
        fh.write(format_summary(report))
