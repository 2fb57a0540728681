"""End-to-end acceptance checks, one test per criterion.

Each test is named ``test_criterion_<n>_...`` and the summary hook in
``conftest.py`` prints one PASS/FAIL line per criterion at the end of the run.
"""
import math
import os
import time
import zlib

import numpy as np
import pytest
from scipy.sparse.csgraph import floyd_warshall
from statsmodels.stats.proportion import proportion_confint

from weavenet.datasets import Dataset, load_csv, stratified_kfold
from weavenet.estimators import (LogisticRegressionBaseline, MaxSimClassifier, MorganFingerprinter,
                                 WeaveClassifier, WeaveRegressor)
from weavenet.featurizer import ATOM_FEATURE_NAMES, PAIR_FEATURE_NAMES, FeatureConfig, featurize_pairs
from weavenet.metrics import (aggregate_report, bedroc, format_summary, roc_auc, roc_enrichment, score_fold,
                              wilson_interval)
from weavenet.model import ModelConfig, TaskSpec, WeaveModel
from weavenet.molgraph import from_smiles, graph_distances, sssr
from weavenet.synthetic import generate_acid_dataset
from weavenet.tensor import Tape, Tensor, backward, check_gradients, gaussian_memberships
from weavenet.weave import GAUSSIAN_BINS, WeaveConfig, reduce_gaussian_histogram

from conftest import EXTRA_SMILES, batch_of, norm_rel, permuted, small_molecules
from test_molgraph import random_graph
from test_tensor import OPS, _case

pytestmark = pytest.mark.acceptance


def _rows_rel(a, b):
    """Largest per-row relative difference."""
    return max(norm_rel(x, y) for x, y in zip(a, b))


# --- 1: order invariance --------------------------------------------------------------

@pytest.mark.parametrize("reduction", ["sum", "rms", "gaussian_histogram"])
def test_criterion_1_order_invariance(reduction):
    start = time.perf_counter()
    rng = np.random.default_rng(zlib.crc32(reduction.encode()))
    smiles = small_molecules(200, max_atoms=12)
    assert len(smiles) == 200
    graphs = [from_smiles(s) for s in smiles]
    assert max(g.num_atoms for g in graphs) <= 12
    cfg = ModelConfig(weave=WeaveConfig.from_notation("W2N2", reduction=reduction),
                      tasks=[TaskSpec("c"), TaskSpec("r", "regression")], seed=int(rng.integers(1 << 30)))
    model = WeaveModel(cfg)
    # random parameters everywhere, including the batch-norm affine terms and running statistics
    for p in model.parameters():
        p.data = rng.normal(scale=0.5, size=p.shape) + (1.0 if p.name.endswith("gamma") else 0.0)
    for st in model.params.bn.values():
        st.running_mean = rng.normal(scale=0.5, size=st.running_mean.shape)
        st.running_var = rng.uniform(0.5, 2.0, size=st.running_var.shape)
    fcfg = cfg.feature_config
    ref = batch_of(graphs, fcfg)
    ref_features = model.molecule_features(ref, training=False).data
    ref_pred = model.predict(ref).values
    worst = 0.0
    for _ in range(5):
        shuffled = [permuted(s, rng)[0] for s in smiles]
        batch = batch_of(shuffled, fcfg)
        worst = max(worst, _rows_rel(ref_features, model.molecule_features(batch, training=False).data),
                    _rows_rel(ref_pred, model.predict(batch).values))
    elapsed = time.perf_counter() - start
    assert worst < 1e-9, worst
    assert elapsed < 60.0, elapsed


# --- 2: gradient correctness ----------------------------------------------------------

def test_criterion_2_gradients():
    start = time.perf_counter()
    # every differentiable tensor op, 100 random cases each
    for name in OPS:
        rng = np.random.default_rng(zlib.crc32(name.encode()))
        for _ in range(100):
            fn, tensors = _case(name, rng)
            err = max(check_gradients(fn, tensors))
            assert err < 1e-4, (name, err)

    graphs = [from_smiles(s) for s in ("CC(=O)O", "c1ccncc1", "CC(N)C")]
    labels = np.array([[1, 0.5], [0, -1.0], [1, 2.0]])
    weights = np.ones((3, 2))
    tasks = [TaskSpec("a"), TaskSpec("r", "regression")]

    # narrow W2N2 (every module feeds pairs forward): all coordinates
    weave = WeaveConfig.from_notation("W2N2", atom_atom_0=4, atom_pair_0=3, pair_pair_0=3, pair_atom_0=4,
                                      atom_atom_1=4, pair_pair_1=3, final_atom_depth=3)
    narrow = WeaveModel(ModelConfig(weave=weave, fc_layers=(7, 5), tasks=tasks))
    batch = batch_of(graphs, narrow.cfg.feature_config)
    errors = check_gradients(lambda: narrow.loss(batch, labels, weights, training=True), narrow.parameters())
    assert max(errors) < 1e-3, max(errors)

    # default-width W2N2: 6 sampled coordinates of every parameter tensor
    model = WeaveModel(ModelConfig(weave=WeaveConfig.from_notation("W2N2"), tasks=tasks))
    batch = batch_of(graphs, model.cfg.feature_config)
    params = model.parameters()
    with Tape() as tape:
        value = model.loss(batch, labels, weights, training=True)
    backward(value, tape, params)
    rng = np.random.default_rng(2)
    h = 1e-5
    analytic, numeric = [], []
    for p in params:
        flat, grad = p.data.reshape(-1), p.grad.reshape(-1)
        for i in rng.choice(flat.size, min(6, flat.size), replace=False):
            old = flat[i]
            flat[i] = old + h
            up = model.loss(batch, labels, weights, training=True).data
            flat[i] = old - h
            down = model.loss(batch, labels, weights, training=True).data
            flat[i] = old
            analytic.append(grad[i])
            numeric.append((up - down) / (2 * h))
    analytic, numeric = np.array(analytic), np.array(numeric)
    rel = np.abs(analytic - numeric).max() / (np.abs(analytic).max() + np.abs(numeric).max())
    assert rel < 1e-3, rel
    assert time.perf_counter() - start < 300.0


# --- 3: histogram contract ------------------------------------------------------------

def test_criterion_3_histogram_contract():
    assert GAUSSIAN_BINS.means == (-1.645, -1.080, -0.739, -0.468, -0.228, 0.0, 0.228, 0.468, 0.739, 1.080, 1.645)
    assert GAUSSIAN_BINS.variances == (0.080, 0.029, 0.018, 0.014, 0.013, 0.013, 0.013, 0.014, 0.018, 0.029,
                                       0.080)
    rng = np.random.default_rng(3)
    x = np.concatenate([rng.normal(scale=2.0, size=20000), np.linspace(-20, 20, 4001), [0.0, -1e3, 1e3]])
    contributions = gaussian_memberships(x, GAUSSIAN_BINS.means, GAUSSIAN_BINS.variances)
    assert np.abs(contributions.sum(axis=-1) - 1.0).max() < 1e-9
    # through the reduction: each atom adds exactly one unit of mass per feature
    A = rng.normal(size=(50, 4))
    seg = np.repeat(np.arange(5), 10)
    h = reduce_gaussian_histogram(Tensor(A), seg, 5).data.reshape(5, 4, 11)
    assert np.abs(h.sum(axis=-1) - 10.0).max() < 1e-9


# --- 4: featurization totals ----------------------------------------------------------

def test_criterion_4_featurization_totals():
    assert FeatureConfig("full").atom_depth == len(ATOM_FEATURE_NAMES) == 27
    assert FeatureConfig("full").pair_depth == len(PAIR_FEATURE_NAMES) == 12
    assert FeatureConfig("simple").atom_depth == 11
    assert FeatureConfig("simple").pair_depth == 11
    pairs = featurize_pairs(from_smiles("CCCC"), FeatureConfig(max_pair_distance=math.inf))
    distance = [i for i, n in enumerate(PAIR_FEATURE_NAMES) if n.startswith("distance")]
    assert pairs.values[0, 3, distance].tolist() == [0, 0, 1, 1, 1, 1, 1]


# --- 5: solubility regression ---------------------------------------------------------

SOLUBILITY_PATHS = [os.environ.get("WEAVENET_SOLUBILITY_CSV"),
                    os.path.join(os.path.dirname(__file__), "data", "solubility.csv")]


def _solubility_column(path):
    with open(path) as fh:
        header = [h.strip() for h in fh.readline().split(",")]
    override = os.environ.get("WEAVENET_SOLUBILITY_COLUMN")
    if override:
        return override
    for h in header:
        if "measured" in h.lower():
            return h
    for h in header:
        if h.lower() in ("logs", "solubility", "log_solubility", "y"):
            return h
    raise AssertionError("no solubility column in %s (set WEAVENET_SOLUBILITY_COLUMN)" % path)


def test_criterion_5_solubility_regression():
    path = next((p for p in SOLUBILITY_PATHS if p and os.path.exists(p)), None)
    if path is None:
        pytest.fail("aqueous-solubility dataset not found; set WEAVENET_SOLUBILITY_CSV or place it at "
                    "tests/data/solubility.csv")
    ds = load_csv(path, task_columns=[_solubility_column(path)], task_kinds=["regression"])
    assert 1000 <= len(ds) <= 1300, len(ds)
    split = stratified_kfold(ds, k=5, seed=0)
    smiles = np.array(ds.smiles, dtype=object)
    mse = []
    for i in range(5):
        tr, va, te = split.roles(i)
        est = WeaveRegressor(num_modules=2, max_pair_distance=2, max_steps=20000, checkpoint_every=1000,
                             random_state=i)
        est.fit(list(smiles[tr]), ds.labels[tr], eval_set=(list(smiles[va]), ds.labels[va]))
        pred = est.predict(list(smiles[te]))
        mse.append(float(np.mean((pred - ds.labels[te, 0]) ** 2)))
    assert np.mean(mse) <= 0.65, mse


# --- 6 and 7: synthetic acid discrimination and baselines -----------------------------

@pytest.fixture(scope="module")
def acid_split():
    smiles, labels = generate_acid_dataset(2000, seed=0)
    labels = np.asarray(labels, dtype=np.float64)
    ds = Dataset(list(smiles), [None] * len(smiles), labels[:, None], [TaskSpec("acid")])
    train, valid, test = stratified_kfold(ds, k=5, seed=0).roles(0)
    smiles = np.array(smiles, dtype=object)
    return {role: (list(smiles[idx]), labels[idx]) for role, idx in
            (("train", train), ("valid", valid), ("test", test))}


C6_STEPS = 600


@pytest.mark.parametrize("mode", ["full", "simple"])
def test_criterion_6_synthetic_acid_discrimination(acid_split, mode):
    start = time.perf_counter()
    (xtr, ytr), (xva, yva), (xte, yte) = acid_split["train"], acid_split["valid"], acid_split["test"]
    assert len(xtr) + len(xva) + len(xte) == 2000
    est = WeaveClassifier(mode=mode, num_modules=1, max_pair_distance=2, max_steps=C6_STEPS,
                          checkpoint_every=200, random_state=0)
    est.fit(xtr, ytr, eval_set=(xva, yva))
    assert C6_STEPS <= 50000
    auc = roc_auc(est.predict_scores(xte)[:, 0], yte)
    assert auc >= 0.95, auc
    assert time.perf_counter() - start <= 15 * 60


def test_criterion_7_baselines_and_report_shape(acid_split):
    (xtr, ytr), (xva, yva), (xte, yte) = acid_split["train"], acid_split["valid"], acid_split["test"]
    fp = MorganFingerprinter().fit(xtr)
    Xtr, Xva, Xte = fp.transform(xtr), fp.transform(xva), fp.transform(xte)
    scores = {
        "maxsim": MaxSimClassifier().fit(Xtr, ytr).predict_scores(Xte)[:, 0],
        "logreg": LogisticRegressionBaseline().fit(Xtr, ytr, eval_set=(Xva, yva)).predict_scores(Xte)[:, 0],
    }
    aucs = {name: roc_auc(s, yte) for name, s in scores.items()}

    # report shape: per-task fold means, median AUC, median delta AUC and Wilson CI against a reference
    rows = []
    for name, s in scores.items():
        for task in range(6):
            # six disjoint test slices stand in for separate datasets
            keep = np.arange(len(yte)) % 6 == task
            rows.append(score_fold(name, "slice_%d" % task, 0, s[keep], yte[keep]))
    report = aggregate_report(rows, reference="logreg")
    header = format_summary(report).splitlines()[0]
    for column in ("Median AUC", "Median dAUC", "Sign test 95% CI"):
        assert column in header
    maxsim = next(s for s in report.summary if s.model == "maxsim")
    assert maxsim.n_tasks == 6 and 0.0 <= maxsim.median_auc <= 1.0
    assert math.isfinite(maxsim.median_delta_auc)
    if maxsim.sign_n:
        assert 0.0 <= maxsim.ci_lo <= maxsim.ci_hi <= 1.0

    assert min(aucs.values()) >= 0.90, aucs


# --- 8: metric oracles ----------------------------------------------------------------

def test_criterion_8_metric_oracles():
    rng = np.random.default_rng(8)
    for _ in range(1000):
        n = int(rng.integers(2, 40))
        labels = np.zeros(n, dtype=bool)
        while labels.all() or not labels.any():
            labels = rng.random(n) < 0.4
        scores = rng.integers(0, 10, n).astype(float)
        pos, neg = scores[labels], scores[~labels]
        wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
        assert roc_auc(scores, labels) == wins / (len(pos) * len(neg))
    order = -np.arange(200.0)
    perfect = np.array([1.0] * 20 + [0.0] * 180)
    assert roc_enrichment(order, perfect, 0.10) == pytest.approx(10.0, abs=1e-12)
    assert bedroc(order, perfect) == pytest.approx(1.0, abs=1e-12)
    assert bedroc(order, perfect[::-1]) == pytest.approx(0.0, abs=1e-12)
    lo, hi = wilson_interval(10, 10)
    assert abs(lo - 0.722) < 1e-3 and abs(hi - 1.000) < 1e-3
    assert np.allclose((lo, hi), proportion_confint(10, 10, method="wilson"), atol=1e-6)


# --- 9: parser and perception oracles -------------------------------------------------

def test_criterion_9_perception_oracles():
    rng = np.random.default_rng(9)
    for _ in range(500):
        g = random_graph(rng, 12)
        adj = np.zeros((g.num_atoms, g.num_atoms))
        for b in g.bonds:
            adj[b.begin, b.end] = adj[b.end, b.begin] = 1
        np.testing.assert_array_equal(graph_distances(g), floyd_warshall(adj, directed=False))
        assert len(sssr(g)) == g.num_bonds - g.num_atoms + g.num_components()
    molecules = list(dict.fromkeys(EXTRA_SMILES + small_molecules(200, max_atoms=40)))
    for s in molecules:
        g = from_smiles(s)
        assert len(sssr(g)) == g.num_bonds - g.num_atoms + g.num_components(), s
        if sum(a.formal_charge for a in g.atoms) == 0:
            assert abs(g.perceived.partial_charge.sum()) < 1e-6, s
