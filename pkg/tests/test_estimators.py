import numpy as np
import pytest
from sklearn.base import clone

from weavenet.estimators import (LogisticRegressionBaseline, MaxSimClassifier, MorganFingerprinter, PMTNNClassifier,
                                 WeaveClassifier, WeaveRegressor)
from weavenet.metrics import roc_auc
from weavenet.molgraph import from_smiles
from weavenet.synthetic import generate_acid_dataset, has_carboxylic_acid

SMALL = dict(conv_depth=8, final_atom_depth=16, fc_layers=(16,), reduction="sum", batch_size=16,
             learning_rate=0.01, checkpoint_every=50)


@pytest.fixture(scope="module")
def acids():
    smiles, labels = generate_acid_dataset(120, seed=11)
    return smiles[:90], np.asarray(labels[:90]), smiles[90:], np.asarray(labels[90:])


@pytest.fixture(scope="module")
def fingerprints(acids):
    tr, ytr, te, yte = acids
    fp = MorganFingerprinter().fit(tr)
    return fp.transform(tr), ytr, fp.transform(te), yte


def test_synthetic_labels_follow_substructure():
    smiles, labels = generate_acid_dataset(50, seed=2)
    assert [int(has_carboxylic_acid(from_smiles(s))) for s in smiles] == list(labels)
    assert 0.3 < np.mean(labels) < 0.7
    a, b = generate_acid_dataset(20, seed=4), generate_acid_dataset(20, seed=4)
    assert a[0] == b[0] and np.array_equal(a[1], b[1])


def test_get_params_and_clone():
    est = WeaveClassifier(num_modules=2, max_steps=10)
    params = est.get_params()
    assert params["num_modules"] == 2 and params["max_steps"] == 10
    again = clone(est)
    assert again.get_params() == params and again is not est
    est.set_params(learning_rate=0.1)
    assert est.learning_rate == 0.1


def test_weave_classifier_learns_acids(acids):
    tr, ytr, te, yte = acids
    # inference uses running batch-norm statistics, which need a few hundred steps to settle
    est = WeaveClassifier(max_steps=600, **SMALL).fit(tr, ytr, eval_set=(te, yte))
    scores = est.predict_scores(te)
    assert scores.shape == (len(te), 1)
    assert roc_auc(scores[:, 0], yte) > 0.9
    proba = est.predict_proba(te)
    assert proba.shape == (len(te), 2) and np.allclose(proba.sum(axis=1), 1.0)
    assert set(np.unique(est.predict(te))) <= {0, 1}


def test_weave_classifier_multitask_and_missing_labels(acids):
    tr, ytr, _, _ = acids
    y = np.stack([ytr, 1 - ytr], axis=1).astype(float)
    y[::3, 1] = np.nan
    est = WeaveClassifier(max_steps=5, task_names=["acid", "not_acid"], **SMALL).fit(tr, y)
    assert est.predict_scores(tr[:4]).shape == (4, 2)
    assert isinstance(est.predict_proba(tr[:4]), list)
    with pytest.raises(ValueError):
        WeaveClassifier(**SMALL).fit(tr[:3], [0, 2, 1])


def test_weave_regressor_unstandardizes():
    smiles = ["C", "CC", "CCC", "CCCC", "CCCCC", "CCCCCC"] * 3
    y = np.array([len(s) for s in smiles], dtype=float) * 10.0
    est = WeaveRegressor(max_steps=2000, **dict(SMALL, batch_size=18)).fit(smiles, y)
    pred = est.predict(smiles)
    assert pred.shape == (len(smiles),)
    assert np.mean((pred - y) ** 2) < 0.1 * np.var(y)


def test_input_validation():
    with pytest.raises(TypeError):
        WeaveClassifier(**SMALL).fit("CCO", [1])
    with pytest.raises(ValueError):
        WeaveClassifier(**SMALL).fit([], [])
    with pytest.raises(ValueError):
        WeaveClassifier(**SMALL).fit(["CCO", "CC"], [1, 0, 1])
    with pytest.raises(ValueError):
        MorganFingerprinter(n_bits=1000).fit(["C"])


def test_fingerprinter_shape():
    X = MorganFingerprinter(n_bits=1024).fit_transform(["CCO", "c1ccccc1"])
    assert X.shape == (2, 1024) and X.dtype == bool
    assert X[0].sum() == 6


def test_maxsim(fingerprints):
    Xtr, ytr, Xte, yte = fingerprints
    est = MaxSimClassifier().fit(Xtr, ytr)
    s = est.predict_scores(Xtr)
    assert np.all(s[ytr == 1, 0] == 1.0)
    assert roc_auc(est.predict_scores(Xte)[:, 0], yte) > 0.8
    with pytest.raises(ValueError):
        MaxSimClassifier().fit(Xtr, np.zeros(len(Xtr)))


def test_logistic_regression_baseline(fingerprints):
    Xtr, ytr, Xte, yte = fingerprints
    est = LogisticRegressionBaseline(random_state=0).fit(Xtr, ytr)
    assert est.l2_[0] in est.l2_grid and len(est.grid_scores_[0]) == 7
    assert roc_auc(est.predict_scores(Xte)[:, 0], yte) > 0.9
    with_eval = LogisticRegressionBaseline().fit(Xtr, ytr, eval_set=(Xte, yte))
    assert max(with_eval.grid_scores_[0]) == pytest.approx(roc_auc(with_eval.predict_scores(Xte)[:, 0], yte))


def test_pmtnn_classifier(fingerprints):
    Xtr, ytr, Xte, yte = fingerprints
    est = PMTNNClassifier(hidden=(64, 16), weight_std=(0.05, 0.1), bias_init=(0.0, 0.0), optimizer="adagrad",
                          learning_rate=0.01, batch_size=32, max_steps=150, checkpoint_every=50)
    est.fit(Xtr, ytr, eval_set=(Xte, yte))
    assert [e.step for e in est.index_.entries] == [50, 100, 150]
    assert roc_auc(est.predict_scores(Xte)[:, 0], yte) > 0.85
    # repeated prediction restores the live parameters
    np.testing.assert_array_equal(est.predict_scores(Xte), est.predict_scores(Xte))
    with pytest.raises(ValueError):
        PMTNNClassifier(optimizer="rmsprop").fit(Xtr, ytr)
