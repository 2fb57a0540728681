import math

import numpy as np
import pytest

from weavenet.featurizer import FeatureConfig
from weavenet.model import (LR_L2_GRID, ModelConfig, PMTNNConfig, TaskSpec, WeaveModel, build_graphconv_model,
                            build_logistic_regression, build_pmtnn, loss)
from weavenet.molgraph import from_smiles
from weavenet.tensor import Tape, Tensor, backward, check_gradients, checkpoint
from weavenet.weave import WeaveConfig

from conftest import batch_of, norm_rel, permuted, small_molecules


def narrow_model(tasks=None, num_modules=2, max_pair_distance=2, reduction="gaussian_histogram", seed=0, fc=(7, 5)):
    weave = WeaveConfig(num_modules=num_modules, max_pair_distance=max_pair_distance, atom_atom_0=4,
                        atom_pair_0=3, pair_pair_0=3, pair_atom_0=4, atom_atom_1=4, pair_pair_1=3,
                        final_atom_depth=3, reduction=reduction)
    return WeaveModel(ModelConfig(weave=weave, fc_layers=fc, tasks=tasks or [TaskSpec("y")], seed=seed))


def conv_count(i, o):
    return i * o + 2 * o


def test_default_parameter_count_and_width():
    model = build_graphconv_model(ModelConfig())
    expected = (conv_count(27, 50) + conv_count(12, 50) + conv_count(100, 50)   # one module, pair branch skipped
                + conv_count(50, 128)                                           # final atom convolution
                + conv_count(1408, 2000) + conv_count(2000, 100)                # fully connected trunk
                + 100 * 2 + 2)                                                  # one softmax head
    assert model.num_parameters() == expected
    assert model.params.params["fc_0/W"].shape == (1408, 2000)
    again = build_graphconv_model(ModelConfig())
    assert all(np.array_equal(a.data, b.data) for a, b in zip(model.parameters(), again.parameters()))


def test_architecture_notation():
    cfg = WeaveConfig.from_notation("W2N2")
    assert (cfg.num_modules, cfg.max_pair_distance) == (2, 2)
    assert WeaveConfig.from_notation("W1Ninf").max_pair_distance == math.inf
    assert cfg.notation == "W2N2"
    with pytest.raises(ValueError):
        WeaveConfig.from_notation("M2N2")


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(tasks=[])
    with pytest.raises(ValueError):
        ModelConfig(tasks=[TaskSpec("a"), TaskSpec("a")])
    with pytest.raises(ValueError):
        ModelConfig(fc_layers=(10, 0))
    with pytest.raises(ValueError):
        TaskSpec("a", "ordinal")


def test_config_round_trip():
    cfg = ModelConfig(weave=WeaveConfig.from_notation("W2Ninf"), tasks=[TaskSpec("a"), TaskSpec("b", "regression")])
    again = ModelConfig.from_dict(cfg.to_dict())
    assert again == cfg
    assert '"max_pair_distance": "inf"' in cfg.to_json()


def test_regression_head_is_scalar():
    model = narrow_model([TaskSpec("logS", "regression")])
    assert model.params.params["head/logS/W"].shape == (5, 1)
    graphs = [from_smiles(s) for s in ("CCO", "CCCC", "c1ccccc1")]
    pred = model.predict(batch_of(graphs, model.cfg.feature_config))
    assert pred.values.shape == (3, 1) and pred.task_names == ["logS"]


def test_probabilities_in_unit_interval():
    model = narrow_model([TaskSpec("a"), TaskSpec("b")])
    graphs = [from_smiles(s) for s in small_molecules(12)]
    p = model.predict(batch_of(graphs, model.cfg.feature_config)).values
    assert p.shape == (12, 2) and np.all((p >= 0) & (p <= 1))


def test_end_to_end_gradients_three_molecules():
    model = narrow_model([TaskSpec("a"), TaskSpec("r", "regression")])
    graphs = [from_smiles(s) for s in ("CC(=O)O", "c1ccncc1", "CC(N)C")]
    batch = batch_of(graphs, model.cfg.feature_config)
    labels = np.array([[1, 0.5], [0, -1.0], [np.nan, 2.0]])
    weights = np.array([[1.0, 1.0], [2.0, 1.0], [0.0, 1.0]])
    errors = check_gradients(lambda: model.loss(batch, labels, weights, training=True), model.parameters())
    assert max(errors) < 1e-3


def test_multitask_heads_are_separated():
    model = narrow_model([TaskSpec("a"), TaskSpec("b")])
    graphs = [from_smiles(s) for s in ("CCO", "CC(=O)O", "CCN", "c1ccccc1")]
    batch = batch_of(graphs, model.cfg.feature_config)
    labels = np.array([[1, 0], [0, 1], [1, 1], [0, 0]], dtype=float)
    weights = np.array([[1.0, 0.0]] * 4)
    params = model.parameters()
    with Tape() as tape:
        value = model.loss(batch, labels, weights)
    backward(value, tape, params)
    assert not model.params.params["head/b/W"].grad.any()
    assert not model.params.params["head/b/b"].grad.any()
    assert model.params.params["head/a/W"].grad.any()


def test_missing_label_gives_no_gradient_and_all_missing_fails():
    model = narrow_model()
    graphs = [from_smiles(s) for s in ("CCO", "CC(=O)O", "CCN")]
    batch = batch_of(graphs, model.cfg.feature_config)
    outputs = model.forward(batch, training=False)
    logits = Tensor(outputs[0].data, requires_grad=True)
    with Tape() as tape:
        value = model.loss_from_outputs([logits], np.array([[1], [np.nan], [0]]), np.ones((3, 1)))
    tape.backward(value)
    assert not logits.grad[1].any()
    with pytest.raises(ValueError):
        model.loss(batch, np.full((3, 1), np.nan), np.ones((3, 1)))


def test_perfect_prediction_has_tiny_loss():
    model = narrow_model()
    logits = Tensor(np.array([[-40.0, 40.0], [40.0, -40.0]]))
    value = model.loss_from_outputs([logits], np.array([[1], [0]]), np.ones((2, 1)))
    assert value.data < 1e-30


def test_loss_scales_with_weights():
    model = narrow_model()
    graphs = [from_smiles(s) for s in ("CCO", "CC(=O)O", "CCN")]
    batch = batch_of(graphs, model.cfg.feature_config)
    labels = np.array([[1], [0], [1]])
    a = loss(model, batch, labels, np.ones((3, 1)), training=False).data
    b = loss(model, batch, labels, 3 * np.ones((3, 1)), training=False).data
    assert abs(b - 3 * a) < 1e-12 * max(1.0, abs(a))


@pytest.mark.parametrize("training", [True, False])
def test_end_to_end_order_invariance(rng, training):
    model = build_graphconv_model(ModelConfig(weave=WeaveConfig.from_notation("W2N2"), tasks=[TaskSpec("y")]))
    for st in model.params.bn.values():
        st.running_mean = rng.normal(scale=0.5, size=st.running_mean.shape)
        st.running_var = rng.uniform(0.5, 2.0, size=st.running_var.shape)
    cfg = model.cfg.feature_config
    smiles = small_molecules(8)
    graphs = [from_smiles(s) for s in smiles]
    shuffled = [permuted(s, rng)[0] for s in smiles]
    a = [o.data for o in model.forward(batch_of(graphs, cfg), training=training)]
    b = [o.data for o in model.forward(batch_of(shuffled, cfg), training=training)]
    assert norm_rel(a[0], b[0]) < 1e-6


def test_save_load_round_trip(tmp_path):
    model = narrow_model([TaskSpec("a"), TaskSpec("b", "regression")], seed=3)
    graphs = [from_smiles(s) for s in small_molecules(5)]
    batch = batch_of(graphs, model.cfg.feature_config)
    model.loss(batch, np.array([[1, 0.1], [0, 0.2], [1, 0.3], [0, 0.4], [1, 0.5]]), np.ones((5, 2)))
    path = tmp_path / "m.ckpt"
    model.save(path, {"step": 7})
    again, config = WeaveModel.load(path)
    assert config["step"] == 7
    np.testing.assert_array_equal(model.predict(batch).values, again.predict(batch).values)
    again.save(tmp_path / "n.ckpt", {"step": 7})
    assert (tmp_path / "m.ckpt").read_bytes() == (tmp_path / "n.ckpt").read_bytes()


def test_float32_inference_close_to_float64():
    model = narrow_model()
    graphs = [from_smiles(s) for s in small_molecules(6)]
    batch = batch_of(graphs, model.cfg.feature_config)
    a = model.predict(batch).values
    b = model.predict(batch, dtype=np.float32).values
    assert np.abs(a - b).max() < 1e-4


def test_load_rejects_other_kind(tmp_path):
    checkpoint.save(tmp_path / "x.ckpt", {"a": np.ones(1)}, {"kind": "pmtnn"})
    with pytest.raises(checkpoint.CheckpointError):
        WeaveModel.load(tmp_path / "x.ckpt")


# --- fingerprint baselines ------------------------------------------------------------

def test_pmtnn_structure():
    model = build_pmtnn(64)
    p = model.params.params
    assert p["hidden_0/W"].shape == (64, 2000) and p["hidden_1/W"].shape == (2000, 100)
    assert np.all(p["hidden_0/b"].data == 0.5) and np.all(p["hidden_1/b"].data == 3.0)
    assert abs(p["hidden_0/W"].data.std() - 0.01) < 0.001
    assert abs(p["hidden_1/W"].data.std() - 0.04) < 0.004
    assert not model.params.bn


def test_pmtnn_inference_deterministic_training_stochastic(rng):
    model = build_pmtnn(16, PMTNNConfig(hidden=(32, 8), weight_std=(0.3, 0.3), bias_init=(0.0, 0.0)))
    X = (rng.random((5, 16)) < 0.3).astype(float)
    np.testing.assert_array_equal(model.predict(X).values, model.predict(X).values)
    a = model.forward(X, training=True)[0].data
    b = model.forward(X, training=True)[0].data
    assert not np.array_equal(a, b)


def test_pmtnn_save_load(tmp_path, rng):
    model = build_pmtnn(8, PMTNNConfig(hidden=(6, 4), tasks=[TaskSpec("a"), TaskSpec("b")]))
    model.save(tmp_path / "p.ckpt")
    again, _ = type(model).load(tmp_path / "p.ckpt")
    X = rng.random((3, 8))
    np.testing.assert_array_equal(model.predict(X).values, again.predict(X).values)


def test_pmtnn_config_validation():
    with pytest.raises(ValueError):
        PMTNNConfig(hidden=(10,), weight_std=(0.1, 0.1), bias_init=(0.0,))
    with pytest.raises(ValueError):
        PMTNNConfig(dropout=1.0)


def test_logistic_regression_grid_and_zero_weights(rng):
    assert LR_L2_GRID == (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0)
    X = rng.normal(size=(40, 5))
    y = (X[:, 0] > 0).astype(int)
    m = build_logistic_regression(5, 1.0).fit(X, y)
    m.coef_[:] = 0.0
    m.intercept_[:] = 0.0
    np.testing.assert_array_equal(m.predict_proba(X), 0.5)
    with pytest.raises(ValueError):
        build_logistic_regression(5, 0.0)


def test_logistic_regression_shrinks_with_penalty(rng):
    X = rng.normal(size=(200, 6))
    y = (X @ rng.normal(size=6) + 0.5 * rng.normal(size=200) > 0).astype(int)
    norms = [np.linalg.norm(build_logistic_regression(6, lam).fit(X, y).coef_) for lam in LR_L2_GRID]
    assert all(a >= b for a, b in zip(norms, norms[1:]))
    assert norms[-1] < 0.2 * norms[0]


def test_feature_config_follows_weave_cutoff():
    cfg = ModelConfig(weave=WeaveConfig.from_notation("W1N3"), feature_mode="simple", max_atoms=20)
    assert cfg.feature_config == FeatureConfig("simple", 20, 3)
