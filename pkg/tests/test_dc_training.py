import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from selexit.dc_data import HardnessLabeledSet
from selexit.dc_training import dc_errors, dc_loss, dc_loss_batch, train_dcs
from selexit.ec_training import TrainConfig
from selexit.model import MultiExitModel
from selexit.nn import TrainingError

from oracles import central_difference, relative_error


def test_single_layer_bce():
    assert dc_loss([0.5], 1) == pytest.approx(np.log(2))


def test_perfect_scores_near_zero():
    assert dc_loss([1 - 1e-15, 1 - 1e-15, 1 - 1e-15], 1) < 1e-12


def test_weighted_two_layers():
    s = [np.exp(-0.6), np.exp(-0.3)]  # per-layer BCE 0.6 and 0.3 for z = 1
    assert dc_loss(s, 1) == pytest.approx(0.4)


def test_clamps_extreme_scores():
    with pytest.warns(RuntimeWarning):
        assert np.isfinite(dc_loss([0.0], 1))


@pytest.mark.parametrize("shared", [False, True])
def test_dc_gradient_matches_finite_differences(shared):
    rng = np.random.default_rng(3)
    model = MultiExitModel.build(3, 4, 3, 2, seed=3, activation="tanh", shared_dc=shared)
    X, z = rng.normal(size=(7, 3)), rng.integers(0, 2, 7)
    _, _, grads = dc_loss_batch(model, X, z)
    numeric = central_difference(lambda: dc_loss_batch(model, X, z)[0], model.dc_params())
    assert len(grads) == (2 if shared else 6)
    for g, n in zip(grads, numeric):
        assert relative_error(g, n) < 1e-4


def _noise_fixture(seed=0, m=600):
    """Hard samples form a distinct high-noise cluster; labels are known by construction."""
    rng = np.random.default_rng(seed)
    z = (np.arange(m) % 3 == 0).astype(int)
    X = rng.normal(0, 0.5, size=(m, 4))
    X[z == 1] = rng.normal(0, 0.5, size=(int(z.sum()), 4)) + np.array([3.0, 3.0, 0, 0])
    return X, z


def _labeled(X, z):
    return HardnessLabeledSet(np.arange(len(z)), X, z, 33.0, [])


def test_separable_hard_cluster_learned():
    X, z = _noise_fixture()
    model = MultiExitModel.build(4, 8, 3, 2, seed=0, activation="tanh")
    # linear probe on the frozen hidden states is the oracle for what a linear head can reach
    cache = model.forward_batch(X)
    for h in cache.hidden:
        assert 1 - LogisticRegression().fit(h, z).score(h, z) < 0.2
    before = model.checksum("ec")
    model, report = train_dcs(model, _labeled(X, z), TrainConfig(epochs=10, lr=0.05, seed=0))
    assert model.checksum("ec") == before
    assert np.all(report.q_d < 0.3)


def test_reported_error_is_recount_on_holdout():
    X, z = _noise_fixture(1)
    model = MultiExitModel.build(4, 8, 3, 2, seed=1)
    model, report = train_dcs(model, _labeled(X, z), TrainConfig(epochs=2, seed=1))
    h = report.holdout_idx
    hard = model.forward_batch(X[h]).hardness
    recount = [np.mean([(hard[k, i] >= 0.5) != (z[h][k] == 1) for k in range(len(h))])
               for i in range(3)]
    np.testing.assert_array_equal(report.q_d, recount)
    np.testing.assert_array_equal(report.q_d, dc_errors(model, X[h], z[h]))
    assert len(h) == round(0.2 * len(z))


def test_shared_heads_stay_identical():
    X, z = _noise_fixture(2)
    model = MultiExitModel.build(4, 8, 3, 2, seed=2, shared_dc=True)
    model, _ = train_dcs(model, _labeled(X, z), TrainConfig(epochs=2, seed=2))
    w = [h.weights for h in model.deferral_heads]
    assert all(np.array_equal(w[0], x) for x in w)


def test_single_class_labels_rejected():
    X, _ = _noise_fixture()
    model = MultiExitModel.build(4, 8, 3, 2, seed=0)
    with pytest.raises(TrainingError):
        train_dcs(model, _labeled(X, np.zeros(len(X), dtype=int)), TrainConfig())


def test_report_csv(tmp_path):
    X, z = _noise_fixture(4)
    model = MultiExitModel.build(4, 8, 2, 2, seed=0)
    _, report = train_dcs(model, _labeled(X, z), TrainConfig(epochs=1))
    path = tmp_path / "dc.csv"
    report.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "layer,q_d_holdout,loss" and len(lines) == 3
