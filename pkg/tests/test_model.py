import numpy as np
import pytest

from cshap.dataset import WindowProfile, phase_windows
from cshap.model import (
    ConstantClassifier,
    ConvNet,
    ConvNetConfig,
    ExternalPredictions,
    LevelsOracle,
    evaluate,
    export_predictions,
    load_checkpoint,
    load_external_predictions,
    metrics_from_predictions,
    save_checkpoint,
    train_convnet,
)
from cshap.model.convnet import forward, init_params, loss_and_grads
from cshap.verify import numeric_gradient


def _toy(n=90, w=16, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 3
    x = rng.normal(0, 0.05, size=(n, 2, w))
    x[:, 0, :] = np.arange(w) * 1e-3
    x[:, 1, :] += 0.6 + 0.1 * y[:, None]
    return x, y


def test_param_shapes_frozen():
    cfg = ConvNetConfig(window_size=100)
    s = cfg.param_shapes()
    assert s["conv0.w"] == (10, 8) and s["conv2.w"] == (40, 16) and s["fc1.w"] == (1600, 64)
    assert cfg.n_parameters() == 10 * 8 + 8 + 40 * 8 + 8 + 40 * 16 + 16 + 1600 * 64 + 64 + 64 * 3 + 3
    assert len(ConvNetConfig.wide().channel_sizes) == 6
    with pytest.raises(ValueError):
        ConvNetConfig(kernel_size=4)


def test_forward_shapes_and_softmax():
    cfg = ConvNetConfig(window_size=20)
    params = init_params(cfg, np.random.default_rng(0))
    logits = forward(params, cfg, np.random.default_rng(1).normal(size=(5, 2, 20)))
    assert logits.shape == (5, 3)
    m = ConvNet(cfg, params)
    p = m.predict_proba(np.zeros((4, 2, 20)))
    np.testing.assert_allclose(p.sum(1), 1.0, atol=1e-12)
    assert m.n_evaluations == 4
    with pytest.raises(ValueError, match="length"):
        m.predict_proba(np.zeros((2, 21)))


def test_backprop_matches_finite_differences_tiny():
    cfg = ConvNetConfig(window_size=6, channel_sizes=(3, 3), fc_size=5, seed=0)
    rng = np.random.default_rng(0)
    params = init_params(cfg, rng)
    x = rng.normal(size=(3, 2, 6))
    y = np.array([0, 1, 2])
    _, ga = loss_and_grads(params, cfg, x, y)
    gn, smooth = numeric_gradient(params, cfg, x, y, h=1e-5)
    for k in params:
        np.testing.assert_allclose(ga[k][smooth[k]], gn[k][smooth[k]], atol=1e-8)


def test_training_learns_separable_toy():
    x, y = _toy()
    m = train_convnet(x, y, ConvNetConfig(window_size=16, epochs=15, batch_size=16))
    assert m.loss_curve[-1] < m.loss_curve[0]
    assert np.mean(m.predict(x) == y) == 1.0


def test_fixed_batch_descent_is_monotone():
    x, y = _toy()
    m = train_convnet(x, y, ConvNetConfig(window_size=16, epochs=8, learning_rate=1e-3, momentum=0.0),
                      fixed_batch=True)
    assert all(b <= a for a, b in zip(m.loss_curve, m.loss_curve[1:]))


def test_training_input_validation():
    x, y = _toy()
    with pytest.raises(ValueError, match="shape"):
        train_convnet(x, y, ConvNetConfig(window_size=17))
    with pytest.raises(ValueError, match="every class"):
        train_convnet(x[y < 2], y[y < 2], ConvNetConfig(window_size=16))


def test_training_is_seeded():
    x, y = _toy()
    cfg = ConvNetConfig(window_size=16, epochs=2)
    a, b = train_convnet(x, y, cfg), train_convnet(x, y, cfg)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_checkpoint_roundtrip(tmp_path):
    x, y = _toy()
    m = train_convnet(x, y, ConvNetConfig(window_size=16, epochs=1))
    save_checkpoint(m, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert np.array_equal(back.predict_proba(x), m.predict_proba(x))
    assert back.loss_curve == m.loss_curve
    (tmp_path / "bad.ckpt").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad.ckpt")


def test_levels_oracle():
    o = LevelsOracle(0.66, 0.78)
    x = np.zeros((3, 2, 10))
    x[:, 1, :] = np.array([0.6, 0.7, 0.9])[:, None]
    np.testing.assert_array_equal(o.predict(x), [0, 1, 2])
    np.testing.assert_allclose(o.predict_proba(x)[0], [0.998, 0.001, 0.001])
    with pytest.raises(ValueError):
        LevelsOracle(0.8, 0.7)


def test_metrics_frozen():
    m = metrics_from_predictions([0, 0, 1, 1, 2, 2], [0, 1, 1, 1, 2, 0], ids=list("abcdef"))
    assert m.accuracy == pytest.approx(4 / 6)
    assert m.confusion.tolist() == [[1, 1, 0], [0, 2, 0], [1, 0, 1]]
    np.testing.assert_allclose(m.precision, [0.5, 2 / 3, 1.0])
    np.testing.assert_allclose(m.recall, [0.5, 1.0, 0.5])
    assert m.misclassified == [("b", 0, 1), ("f", 2, 0)]


def test_external_predictions(tmp_path, small_split):
    ws = phase_windows(small_split.test, WindowProfile(400, 200))
    oracle = LevelsOracle(0.66, 0.78)
    path = export_predictions(oracle, ws, tmp_path / "p.csv")
    ext = load_external_predictions(path, {"instances": [{"id": w.instance_id} for w in ws]})
    assert isinstance(ext, ExternalPredictions) and not ext.supports_masking
    assert evaluate(ext, ws).accuracy == evaluate(oracle, ws).accuracy
    with pytest.raises(ValueError, match="lack predictions"):
        load_external_predictions(path, {"instances": [{"id": "missing/0/0"}]})
    with pytest.raises(TypeError):
        ext.predict_proba(np.zeros((2, 400)))
    (tmp_path / "bad.csv").write_text("instance_id,p_Normal,p_NoFan,p_UnderVolt\na,0.5,0.5,0.5\n")
    with pytest.raises(ValueError, match="sum to 1"):
        load_external_predictions(tmp_path / "bad.csv")


def test_constant_classifier_validation():
    with pytest.raises(ValueError):
        ConstantClassifier([0.5, 0.5])
    assert ConstantClassifier([0.2, 0.3, 0.5]).predict(np.zeros((2, 5))) == 2
