import numpy as np
import pytest

from freqtrain.model import (
    DEFAULT_ARCHITECTURE,
    Architecture,
    ModelParams,
    bin_probabilities,
    extract_features,
    init_params,
    predict_bins,
    predict_stage,
)
from freqtrain.tensor import Tensor, TensorError
from freqtrain.tensor import functional as F

SMALL = Architecture(n_filters=8, lstm_hidden=6, pretrain_hidden=10)


@pytest.fixture(scope="module")
def default_model():
    return init_params(DEFAULT_ARCHITECTURE, seed=0)


def test_feature_shape(default_model):
    x = np.random.default_rng(0).standard_normal((4, 3, 3000))
    assert extract_features(default_model, x).shape == (4, 384)
    assert Architecture(n_filters=32).feature_dim == 96


def test_eval_mode_deterministic(default_model):
    x = np.random.default_rng(1).standard_normal((2, 3, 3000))
    a = extract_features(default_model, x).data
    b = extract_features(default_model, x).data
    np.testing.assert_array_equal(a, b)


def test_zero_input_finite(default_model):
    out = extract_features(default_model, np.zeros((2, 3, 3000))).data
    assert np.all(np.isfinite(out))


def test_train_mode_differs_and_needs_rng():
    model = init_params(SMALL, seed=0)
    x = np.random.default_rng(2).standard_normal((4, 3, 3000))
    a = extract_features(model.copy(), x, "train", np.random.default_rng(0)).data
    b = extract_features(model.copy(), x, "eval").data
    assert not np.allclose(a, b)
    with pytest.raises(ValueError):
        extract_features(model, x, "predict")


def test_wrong_input_shape_rejected(default_model):
    with pytest.raises(TensorError):
        extract_features(default_model, np.zeros((2, 3, 2999)))
    with pytest.raises(TensorError):
        extract_features(default_model, np.zeros((3, 3000)))


def test_threshold_strict():
    model = init_params(SMALL, seed=0)
    for name in ("c_p.dense1.weight", "c_p.dense1.bias", "c_p.dense2.weight", "c_p.dense2.bias"):
        model.params[name].data[...] = 0.0
    probs, preds = predict_bins(model, Tensor(np.ones((3, SMALL.feature_dim))))
    np.testing.assert_array_equal(probs.data, 0.5)
    assert preds.sum() == 0
    model.params["c_p.dense2.bias"].data[...] = np.log(9.0)  # sigmoid -> 0.9
    probs, preds = predict_bins(model, Tensor(np.ones((3, SMALL.feature_dim))))
    np.testing.assert_allclose(probs.data, 0.9)
    assert preds.all()


def test_bin_probabilities_open_interval(default_model):
    feats = extract_features(default_model, np.random.default_rng(3).standard_normal((3, 3, 3000)))
    p = bin_probabilities(default_model, feats).data
    assert p.shape == (3, 20)
    assert np.all((p > 0) & (p < 1))


def _sequence(arch, rng, batch=2):
    return rng.standard_normal((batch, arch.seq_len, arch.feature_dim))


def test_stage_distribution():
    model = init_params(SMALL, seed=1)
    p = predict_stage(model, _sequence(SMALL, np.random.default_rng(0))).data
    assert p.shape == (2, 5)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)


def test_zero_head_uniform():
    model = init_params(SMALL, seed=1)
    for name in model.names("c_f"):
        model.params[name].data[...] = 0.0
    p = predict_stage(model, _sequence(SMALL, np.random.default_rng(0))).data
    np.testing.assert_allclose(p, 0.2, atol=1e-12)


def test_context_sensitivity():
    model = init_params(SMALL, seed=1)
    seq = _sequence(SMALL, np.random.default_rng(4), batch=1)
    before = predict_stage(model, seq).data
    seq[0, 0] = np.random.default_rng(5).standard_normal(SMALL.feature_dim)
    after = predict_stage(model, seq).data
    assert not np.allclose(before, after)


def test_wrong_sequence_length():
    model = init_params(SMALL, seed=1)
    with pytest.raises(TensorError):
        predict_stage(model, np.zeros((1, 10, SMALL.feature_dim)))


def test_kaiming_init(default_model):
    w = default_model.params["f.conv1.weight"].data
    assert abs(w.var() - 2 / 150) < 0.1 * (2 / 150)
    w4 = default_model.params["f.conv4.weight"].data
    assert abs(w4.var() - 2 / (128 * 8)) < 0.1 * (2 / (128 * 8))
    for name, p in default_model.params.items():
        if name.endswith(".bias") and "lstm" not in name:
            assert np.all(p.data == 0), name
    for i in range(1, 5):
        assert np.all(default_model.params[f"f.bn{i}.gamma"].data == 1)
        assert np.all(default_model.buffers[f"f.bn{i}.running_var"] == 1)
    bound = 1 / np.sqrt(128)
    w_ih = default_model.params["c_f.lstm.fwd.w_ih"].data
    assert np.abs(w_ih).max() <= bound


def test_fan_in_uniform_init():
    model = init_params(DEFAULT_ARCHITECTURE, seed=0, scheme="fan_in_uniform")
    bound = 1 / np.sqrt(150)
    assert np.abs(model.params["f.conv1.weight"].data).max() <= bound
    assert np.abs(model.params["f.conv1.bias"].data).max() <= bound
    assert np.any(model.params["f.conv1.bias"].data != 0)
    with pytest.raises(ValueError):
        init_params(SMALL, scheme="xavier")


def test_same_seed_identical():
    a, b, c = init_params(SMALL, 3), init_params(SMALL, 3), init_params(SMALL, 4)
    for name in a.params:
        np.testing.assert_array_equal(a.params[name].data, b.params[name].data)
    assert a.checksum("f") == b.checksum("f") != c.checksum("f")


def test_translation_consistency():
    # a stride-25 shift of the input shifts conv1 output by one position
    model = init_params(DEFAULT_ARCHITECTURE, seed=0)
    t = np.arange(3000 + 25) / 100.0
    wave = np.sin(2 * np.pi * 3.3 * t)
    x0 = np.tile(wave[25:], (1, 3, 1))
    x1 = np.tile(wave[:-25], (1, 3, 1))
    pad = DEFAULT_ARCHITECTURE.conv_paddings()[0]
    w, b = model.params["f.conv1.weight"], model.params["f.conv1.bias"]
    y0 = F.conv1d(Tensor(x0), w, b, 25, pad).data
    y1 = F.conv1d(Tensor(x1), w, b, 25, pad).data
    np.testing.assert_allclose(y1[..., 2:-2], y0[..., 1:-3], atol=1e-10)


def test_checkpoint_feature_extractor_transfer(tmp_path):
    src = init_params(SMALL, seed=7)
    src.save(tmp_path / "f.ckpt", meta={"note": "x"}, components=("f",))
    loaded, manifest = ModelParams.load(tmp_path / "f.ckpt", seed=99)
    assert loaded.checksum("f") == src.checksum("f")
    assert loaded.checksum("c_f") != src.checksum("c_f")
    assert {e["component"] for e in manifest["params"]} == {"f"}
    assert manifest["meta"]["note"] == "x"
    target = init_params(SMALL, seed=8)
    target.load_arrays(loaded.arrays(), components=("f",))
    assert target.checksum("f") == src.checksum("f")
    with pytest.raises(KeyError):
        target.load_arrays({}, components=("f",))
