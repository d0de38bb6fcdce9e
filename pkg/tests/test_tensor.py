import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freqtrain.tensor import (
    AdamState,
    GraphConsumedError,
    Tensor,
    TensorError,
    adam_step,
    batchnorm1d,
    bilstm,
    clip_grad_norm,
    conv1d,
    conv_output_length,
    dense,
    dropout,
    load_checkpoint,
    lstm,
    maxpool1d,
    no_grad,
    relu,
    same_padding,
    save_checkpoint,
    softmax,
)
from freqtrain.tensor.gradcheck import check_gradients


def t(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


# -- conv1d ------------------------------------------------------------------

def test_conv_output_length_worked_example():
    assert conv_output_length(3000, 50, 25, 13) == 120
    x = t(np.zeros((1, 1, 3000)))
    w = t(np.zeros((1, 1, 50)))
    assert conv1d(x, w, t([0.0]), stride=25, padding=13).shape == (1, 1, 120)


def test_conv_identity_kernel():
    x = np.random.default_rng(0).standard_normal((2, 1, 17))
    out = conv1d(t(x), t([[[1.0]]]), t([0.0]))
    np.testing.assert_array_equal(out.data, x)


def test_conv_ramp_stride_two():
    x = t(np.arange(8.0).reshape(1, 1, 8))
    out = conv1d(x, t([[[1.0, 1.0]]]), t([0.0]), stride=2)
    np.testing.assert_array_equal(out.data.ravel(), [1, 5, 9, 13])


def brute_conv(x, w, b, stride, left, right):
    xp = np.pad(x, ((0, 0), (0, 0), (left, right)))
    batch, _, n = xp.shape
    out_ch, in_ch, k = w.shape
    out_len = (n - k) // stride + 1
    out = np.zeros((batch, out_ch, out_len))
    for bi in range(batch):
        for o in range(out_ch):
            for j in range(out_len):
                s = 0.0
                for c in range(in_ch):
                    for q in range(k):
                        s += xp[bi, c, j * stride + q] * w[o, c, q]
                out[bi, o, j] = s + b[o]
    return out


@settings(max_examples=40, deadline=None)
@given(
    length=st.integers(4, 30),
    k=st.integers(1, 6),
    stride=st.integers(1, 4),
    left=st.integers(0, 3),
    right=st.integers(0, 3),
    seed=st.integers(0, 10_000),
)
def test_conv_matches_brute_force(length, k, stride, left, right, seed):
    if length + left + right < k:
        return
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 2, length))
    w = rng.standard_normal((3, 2, k))
    b = rng.standard_normal(3)
    out = conv1d(t(x), t(w), t(b), stride, (left, right))
    assert out.shape[2] == conv_output_length(length, k, stride, (left, right))
    np.testing.assert_allclose(out.data, brute_conv(x, w, b, stride, left, right), atol=1e-12)


def test_same_padding_gives_ceil_length():
    for length, k, s in [(3000, 50, 25), (15, 8, 1), (120, 8, 1), (7, 3, 2)]:
        pads = same_padding(length, k, s)
        assert conv_output_length(length, k, s, pads) == -(-length // s)


def test_conv_shape_errors_name_dimension():
    with pytest.raises(TensorError, match="in_channels"):
        conv1d(t(np.zeros((1, 2, 10))), t(np.zeros((1, 3, 2))), None)
    with pytest.raises(TensorError, match="shorter than kernel"):
        conv1d(t(np.zeros((1, 1, 3))), t(np.zeros((1, 1, 5))), None)


# -- maxpool -----------------------------------------------------------------

def test_maxpool_examples():
    x = t(np.array([1, 3, 2, 8, 5, 4.0]).reshape(1, 1, 6))
    np.testing.assert_array_equal(maxpool1d(x, 2).data.ravel(), [3, 8, 5])
    np.testing.assert_array_equal(maxpool1d(x, 1).data, x.data)
    assert maxpool1d(t(np.zeros((1, 1, 15))), 4).shape == (1, 1, 3)
    with pytest.raises(TensorError):
        maxpool1d(t(np.zeros((1, 1, 3))), 4)


def test_maxpool_tie_goes_to_first():
    x = t(np.array([2.0, 2.0, 1.0, 1.0]).reshape(1, 1, 4), grad=True)
    maxpool1d(x, 2).sum().backward()
    np.testing.assert_array_equal(x.grad.ravel(), [1, 0, 1, 0])


@settings(max_examples=30, deadline=None)
@given(length=st.integers(1, 40), window=st.integers(1, 8))
def test_maxpool_length_formula(length, window):
    if length < window:
        return
    assert maxpool1d(t(np.zeros((1, 2, length))), window).shape[2] == length // window


# -- batchnorm ---------------------------------------------------------------

def test_batchnorm_train_statistics():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((8, 4, 20)) * 3 + 5
    rm, rv = np.zeros(4), np.ones(4)
    out = batchnorm1d(t(x), t(np.ones(4)), t(np.zeros(4)), rm, rv, train=True).data
    assert np.all(np.abs(out.mean(axis=(0, 2))) < 1e-6)
    assert np.all(np.abs(out.var(axis=(0, 2)) - 1) < 1e-4)
    n = 8 * 20
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2)))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2)) * n / (n - 1))


def test_batchnorm_eval_identity_and_constant_channel():
    x = np.random.default_rng(2).standard_normal((3, 2, 5))
    out = batchnorm1d(t(x), t(np.ones(2)), t(np.zeros(2)), np.zeros(2), np.ones(2), train=False)
    np.testing.assert_allclose(out.data, x / np.sqrt(1 + 1e-5))
    const = np.full((3, 2, 5), 4.0)
    out = batchnorm1d(t(const), t(np.ones(2)), t(np.zeros(2)), np.zeros(2), np.ones(2), train=True)
    np.testing.assert_array_equal(out.data, 0.0)


def test_batchnorm_needs_two_values():
    with pytest.raises(TensorError):
        batchnorm1d(t(np.zeros((1, 2, 1))), t(np.ones(2)), t(np.zeros(2)), np.zeros(2), np.ones(2), True)


# -- lstm ----------------------------------------------------------------------

def _scalar_lstm(xs, w_ih, w_hh, b, reverse=False):
    """Loop-over-units reference implementation."""
    hidden = w_hh.shape[0]
    batch = xs[0].shape[0]
    h = np.zeros((batch, hidden))
    c = np.zeros((batch, hidden))
    order = range(len(xs) - 1, -1, -1) if reverse else range(len(xs))
    outs = [None] * len(xs)
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    for step in order:
        new_h = np.zeros_like(h)
        new_c = np.zeros_like(c)
        for bi in range(batch):
            for u in range(hidden):
                z = [b[g * hidden + u] + xs[step][bi] @ w_ih[:, g * hidden + u] + h[bi] @ w_hh[:, g * hidden + u]
                     for g in range(4)]
                i, f, gg, o = sig(z[0]), sig(z[1]), np.tanh(z[2]), sig(z[3])
                new_c[bi, u] = f * c[bi, u] + i * gg
                new_h[bi, u] = o * np.tanh(new_c[bi, u])
        h, c = new_h, new_c
        outs[step] = h
    return outs


def _lstm_params(rng, feat, hidden):
    p = {}
    for d in ("fwd", "bwd"):
        p[f"{d}.w_ih"] = t(rng.standard_normal((feat, 4 * hidden)) * 0.5)
        p[f"{d}.w_hh"] = t(rng.standard_normal((hidden, 4 * hidden)) * 0.5)
        p[f"{d}.bias"] = t(rng.standard_normal(4 * hidden) * 0.5)
    return p


def test_bilstm_matches_scalar_reference():
    rng = np.random.default_rng(3)
    xs = [rng.standard_normal((2, 4)) for _ in range(2)]
    p = _lstm_params(rng, 4, 3)
    outs = bilstm([t(x) for x in xs], p)
    fwd = _scalar_lstm(xs, p["fwd.w_ih"].data, p["fwd.w_hh"].data, p["fwd.bias"].data)
    bwd = _scalar_lstm(xs, p["bwd.w_ih"].data, p["bwd.w_hh"].data, p["bwd.bias"].data, reverse=True)
    for step in range(2):
        np.testing.assert_allclose(outs[step].data, np.concatenate([fwd[step], bwd[step]], axis=1), atol=1e-10)


def test_bilstm_zero_everything_is_zero():
    p = {k: t(np.zeros_like(v.data)) for k, v in _lstm_params(np.random.default_rng(0), 3, 2).items()}
    outs = bilstm([t(np.zeros((2, 3))) for _ in range(4)], p)
    for o in outs:
        np.testing.assert_array_equal(o.data, 0.0)
        assert o.shape == (2, 4)


def test_bilstm_single_step_both_halves_from_same_input():
    rng = np.random.default_rng(4)
    p = _lstm_params(rng, 3, 2)
    same = {f"bwd.{k}": p[f"fwd.{k}"] for k in ("w_ih", "w_hh", "bias")}
    same.update({f"fwd.{k}": p[f"fwd.{k}"] for k in ("w_ih", "w_hh", "bias")})
    out = bilstm([t(rng.standard_normal((1, 3)))], same)[0].data
    np.testing.assert_allclose(out[:, :2], out[:, 2:])


# -- dense / activations / dropout -------------------------------------------

def test_activation_examples():
    np.testing.assert_allclose(softmax(t(np.zeros((1, 5)))).data, 0.2)
    np.testing.assert_array_equal(relu(t([-2.0, 3.0])).data, [0, 3])


def test_dropout_mean_and_eval_identity():
    x = t(np.ones(100_000))
    rng = np.random.default_rng(5)
    out = dropout(x, 0.5, True, rng).data
    assert abs(out.mean() - 1.0) < 3 * 1.0 / np.sqrt(100_000)
    assert set(np.unique(out)) <= {0.0, 2.0}
    assert dropout(x, 0.5, False, rng) is x
    with pytest.raises(TensorError):
        dropout(x, 1.0, True, rng)


def test_dense_shape_error():
    with pytest.raises(TensorError):
        dense(t(np.zeros((2, 3))), t(np.zeros((4, 5))))


# -- gradient checks ---------------------------------------------------------

GRAD_TOL = 1e-4


def _assert_grads(fn, inputs, rng):
    errs = check_gradients(fn, inputs, rng)
    assert max(errs) < GRAD_TOL, errs


@pytest.mark.parametrize("seed", range(5))
def test_grad_conv1d(seed):
    rng = np.random.default_rng(seed)
    x, w, b = rng.standard_normal((2, 2, 11)), rng.standard_normal((3, 2, 4)), rng.standard_normal(3)
    _assert_grads(lambda x, w, b: conv1d(x, w, b, stride=3, padding=(1, 2)), [x, w, b], rng)


@pytest.mark.parametrize("seed", range(5))
def test_grad_maxpool(seed):
    rng = np.random.default_rng(seed)
    _assert_grads(lambda x: maxpool1d(x, 3), [rng.standard_normal((2, 2, 10))], rng)


@pytest.mark.parametrize("seed", range(5))
def test_grad_batchnorm_train(seed):
    rng = np.random.default_rng(seed)
    x, g, b = rng.standard_normal((3, 2, 5)), rng.standard_normal(2), rng.standard_normal(2)
    _assert_grads(lambda x, g, b: batchnorm1d(x, g, b, np.zeros(2), np.ones(2), True), [x, g, b], rng)


@pytest.mark.parametrize("seed", range(5))
def test_grad_dense_and_activations(seed):
    rng = np.random.default_rng(seed)
    x, w, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 5)), rng.standard_normal(5)
    _assert_grads(lambda x, w, b: softmax(dense(x, w, b).relu() + dense(x, w, b).sigmoid()), [x, w, b], rng)


@pytest.mark.parametrize("seed", range(3))
def test_grad_bilstm_three_steps(seed):
    rng = np.random.default_rng(seed)
    xs = [rng.standard_normal((2, 3)) for _ in range(3)]
    p = _lstm_params(rng, 3, 3)
    names = list(p)

    def fn(x0, x1, x2, *weights):
        return bilstm([x0, x1, x2], dict(zip(names, weights)))

    _assert_grads(fn, xs + [p[n].data for n in names], rng)


def test_single_direction_lstm_reverse_flag():
    rng = np.random.default_rng(9)
    xs = [t(rng.standard_normal((1, 2))) for _ in range(3)]
    w_ih, w_hh, b = t(rng.standard_normal((2, 8))), t(rng.standard_normal((2, 8))), t(np.zeros(8))
    fwd = lstm(xs, w_ih, w_hh, b)
    rev = lstm(xs[::-1], w_ih, w_hh, b, reverse=True)
    np.testing.assert_allclose(fwd[-1].data, rev[0].data)


# -- backward semantics ------------------------------------------------------

def test_backward_polynomial_and_constant():
    w = t([3.0, -1.0], grad=True)
    (w * w).sum().backward()
    np.testing.assert_array_equal(w.grad, [6, -2])
    v = t([1.0, 2.0], grad=True)
    loss = (t([1.0]) * 2.0).sum() + (v * 0.0).sum()
    loss.backward()
    np.testing.assert_array_equal(v.grad, 0.0)


def test_second_backward_raises():
    w = t([1.0, 2.0], grad=True)
    loss = (w * w).sum()
    loss.backward()
    with pytest.raises(GraphConsumedError):
        loss.backward()


def test_non_finite_rejected():
    with pytest.raises(TensorError):
        Tensor(np.array([1.0, np.nan]))


def test_no_grad_builds_no_graph():
    w = t([1.0], grad=True)
    with no_grad():
        y = w * 2.0
    assert y._backward is None and not y.requires_grad


# -- optimiser ---------------------------------------------------------------

def test_adam_zero_grad_no_change():
    p = {"w": t([1.0, 2.0], grad=True)}
    adam_step(p, {"w": np.zeros(2)}, AdamState(0.1))
    np.testing.assert_array_equal(p["w"].data, [1, 2])


def test_adam_first_step_closed_form():
    p = {"w": t([0.0], grad=True)}
    state = AdamState(0.1)
    adam_step(p, {"w": np.ones(1)}, state)
    np.testing.assert_allclose(p["w"].data, [-0.1], rtol=1e-6)
    assert state.step == 1


def test_adam_weight_decay_acts_through_gradient():
    p = {"w": t([1.0], grad=True)}
    adam_step(p, {"w": np.zeros(1)}, AdamState(1e-4, weight_decay=1e-3))
    assert p["w"].data[0] < 1.0
    np.testing.assert_allclose(p["w"].data, [1.0 - 1e-4], rtol=1e-6)


def test_adam_rejects_non_finite_gradient_by_name():
    p = {"layer.w": t([1.0], grad=True)}
    with pytest.raises(TensorError, match="layer.w"):
        adam_step(p, {"layer.w": np.array([np.inf])}, AdamState(0.1))


def test_adam_deterministic():
    rng = np.random.default_rng(0)
    g = rng.standard_normal(5)
    results = []
    for _ in range(2):
        p = {"w": t(np.ones(5), grad=True)}
        s = AdamState(0.01)
        for _ in range(3):
            adam_step(p, {"w": g}, s)
        results.append(p["w"].data.copy())
    np.testing.assert_array_equal(*results)


def test_clip_grad_norm_examples():
    g = {"a": np.array([6.0]), "b": np.array([8.0])}
    assert clip_grad_norm(g, 5.0) == pytest.approx(10.0)
    np.testing.assert_allclose(g["a"], [3.0])
    np.testing.assert_allclose(g["b"], [4.0])
    g = {"a": np.array([3.0])}
    clip_grad_norm(g, 5.0)
    np.testing.assert_array_equal(g["a"], [3.0])
    g = {"a": np.zeros(3)}
    clip_grad_norm(g, 5.0)
    np.testing.assert_array_equal(g["a"], 0.0)


# -- checkpoints -------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    arrays = {"f.w": np.arange(6.0).reshape(2, 3), "c_f.b": np.array([1.5])}
    path = tmp_path / "ck.bin"
    save_checkpoint(path, arrays, {"f.w": "f", "c_f.b": "c_f"}, {"note": 1})
    loaded, manifest = load_checkpoint(path)
    for k in arrays:
        np.testing.assert_array_equal(loaded[k], arrays[k])
    assert manifest["format_version"] == 1
    assert [p["component"] for p in manifest["params"]] == ["f", "c_f"]
    assert manifest["meta"]["note"] == 1
