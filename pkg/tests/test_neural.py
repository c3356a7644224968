import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import conv_param_count, lstm_param_count
from seld_kit.neural import (LSTM, Conv2D, MaxPool2D, MaxPoolOverTime, ModelGraph, ReshapeMergeFreqChannels,
                             ShapeError, TimeDistributedDense)
from seld_kit.neural.checkpoint import CheckpointError, load_checkpoint, read_header, save_checkpoint
from seld_kit.neural.gradcheck import check_model_gradients, run_gradcheck
from seld_kit.neural.model import STAGE1_ARCH, STAGE2_ARCH, bce_loss, crnn_architecture
from seld_kit.optim import Optimizer


def test_parameter_count_examples():
    conv = ModelGraph([Conv2D(8, 5), ReshapeMergeFreqChannels(), TimeDistributedDense(1), MaxPoolOverTime()],
                      (10, 4))
    assert conv.layers[0].num_params() == 208 == conv_param_count(5, 1, 8)
    lstm = ModelGraph([LSTM(32), TimeDistributedDense(1), MaxPoolOverTime()], (7, 40))
    assert lstm.layers[0].num_params() == 9344 == lstm_param_count(40, 32)


def _count_by_summation(conv_filters, lstm_units, n_labels, t, f):
    total, c = 0, 1
    for k in conv_filters:
        total += conv_param_count(5, c, k)
        c, t, f = k, t // 2, f // 2
    width = c * f
    for h in lstm_units:
        total += lstm_param_count(width, h)
        width = h
    return total + width * n_labels + n_labels


def test_default_model_sizes_match_summation_oracle():
    m1 = ModelGraph.from_architecture(STAGE1_ARCH, (99, 40))
    assert m1.count_parameters() == _count_by_summation((64, 96), (64,), 2, 99, 40) == 417890
    assert "417890" in m1.summary()
    m2 = ModelGraph.from_architecture(STAGE2_ARCH, (22, 41))
    assert m2.count_parameters() == _count_by_summation((32, 48), (48,), 2, 22, 41)


def test_shapes_through_the_stack():
    m = ModelGraph.from_architecture(crnn_architecture((4, 6), (5,), 3), (99, 40))
    assert m.shapes == [(99, 40), (99, 40, 4), (49, 20, 4), (49, 20, 6), (24, 10, 6), (24, 60), (24, 5),
                        (24, 3), (3,)]
    p = m.forward(np.random.default_rng(0).standard_normal((2, 99, 40)))
    assert p.shape == (2, 3) and ((p > 0) & (p < 1)).all()


def test_forward_is_pure():
    m = ModelGraph.from_architecture(crnn_architecture((2,), (3,), 2), (8, 6), seed=1)
    x = np.random.default_rng(1).standard_normal((3, 8, 6))
    np.testing.assert_array_equal(m.forward(x), m.forward(x))
    np.testing.assert_array_equal(m.forward(x[0]), m.forward(x)[0])


def test_shape_error_names_layer():
    m = ModelGraph.from_architecture(crnn_architecture((2,), (3,), 2), (8, 6))
    with pytest.raises(ShapeError) as err:
        m.forward(np.zeros((1, 8, 7)))
    assert err.value.layer_index == 0
    with pytest.raises(ShapeError) as err:
        ModelGraph([LSTM(3), TimeDistributedDense(2)], (4, 5))
    assert err.value.layer_index == 1


def test_timepool_gradient_routes_to_argmax():
    layer = MaxPoolOverTime()
    x = np.array([[[0.1, 0.9], [0.7, 0.2], [0.3, 0.4]]])
    layer.forward(x)
    d = layer.backward(np.array([[1.0, 2.0]]))
    np.testing.assert_array_equal(d, [[[0, 2], [1, 0], [0, 0]]])


def test_maxpool_floor_and_routing():
    layer = MaxPool2D(2)
    layer.build((5, 3, 1), np.random.default_rng(0))
    x = np.arange(15, dtype=float).reshape(1, 5, 3, 1)
    out = layer.forward(x)
    np.testing.assert_array_equal(out[0, :, :, 0], [[4], [10]])
    d = layer.backward(np.ones_like(out))
    assert d.sum() == 2 and d[0, 1, 1, 0] == 1 and d[0, 3, 1, 0] == 1


def test_saturated_correct_output_gives_near_zero_gradients():
    m = ModelGraph([TimeDistributedDense(2), MaxPoolOverTime()], (3, 2), dtype=np.float64)
    w, b = m.parameters()
    w[...] = [[40.0, -40.0], [40.0, -40.0]]
    b[...] = 0.0
    x = np.ones((1, 3, 2))
    report = m.loss_and_gradients(x, np.array([[1.0, 0.0]]))
    assert report.loss < 1e-6
    assert max(np.abs(g).max() for g in m.gradients()) < 1e-6
    assert bce_loss(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]))[0] == pytest.approx(-np.log(1 - 1e-7))


@pytest.mark.parametrize("seed", [0, 1])
def test_every_layer_passes_gradcheck(seed):
    for name, results in run_gradcheck(seed).items():
        for r in results:
            assert r.passed(1e-4), (name, r)


def test_stacked_lstm_gradcheck():
    m = ModelGraph([LSTM(3), LSTM(2), TimeDistributedDense(2), MaxPoolOverTime()], (6, 4), seed=3,
                   dtype=np.float64)
    rng = np.random.default_rng(3)
    results = check_model_gradients(m, rng.standard_normal((2, 6, 4)), rng.integers(0, 2, (2, 2)))
    assert max(r.max_rel_error for r in results) < 1e-4


def test_checkpoint_round_trip_with_optimizer(tmp_path):
    m = ModelGraph.from_architecture(crnn_architecture((2,), (3,), 2), (8, 6), seed=4)
    x = np.random.default_rng(4).standard_normal((2, 8, 6))
    opt = Optimizer("adamax", lr=2e-3)
    for _ in range(3):
        m.loss_and_gradients(x, np.array([[1, 0], [0, 1]]))
        opt.step(m.parameters(), m.gradients())
    save_checkpoint(tmp_path / "m.ckpt", m, {"stage": "1"}, opt.state)
    back, header, state = load_checkpoint(tmp_path / "m.ckpt")
    for a, b in zip(m.parameters(), back.parameters()):
        np.testing.assert_array_equal(a, b)
    for a, b in zip(opt.state.m + opt.state.v, state.m + state.v):
        np.testing.assert_array_equal(a, b)
    assert (state.kind, state.t, state.lr) == ("adamax", 3, 2e-3)
    assert header["meta"] == {"stage": "1"} and read_header(tmp_path / "m.ckpt")["n_params"] == m.count_parameters()
    np.testing.assert_array_equal(back.forward(x), m.forward(x))


def test_checkpoint_rejects_corruption(tmp_path):
    m = ModelGraph.from_architecture(crnn_architecture((2,), (3,), 2), (8, 6))
    save_checkpoint(tmp_path / "m.ckpt", m)
    raw = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "short.ckpt").write_bytes(raw[:-4])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "short.ckpt")
    (tmp_path / "magic.ckpt").write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "magic.ckpt")
    stale = raw.replace(b'"format_version": 1', b'"format_version": 9')
    (tmp_path / "stale.ckpt").write_bytes(stale)
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "stale.ckpt")


@given(st.integers(1, 6), st.integers(1, 5), st.integers(1, 4))
def test_conv_same_padding_keeps_size(t, f, c):
    layer = Conv2D(c, 5)
    assert layer.build((t, f, 2), np.random.default_rng(0)) == (t, f, c)
    out = layer.forward(np.random.default_rng(1).standard_normal((1, t, f, 2)))
    assert out.shape == (1, t, f, c) and (out >= 0).all()
