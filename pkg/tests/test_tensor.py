"""Autodiff primitives: forward examples, gradients, tape behaviour, ATNS."""

import io
import itertools
import struct

import numpy as np
import pytest

from vidprior import tensor as tt
from vidprior.evaluate.verify import GRAD_TOL, composite_case, primitive_cases
from vidprior.tensor import atns
from vidprior.tensor.gradcheck import check_gradients


@pytest.fixture(autouse=True)
def f64():
    tt.current_graph().reset()
    with tt.default_dtype("f64"):
        yield
    tt.current_graph().reset()


def T(x, grad=False):
    return tt.Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


# ---------------------------------------------------------------- conv2d

def direct_conv2d(x, w, stride=1, pad=0):
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    Ho, Wo = (H + 2 * pad - kh) // stride + 1, (W + 2 * pad - kw) // stride + 1
    out = np.zeros((B, O, Ho, Wo))
    for b, o, i, j in itertools.product(range(B), range(O), range(Ho), range(Wo)):
        for c, u, v in itertools.product(range(C), range(kh), range(kw)):
            out[b, o, i, j] += xp[b, c, i * stride + u, j * stride + v] * w[o, c, u, v]
    return out


def test_conv2d_zero_input():
    out = tt.conv2d(T(np.zeros((1, 1, 3, 3))), T(np.random.default_rng(0).normal(size=(2, 1, 3, 3))), padding=1)
    assert np.all(out.data == 0)


def test_conv2d_identity_kernel():
    x = np.random.default_rng(1).normal(size=(2, 3, 5, 4))
    w = np.zeros((3, 3, 1, 1))
    w[np.arange(3), np.arange(3)] = 1.0
    assert np.array_equal(tt.conv2d(T(x), T(w)).data, x)


def test_conv2d_ramp_window_sums():
    x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
    out = tt.conv2d(T(x), T(np.ones((1, 1, 2, 2)))).data
    expect = np.array([[x[0, 0, i:i + 2, j:j + 2].sum() for j in range(3)] for i in range(3)])
    assert out.shape == (1, 1, 3, 3)
    np.testing.assert_array_equal(out[0, 0], expect)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0)])
def test_conv2d_matches_loops(stride, pad):
    rng = np.random.default_rng(stride * 10 + pad)
    x, w = rng.normal(size=(2, 3, 6, 5)), rng.normal(size=(4, 3, 3, 3))
    np.testing.assert_allclose(tt.conv2d(T(x), T(w), stride=stride, padding=pad).data,
                               direct_conv2d(x, w, stride, pad), atol=1e-12)


def test_conv2d_shape_errors():
    with pytest.raises(tt.ShapeError, match="channels"):
        tt.conv2d(T(np.zeros((1, 2, 4, 4))), T(np.zeros((1, 3, 3, 3))))
    with pytest.raises(tt.ShapeError, match="larger"):
        tt.conv2d(T(np.zeros((1, 1, 2, 2))), T(np.zeros((1, 1, 3, 3))))


# ---------------------------------------------------------------- temporal conv

def test_conv1d_zero_kernel():
    x = np.random.default_rng(0).normal(size=(1, 2, 4, 2, 2))
    assert np.all(tt.conv1d_temporal(T(x), T(np.zeros((3, 2, 3)))).data == 0)


def test_conv1d_identity():
    x = np.random.default_rng(0).normal(size=(2, 1, 4, 3, 3))
    np.testing.assert_array_equal(tt.conv1d_temporal(T(x), T(np.ones((1, 1, 1)))).data, x)


def test_conv1d_replicate_padding_sums():
    x = np.broadcast_to(np.array([1.0, 2.0, 3.0])[None, None, :, None, None], (1, 1, 3, 2, 2))
    out = tt.conv1d_temporal(T(x), T(np.ones((1, 1, 3)))).data
    np.testing.assert_array_equal(out[0, 0, :, 0, 0], [4.0, 6.0, 8.0])
    assert np.all(out[0, 0, :, 1, 1] == out[0, 0, :, 0, 0])


def test_conv1d_static_clip_stays_static():
    frame = np.random.default_rng(2).normal(size=(1, 3, 1, 4, 4))
    x = np.repeat(frame, 5, axis=2)
    out = tt.conv1d_temporal(T(x), T(np.random.default_rng(3).normal(size=(2, 3, 3)))).data
    assert np.all(out == out[:, :, :1])


def test_conv1d_errors():
    with pytest.raises(tt.ShapeError, match="exceeds"):
        tt.conv1d_temporal(T(np.zeros((1, 1, 2, 1, 1))), T(np.zeros((1, 1, 3))))
    with pytest.raises(tt.ShapeError, match="odd"):
        tt.conv1d_temporal(T(np.zeros((1, 1, 4, 1, 1))), T(np.zeros((1, 1, 2))))


# ---------------------------------------------------------------- group norm

def test_group_norm_constant_input_is_zero():
    assert np.all(tt.group_norm(T(np.full((2, 4, 3, 3), 7.0)), 2).data == 0)


def test_group_norm_fixed_point():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1, 2, 50))
    x = (x - x.mean()) / x.std()
    np.testing.assert_allclose(tt.group_norm(T(x), 1).data, x, atol=1e-6)


def test_group_norm_statistics():
    x = np.random.default_rng(4).normal(3.0, 2.5, size=(2, 8, 4, 4))
    out = tt.group_norm(T(x), 2).data.reshape(2, 2, -1)
    assert np.abs(out.mean(axis=-1)).max() < 1e-10
    assert np.abs(out.var(axis=-1) - 1).max() < 1e-6


def test_group_norm_spans_trailing_axes():
    x = np.random.default_rng(5).normal(size=(1, 4, 3, 2, 2))
    out = tt.group_norm(T(x), 2).data
    g = x.reshape(1, 2, -1)
    ref = ((g - g.mean(-1, keepdims=True)) / g.std(-1, keepdims=True)).reshape(x.shape)
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_group_norm_bad_groups():
    with pytest.raises(tt.ShapeError, match="divide"):
        tt.group_norm(T(np.zeros((1, 6, 2, 2))), 4)


# ---------------------------------------------------------------- attention

def test_attention_single_key_returns_values():
    rng = np.random.default_rng(0)
    q, k, v = (rng.normal(size=(2, 3, 1, 4)) for _ in range(3))
    np.testing.assert_allclose(tt.attention(T(q), T(k), T(v)).data, v, atol=1e-15)


def test_attention_zero_query_averages():
    rng = np.random.default_rng(1)
    k, v = rng.normal(size=(1, 2, 5, 3)), rng.normal(size=(1, 2, 5, 3))
    out = tt.attention(T(np.zeros_like(k)), T(k), T(v)).data
    np.testing.assert_allclose(out, np.broadcast_to(v.mean(axis=2, keepdims=True), v.shape), atol=1e-14)


def test_attention_two_term_softmax():
    q = np.array([0.7, -0.2]).reshape(1, 1, 2, 1)
    k = np.array([1.5, -0.5]).reshape(1, 1, 2, 1)
    v = np.array([2.0, -3.0]).reshape(1, 1, 2, 1)
    out = tt.attention(T(q), T(k), T(v)).data.ravel()
    for i, qi in enumerate([0.7, -0.2]):
        a, b = np.exp(qi * 1.5), np.exp(qi * -0.5)
        assert abs(out[i] - (a * 2.0 + b * -3.0) / (a + b)) < 1e-14


# ---------------------------------------------------------------- other primitives

def test_linear_examples():
    x = np.random.default_rng(0).normal(size=(3, 4))
    assert np.all(tt.linear(T(x), T(np.zeros((2, 4)))).data == 0)
    np.testing.assert_array_equal(tt.linear(T(x), T(np.eye(4))).data, x)
    w, b = np.arange(8.0).reshape(2, 4), np.array([1.0, -1.0])
    np.testing.assert_allclose(tt.linear(T(x), T(w), T(b)).data, x @ w.T + b)


def test_silu_examples():
    assert tt.silu(T([0.0])).data[0] == 0.0
    x = np.array([-3.0, 0.5, 40.0, -800.0])
    np.testing.assert_allclose(tt.silu(T(x)).data, x / (1 + np.exp(-np.clip(x, -700, 700))), rtol=1e-14, atol=1e-300)


def test_add_scalar_mul_concat_reshape():
    a, b = np.ones((2, 3)), np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(tt.add(T(a), T(b)).data, a + b)
    np.testing.assert_array_equal(tt.scalar_mul(T(b), 0.0).data, 0 * b)
    np.testing.assert_array_equal(tt.scalar_mul(T(b), 1.0).data, b)
    x, y = np.zeros((1, 2, 2, 2)), np.ones((1, 3, 2, 2))
    cat = tt.concat_channels([T(x), T(y)]).data
    assert cat.shape == (1, 5, 2, 2) and cat[:, :2].sum() == 0 and cat[:, 2:].sum() == 12
    assert tt.reshape(T(b), (3, 2)).data.tolist() == b.reshape(3, 2).tolist()


def test_mean_softmax_examples():
    x = np.arange(6.0).reshape(2, 3)
    assert tt.mean(T(x)).data == 2.5
    np.testing.assert_array_equal(tt.mean(T(x), axis=1).data, [1.0, 4.0])
    np.testing.assert_allclose(tt.softmax(T(np.zeros((2, 4)))).data, 0.25)
    s = tt.softmax(T([0.0, np.log(3.0)])).data
    np.testing.assert_allclose(s, [0.25, 0.75])


def test_embedding_lookup_examples():
    table = np.arange(12.0).reshape(4, 3)
    np.testing.assert_array_equal(tt.embedding_lookup(T(table), [2, 0, 2]).data, table[[2, 0, 2]])
    with pytest.raises(IndexError):
        tt.embedding_lookup(T(table), [4])


def test_nearest_resampling():
    x = np.arange(4.0).reshape(1, 1, 2, 2)
    up = tt.nearest_upsample(T(x), 2).data
    np.testing.assert_array_equal(up[0, 0], [[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]])
    np.testing.assert_array_equal(tt.nearest_downsample(T(up), 2).data, x)
    with pytest.raises(tt.ShapeError):
        tt.nearest_downsample(T(np.zeros((1, 1, 3, 3))), 2)


# ---------------------------------------------------------------- autodiff

def test_backward_sum_gives_ones():
    x = T(np.random.default_rng(0).normal(size=(2, 3, 4)), grad=True)
    tt.backward(tt.sum_all(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))


def test_backward_half_square_gives_x():
    xd = np.random.default_rng(1).normal(size=(5, 2))
    x = T(xd, grad=True)
    tt.backward(tt.scalar_mul(tt.sum_all(tt.mul(x, x)), 0.5))
    np.testing.assert_allclose(x.grad, xd, rtol=1e-15)


def test_backward_rejects_non_scalar():
    x = T(np.ones(3), grad=True)
    with pytest.raises(ValueError, match="scalar"):
        tt.backward(tt.scalar_mul(x, 2.0))


def test_graph_is_topological_and_reset():
    x = T(np.ones((2, 2)), grad=True)
    y = tt.silu(tt.add(x, x))
    loss = tt.sum_all(y)
    recs = tt.current_graph().records
    seen = {x.id}
    for r in recs:
        assert all(i in seen for i in r.input_ids)
        seen.add(r.output_id)
    tt.backward(loss)
    assert len(tt.current_graph()) == 0


def test_no_grad_records_nothing():
    x = T(np.ones(2), grad=True)
    with tt.no_grad():
        y = tt.add(x, x)
    assert not y.requires_grad and len(tt.current_graph()) == 0


def test_gradient_accumulates_over_reuse():
    x = T([2.0], grad=True)
    tt.backward(tt.sum_all(tt.add(tt.mul(x, x), x)))
    assert x.grad[0] == 5.0


def test_debug_checks_catch_non_finite():
    tt.set_debug_checks(True)
    try:
        with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
            tt.mul(T([np.inf]), T([0.0]))
    finally:
        tt.set_debug_checks(False)


CASES = primitive_cases(np.random.default_rng(1234), per_op=10)


@pytest.mark.parametrize("name", sorted(CASES))
def test_primitive_gradients(name):
    cases = CASES[name]
    assert len(cases) >= 10
    for fn, inputs in cases:
        assert check_gradients(fn, inputs) < GRAD_TOL


def test_composite_gradient():
    fn, inputs = composite_case(np.random.default_rng(7))
    assert check_gradients(fn, inputs) < GRAD_TOL


def test_gradcheck_requires_f64():
    x = tt.Tensor(np.ones(2, dtype=np.float32), requires_grad=True, dtype=np.float32)
    with pytest.raises(TypeError):
        check_gradients(lambda a: tt.sum_all(a), [x])


def test_forward_determinism():
    fn, inputs = composite_case(np.random.default_rng(9))
    a, b = fn(*inputs).data, fn(*inputs).data
    tt.current_graph().reset()
    assert a.tobytes() == b.tobytes()


def test_f32_mode():
    with tt.default_dtype("f32"):
        x = tt.Tensor([1.0, 2.0])
        assert x.data.dtype == np.float32
        assert tt.silu(x).data.dtype == np.float32
    with pytest.raises(ValueError):
        tt.set_default_dtype(np.int32)


# ---------------------------------------------------------------- ATNS

@pytest.mark.parametrize("dtype,code", [(np.float64, 0), (np.float32, 1)])
def test_atns_header_and_roundtrip(dtype, code):
    arr = np.random.default_rng(0).normal(size=(2, 3, 4)).astype(dtype)
    raw = atns.to_bytes(arr)
    assert raw[:4] == b"ATNS" and raw[4] == 1 and raw[5] == code and raw[6] == 3 and raw[7] == 0
    assert struct.unpack("<3Q", raw[8:32]) == (2, 3, 4)
    assert raw[32:] == arr.astype(np.dtype(dtype).newbyteorder("<")).tobytes()
    back = atns.from_bytes(raw)
    assert back.dtype == dtype and np.array_equal(back, arr)


def test_atns_file_roundtrip(tmp_path):
    arr = np.arange(6.0).reshape(2, 3)
    atns.save(tmp_path / "a.atns", arr)
    assert np.array_equal(atns.load(tmp_path / "a.atns"), arr)


def test_atns_stream_of_blocks():
    buf = io.BytesIO()
    atns.write_atns(buf, np.ones(2))
    atns.write_atns(buf, np.zeros((1, 1), dtype=np.float32))
    buf.seek(0)
    assert atns.read_atns(buf).tolist() == [1.0, 1.0]
    assert atns.read_atns(buf).shape == (1, 1)


def test_atns_errors():
    with pytest.raises(atns.ATNSError):
        atns.from_bytes(b"XXXX" + bytes(4))
    good = atns.to_bytes(np.ones(4))
    with pytest.raises(atns.ATNSError):
        atns.from_bytes(good[:-3])
    with pytest.raises(atns.ATNSError):
        atns.from_bytes(good[:4] + bytes([2]) + good[5:])
    with pytest.raises((atns.ATNSError, TypeError, ValueError)):
        atns.to_bytes(np.arange(3))
