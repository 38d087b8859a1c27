import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from depthkd.core import (Rng, Tensor, default_dtype, dtns, gradcheck, no_grad, ops, projection_loss)
from depthkd.errors import DomainError, FormatError, GradcheckError, ParameterError, ShapeError


def naive_conv(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    co, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = (h + 2 * pad - k) // stride + 1, (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, co, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, :, i * stride:i * stride + k, j * stride:j * stride + k]
            out[:, :, i, j] = np.einsum("nckl,ockl->no", patch, w)
    return out + (b[None, :, None, None] if b is not None else 0)


# -- autograd ------------------------------------------------------------------------

def test_backward_accumulates_over_shared_subexpressions():
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    y = x * x + x * 3.0
    ops.sum(y).backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 3.0)


def test_broadcast_gradients_are_reduced_to_operand_shape():
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.ones((4,)), requires_grad=True)
    ops.sum(ops.mul(a, b)).backward()
    assert b.grad.shape == (4,)
    np.testing.assert_allclose(b.grad, 3.0)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_backward_on_non_scalar_needs_grad():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(RuntimeError):
        (x * 2.0).backward()


def test_default_dtype_applies_to_non_float_input():
    with default_dtype(np.float64):
        assert Tensor([1, 2]).dtype == np.float64
    assert Tensor([1, 2]).dtype == np.float32
    # float arrays keep their own precision
    assert Tensor(np.zeros(2)).dtype == np.float64


# -- op errors -------------------------------------------------------------------------

def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))


def test_log_and_sqrt_domain():
    with pytest.raises(DomainError):
        ops.log(Tensor(np.array([1.0, 0.0])))
    with pytest.raises(DomainError):
        ops.sqrt(Tensor(np.array([-1.0])))


def test_concat_mismatch():
    with pytest.raises(ShapeError):
        ops.concat([Tensor(np.ones((1, 2, 3))), Tensor(np.ones((1, 2, 4)))], axis=1)


@pytest.mark.parametrize("kwargs", [dict(stride=0), dict(padding=-1)])
def test_conv_bad_params(kwargs):
    with pytest.raises(ParameterError):
        ops.conv2d(Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((1, 1, 3, 3))), **kwargs)


def test_conv_even_kernel_rejected():
    with pytest.raises(ParameterError):
        ops.conv2d(Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((1, 1, 2, 2))))


# -- conv / norm / attention against independent references -----------------------

@pytest.mark.parametrize("k,stride,pad", [(3, 1, 1), (3, 2, 1), (1, 1, 0), (1, 2, 0), (5, 1, 2)])
def test_conv2d_matches_direct_loop(rng, k, stride, pad):
    x = rng.normal(size=(2, 3, 7, 6))
    w = rng.normal(size=(4, 3, k, k))
    b = rng.normal(size=4)
    with default_dtype(np.float64):
        out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad).data
    np.testing.assert_allclose(out, naive_conv(x, w, b, stride, pad), rtol=1e-12, atol=1e-12)


def test_conv2d_accepts_unbatched(rng):
    x = rng.normal(size=(3, 5, 5))
    w = rng.normal(size=(2, 3, 3, 3))
    with default_dtype(np.float64):
        out = ops.conv2d(Tensor(x), Tensor(w), padding=1)
    assert out.shape == (2, 5, 5)


def test_batch_norm_running_stats_use_unbiased_variance(rng):
    x = rng.normal(2.0, 3.0, size=(4, 2, 3, 3))
    rm, rv = np.zeros(2), np.ones(2)
    with default_dtype(np.float64):
        ops.batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, True, 0.1, 1e-5)
    flat = x.transpose(1, 0, 2, 3).reshape(2, -1)
    np.testing.assert_allclose(rm, 0.1 * flat.mean(1))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * flat.var(1, ddof=1))


def test_attention_matches_reference(rng):
    q, k, v = (rng.normal(size=(2, 3, 5, 4)) for _ in range(3))
    with default_dtype(np.float64):
        out = ops.attention(Tensor(q), Tensor(k), Tensor(v), 0.5).data
    s = q @ k.swapaxes(-1, -2) * 0.5
    p = np.exp(s - s.max(-1, keepdims=True))
    p /= p.sum(-1, keepdims=True)
    np.testing.assert_allclose(out, p @ v, rtol=1e-12)


def test_count_multiplies_conv():
    with ops.count_multiplies() as c:
        ops.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((3, 2, 3, 3))), padding=1)
    assert c[0] == 16 * 3 * 2 * 9


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 7)),
                  elements=st.floats(-50, 50)))
def test_softmax_rows_are_distributions(x):
    with default_dtype(np.float64):
        p = ops.softmax(Tensor(x), axis=-1).data
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-12)


@given(hnp.arrays(np.float64, st.integers(2, 6), elements=st.floats(-20, 20)), st.floats(-100, 100))
def test_softmax_shift_invariant(x, c):
    with default_dtype(np.float64):
        a = ops.softmax(Tensor(x), axis=-1).data
        b = ops.softmax(Tensor(x + c), axis=-1).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_upsample_and_resize(rng):
    x = rng.normal(size=(1, 1, 2, 3))
    with default_dtype(np.float64):
        up = ops.upsample_nearest(Tensor(x), 2).data
        rs = ops.resize_nearest(Tensor(x), (4, 6)).data
    np.testing.assert_array_equal(up, np.repeat(np.repeat(x, 2, -2), 2, -1))
    np.testing.assert_array_equal(up, rs)


# -- gradcheck itself ---------------------------------------------------------------

def test_gradcheck_flags_a_wrong_gradient():
    from depthkd.core.tensor import Tensor as T

    def bad_square(x):
        return T._from_op(x.data ** 2, (x,), lambda g: (g * 3 * x.data,))   # true factor is 2

    with default_dtype(np.float64):
        x = Tensor(np.array([0.3, -1.2, 0.8]), requires_grad=True)
        report = gradcheck(lambda: projection_loss(bad_square(x)), {"x": x})
    assert not report.passed(1e-4)
    assert report.worst[0] == "x"


def test_gradcheck_rejects_non_finite_loss():
    with default_dtype(np.float64):
        x = Tensor(np.array([1.0]), requires_grad=True)
        with pytest.raises(GradcheckError):
            gradcheck(lambda: ops.mul(x, np.inf), {"x": x})


# -- rng -------------------------------------------------------------------------------

def test_rng_streams_are_reproducible_and_independent():
    a = Rng(7).stream("shuffle", 0).random(5)
    b = Rng(7).stream("shuffle", 0).random(5)
    c = Rng(7).stream("shuffle", 1).random(5)
    d = Rng(8).stream("shuffle", 0).random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)


# -- dtns --------------------------------------------------------------------------------

@pytest.mark.parametrize("dtype", [np.float32, np.float64, np.uint8])
def test_dtns_round_trip(rng, dtype):
    arr = (rng.random((2, 3, 4)) * 200).astype(dtype)
    back = dtns.decode(dtns.encode(arr))
    assert back.dtype == arr.dtype
    np.testing.assert_array_equal(back, arr)


def test_dtns_header_layout():
    buf = dtns.encode(np.zeros((2, 5), dtype=np.float32))
    assert buf[:4] == b"DTNS"
    assert len(buf) == 4 + 4 + 1 + 4 + 2 * 8 + 10 * 4


def test_dtns_rejects_corruption():
    buf = dtns.encode(np.arange(6, dtype=np.float64))
    with pytest.raises(FormatError, match="magic"):
        dtns.decode(b"XXXX" + buf[4:])
    with pytest.raises(FormatError, match="version"):
        dtns.decode(buf[:4] + (9).to_bytes(4, "little") + buf[8:])
    with pytest.raises(FormatError, match="dtype"):
        dtns.decode(buf[:8] + bytes([7]) + buf[9:])
    with pytest.raises(FormatError, match="payload"):
        dtns.decode(buf[:-3])
    with pytest.raises(FormatError):
        dtns.encode(np.zeros(3, dtype=np.int16))
