import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lensinspect import ops
from lensinspect.ops import ConvParams, ShapeError

from oracles import conv2d_direct, maxpool2d_direct, silu_scalar


def rel_error(actual, expected):
    """Normwise relative error: max |a-e| / max(1, max |e|)."""
    expected = np.asarray(expected, dtype=np.float64)
    denom = max(1.0, float(np.max(np.abs(expected))) if expected.size else 0.0)
    return float(np.max(np.abs(actual - expected))) / denom


# ---------------------------------------------------------------- conv2d

def test_conv2d_stem_shape():
    rng = np.random.default_rng(0)
    x = rng.random((1, 3, 640, 640), dtype=np.float32)
    p = ConvParams(rng.standard_normal((16, 3, 3, 3), dtype=np.float32),
                   np.zeros(16, dtype=np.float32), stride=(2, 2), padding=(1, 1))
    assert ops.conv2d(x, p).shape == (1, 16, 320, 320)


def test_conv2d_identity_kernel():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 1, 4, 4)).astype(np.float32)
    p = ConvParams(np.ones((1, 1, 1, 1), dtype=np.float32), np.zeros(1, dtype=np.float32))
    np.testing.assert_array_equal(ops.conv2d(x, p), x)


def test_conv2d_matches_direct_oracle():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 4, 9, 9)).astype(np.float32)
    w = rng.standard_normal((8, 4, 3, 3)).astype(np.float32)
    b = rng.standard_normal(8).astype(np.float32)
    got = ops.conv2d(x, ConvParams(w, b, stride=(1, 1), padding=(0, 0)))
    want = conv2d_direct(x, w, b, (1, 1), (0, 0))
    assert rel_error(got, want) < 1e-5


@given(st.data())
def test_conv2d_oracle_property(data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    n = data.draw(st.integers(1, 2))
    c = data.draw(st.integers(1, 8))
    oc = data.draw(st.integers(1, 8))
    k = data.draw(st.sampled_from([1, 3]))
    s = data.draw(st.sampled_from([1, 2]))
    p = data.draw(st.integers(0, 1))
    h = data.draw(st.integers(max(1, k - 2 * p), 8))
    w = data.draw(st.integers(max(1, k - 2 * p), 8))
    x = rng.standard_normal((n, c, h, w)).astype(np.float32)
    wt = rng.standard_normal((oc, c, k, k)).astype(np.float32)
    b = rng.standard_normal(oc).astype(np.float32)
    got = ops.conv2d(x, ConvParams(wt, b, stride=(s, s), padding=(p, p)))
    want = conv2d_direct(x, wt, b, (s, s), (p, p))
    assert got.shape == want.shape
    assert rel_error(got, want) < 1e-5


def test_conv2d_bit_deterministic():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 16, 40, 40)).astype(np.float32)
    p = ConvParams(rng.standard_normal((32, 16, 3, 3)).astype(np.float32),
                   rng.standard_normal(32).astype(np.float32),
                   stride=(1, 1), padding=(1, 1))
    a = ops.conv2d(x, p)
    b = ops.conv2d(x, p)
    assert a.tobytes() == b.tobytes()


def test_conv2d_channel_mismatch_names_shapes():
    x = np.zeros((1, 3, 8, 8), dtype=np.float32)
    p = ConvParams(np.zeros((4, 5, 3, 3), dtype=np.float32), np.zeros(4, dtype=np.float32))
    with pytest.raises(ShapeError, match=r"3.*5"):
        ops.conv2d(x, p)


def test_conv2d_kernel_does_not_fit():
    x = np.zeros((1, 1, 2, 2), dtype=np.float32)
    p = ConvParams(np.zeros((1, 1, 5, 5), dtype=np.float32), np.zeros(1, dtype=np.float32))
    with pytest.raises(ShapeError):
        ops.conv2d(x, p)


# -------------------------------------------------------------- batchnorm

def test_batchnorm_identity_params():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 3, 5, 5)).astype(np.float32)
    ones, zeros = np.ones(3), np.zeros(3)
    out = ops.batchnorm(x, ones, zeros, zeros, ones, eps=1e-12)
    np.testing.assert_allclose(out, x, atol=1e-6)


def test_batchnorm_constant_channel_collapses_to_beta():
    x = np.full((1, 2, 4, 4), 7.0, dtype=np.float32)
    mean = np.array([7.0, 7.0])
    beta = np.array([1.5, -2.0])
    out = ops.batchnorm(x, np.array([3.0, 0.5]), beta, mean, np.array([2.0, 4.0]), eps=1e-3)
    for c in range(2):
        np.testing.assert_allclose(out[0, c], beta[c], atol=1e-6)


def test_batchnorm_matches_scalar_formula():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((1, 4, 3, 3)).astype(np.float32)
    g = rng.standard_normal(4)
    b = rng.standard_normal(4)
    m = rng.standard_normal(4)
    v = rng.random(4) + 0.1
    eps = 1e-3
    out = ops.batchnorm(x, g, b, m, v, eps)
    want = np.empty_like(x, dtype=np.float64)
    for c in range(4):
        want[:, c] = g[c] * (x[:, c].astype(np.float64) - m[c]) / math.sqrt(v[c] + eps) + b[c]
    np.testing.assert_allclose(out, want, rtol=1e-5, atol=1e-6)


def test_batchnorm_rejects_bad_eps_and_lengths():
    x = np.zeros((1, 2, 2, 2), dtype=np.float32)
    with pytest.raises(ValueError):
        ops.batchnorm(x, [1, 1], [0, 0], [0, 0], [1, 1], eps=0.0)
    with pytest.raises(ShapeError):
        ops.batchnorm(x, [1, 1, 1], [0, 0], [0, 0], [1, 1], eps=1e-3)


# ------------------------------------------------------------------ silu

def test_silu_zero_and_saturation():
    x = np.array([[[[0.0, 20.0]]]], dtype=np.float32)
    out = ops.silu(x)
    assert out[0, 0, 0, 0] == 0.0
    assert abs(out[0, 0, 0, 1] - 20.0) < 1e-6


def test_silu_matches_scalar_oracle():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((1, 1, 8, 8)).astype(np.float32) * 4
    out = ops.silu(x)
    want = np.vectorize(silu_scalar)(x.astype(np.float64))
    np.testing.assert_allclose(out, want, rtol=1e-5, atol=1e-6)


def test_silu_finite_for_extreme_inputs():
    x = np.array([[[[-1e4, 1e4, -88.0, 88.0]]]], dtype=np.float32)
    out = ops.silu(x)
    assert np.isfinite(out).all()


# ------------------------------------------------------------- maxpool2d

def test_maxpool_constant_preserved_5_1_2():
    x = np.full((1, 2, 7, 7), 3.25, dtype=np.float32)
    out = ops.maxpool2d(x, kernel=5, stride=1, padding=2)
    assert out.shape == x.shape
    np.testing.assert_array_equal(out, x)


def test_maxpool_peak_spreads_to_window():
    x = np.zeros((1, 1, 11, 11), dtype=np.float32)
    x[0, 0, 5, 5] = 9.0
    out = ops.maxpool2d(x, 5, 1, 2)
    assert (out[0, 0, 3:8, 3:8] == 9.0).all()
    assert out[0, 0, 2, 5] == 0.0 and out[0, 0, 5, 8] == 0.0


@given(st.integers(0, 2**32 - 1), st.sampled_from([(2, 2, 0), (3, 1, 1), (5, 1, 2), (3, 2, 1)]))
def test_maxpool_matches_direct_oracle(seed, geom):
    kernel, stride, padding = geom
    rng = np.random.default_rng(seed)
    h = int(rng.integers(kernel, 9))
    w = int(rng.integers(kernel, 9))
    x = rng.standard_normal((1, 3, h, w)).astype(np.float32)
    got = ops.maxpool2d(x, kernel, stride, padding)
    want = maxpool2d_direct(x, kernel, stride, padding)
    np.testing.assert_array_equal(got, want.astype(np.float32))


def test_maxpool_kernel_too_large_rejected():
    x = np.zeros((1, 1, 2, 2), dtype=np.float32)
    with pytest.raises(ShapeError):
        ops.maxpool2d(x, kernel=7, stride=1, padding=2)


# ------------------------------------------------------ upsample_nearest2x

def test_upsample_table_row_shape():
    x = np.zeros((1, 256, 20, 20), dtype=np.float32)
    assert ops.upsample_nearest2x(x).shape == (1, 256, 40, 40)


def test_upsample_single_value_block():
    x = np.array([[[[3.5]]]], dtype=np.float32)
    np.testing.assert_array_equal(ops.upsample_nearest2x(x), np.full((1, 1, 2, 2), 3.5))


def test_upsample_topleft_subsampling_recovers_input():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 3, 5, 6)).astype(np.float32)
    up = ops.upsample_nearest2x(x)
    np.testing.assert_array_equal(up[:, :, ::2, ::2], x)


# ------------------------------------------------- concat / split channels

def test_concat_table_row_shape():
    a = np.zeros((1, 128, 40, 40), dtype=np.float32)
    b = np.zeros((1, 128, 40, 40), dtype=np.float32)
    assert ops.concat_channels([a, b]).shape == (1, 256, 40, 40)


def test_concat_single_tensor_identity():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((1, 4, 3, 3)).astype(np.float32)
    np.testing.assert_array_equal(ops.concat_channels([x]), x)


def test_concat_spatial_mismatch_rejected():
    a = np.zeros((1, 2, 4, 4), dtype=np.float32)
    b = np.zeros((1, 2, 5, 4), dtype=np.float32)
    with pytest.raises(ShapeError):
        ops.concat_channels([a, b])


def test_split_sizes():
    x = np.zeros((1, 64, 80, 80), dtype=np.float32)
    parts = ops.split_channels(x, [32, 32])
    assert [p.shape for p in parts] == [(1, 32, 80, 80)] * 2


def test_split_single_part_identity():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((1, 5, 2, 2)).astype(np.float32)
    (part,) = ops.split_channels(x, [5])
    np.testing.assert_array_equal(part, x)


def test_split_sum_mismatch_rejected():
    x = np.zeros((1, 6, 2, 2), dtype=np.float32)
    with pytest.raises(ShapeError):
        ops.split_channels(x, [3, 2])


@given(st.integers(0, 2**32 - 1), st.lists(st.integers(1, 6), min_size=1, max_size=4))
def test_split_concat_round_trip_bit_exact(seed, sizes):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, sum(sizes), 4, 4)).astype(np.float32)
    back = ops.concat_channels(ops.split_channels(x, sizes))
    assert back.tobytes() == x.tobytes()


# ------------------------------------------------------------------- add

def test_add_zero_and_negation():
    rng = np.random.default_rng(10)
    a = rng.standard_normal((1, 3, 4, 4)).astype(np.float32)
    np.testing.assert_array_equal(ops.add(a, np.zeros_like(a)), a)
    np.testing.assert_array_equal(ops.add(a, -a), np.zeros_like(a))


def test_add_matches_scalar_oracle():
    rng = np.random.default_rng(11)
    a = rng.standard_normal((1, 2, 3, 3)).astype(np.float32)
    b = rng.standard_normal((1, 2, 3, 3)).astype(np.float32)
    out = ops.add(a, b)
    for idx in np.ndindex(out.shape):
        assert out[idx] == np.float32(a[idx] + b[idx])


def test_add_shape_mismatch_rejected():
    with pytest.raises(ShapeError, match=r"\(1, 2, 3, 3\).*\(1, 3, 3, 3\)"):
        ops.add(np.zeros((1, 2, 3, 3), dtype=np.float32),
                np.zeros((1, 3, 3, 3), dtype=np.float32))


# --------------------------------------------------------- finite outputs

@given(st.integers(0, 2**32 - 1))
def test_ops_keep_finite_values_finite(seed):
    rng = np.random.default_rng(seed)
    x = (rng.standard_normal((1, 4, 6, 6)) * 50).astype(np.float32)
    p = ConvParams(rng.standard_normal((4, 4, 3, 3)).astype(np.float32),
                   rng.standard_normal(4).astype(np.float32), padding=(1, 1))
    for out in (
        ops.conv2d(x, p),
        ops.batchnorm(x, rng.random(4) + 0.5, rng.standard_normal(4),
                      rng.standard_normal(4), rng.random(4) + 0.1, 1e-3),
        ops.silu(x),
        ops.maxpool2d(x, 3, 2, 1),
        ops.upsample_nearest2x(x),
        ops.add(x, x),
    ):
        assert np.isfinite(out).all()
