import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acs3d import ConvConfig, ShapeError, conv, conv_backward, pad
from acs3d.errors import ConfigError
from acs3d.gradcheck import max_rel_err, numeric_grad
from acs3d import ops


def rng_(seed=0):
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# pad


def test_pad_zero_is_identity():
    x = rng_().standard_normal((1, 1, 2, 2)).astype(np.float32)
    y = pad(x, [(0, 0)] * 4)
    assert np.array_equal(x, y)
    assert y.base is None  # a copy, inputs stay immutable


def test_pad_single_pixel_center():
    x = np.array([[[[5.0]]]])
    y = pad(x, [(0, 0), (0, 0), (1, 1), (1, 1)])
    expect = np.zeros((1, 1, 3, 3))
    expect[0, 0, 1, 1] = 5.0
    assert np.array_equal(y, expect)


def test_pad_asymmetric_rows():
    x = rng_(1).standard_normal((1, 1, 4, 4))
    y = pad(x, [(0, 0), (0, 0), (1, 2), (0, 0)])
    assert y.shape == (1, 1, 7, 4)
    assert np.all(y[:, :, 0] == 0) and np.all(y[:, :, 5] == 0) and np.all(y[:, :, 6] == 0)
    assert np.array_equal(y[:, :, 1:5], x)


def test_pad_rank_mismatch():
    with pytest.raises(ShapeError):
        pad(np.zeros((2, 2)), [(1, 1)])


def test_pad_negative_rejected():
    with pytest.raises(ShapeError):
        pad(np.zeros((2, 2)), [(1, 1), (-1, 0)])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=2, max_size=4),
       st.integers(0, 10_000))
def test_pad_unpad_roundtrip(pads, seed):
    shape = tuple(rng_(seed).integers(1, 4, size=len(pads)))
    x = rng_(seed).standard_normal(shape)
    assert np.array_equal(ops.unpad(pad(x, pads), pads), x)


# ---------------------------------------------------------------------------
# output extent formula vs naive sliding-window counter


def naive_count(i, k, s, p, d):
    padded = i + 2 * p
    return sum(1 for start in range(0, padded, s) if start + d * (k - 1) <= padded - 1)


def test_out_extent_grid_matches_naive_counter():
    checked = 0
    for i in range(1, 10):
        for k in (1, 2, 3):
            for s in (1, 2, 3):
                for p in (0, 1, 2):
                    for d in (1, 2):
                        if d * (k - 1) + 1 > i + 2 * p:
                            with pytest.raises(ConfigError):
                                ops.out_extent(i, k, s, p, d)
                            continue
                        assert ops.out_extent(i, k, s, p, d) == naive_count(i, k, s, p, d)
                        checked += 1
    assert checked > 300


def test_conv_output_shape_matches_formula(warm):
    r = rng_(3)
    for k, s, p, d in [(3, 1, 1, 1), (3, 2, 0, 1), (2, 2, 1, 2), (1, 3, 2, 1)]:
        cfg = ConvConfig.cubic(k, 2, 3, stride=s, padding=p, dilation=d)
        x = r.standard_normal((2, 2, 7, 8, 9)).astype(np.float32)
        w = r.standard_normal((3, 2, k, k, k)).astype(np.float32)
        assert conv(x, w, None, cfg).shape == (2, 3) + cfg.out_shape((7, 8, 9))


# ---------------------------------------------------------------------------
# conv forward


def test_conv_scalar_product():
    x = np.array([[[[2.0]]]], dtype=np.float32)
    w = np.array([[[[3.0]]]], dtype=np.float32)
    y = conv(x, w, None, ConvConfig.planar(1, 1, 1))
    assert y.shape == (1, 1, 1, 1) and y[0, 0, 0, 0] == pytest.approx(6.0)


def test_conv_identity_kernel():
    x = rng_(5).standard_normal((2, 3, 6, 7)).astype(np.float64)
    w = np.zeros((3, 3, 3, 3))
    for c in range(3):
        w[c, c, 1, 1] = 1.0
    y = conv(x, w, None, ConvConfig.planar(3, 3, 3, padding=1))
    np.testing.assert_array_equal(y, x)


def test_conv_hand_example_2x2_ones():
    x = np.arange(1.0, 10.0).reshape(1, 1, 3, 3)
    w = np.ones((1, 1, 2, 2))
    y = conv(x, w, None, ConvConfig.planar(2, 1, 1))
    np.testing.assert_array_equal(y[0, 0], [[12.0, 16.0], [24.0, 28.0]])


def test_conv_bias_per_channel():
    x = np.ones((1, 1, 2, 2), dtype=np.float32)
    w = np.ones((2, 1, 1, 1), dtype=np.float32)
    y = conv(x, w, np.array([10.0, -1.0], dtype=np.float32), ConvConfig.planar(1, 1, 2))
    assert np.all(y[0, 0] == 11.0) and np.all(y[0, 1] == 0.0)


def test_conv_channel_mismatch_errors():
    cfg = ConvConfig.planar(1, 2, 1)
    with pytest.raises(ShapeError):
        conv(np.zeros((1, 3, 2, 2), dtype=np.float32), np.zeros((1, 2, 1, 1), dtype=np.float32), None, cfg)
    with pytest.raises(ShapeError):
        conv(np.zeros((1, 2, 2, 2), dtype=np.float32), np.zeros((1, 3, 1, 1), dtype=np.float32), None, cfg)


def test_conv_nonpositive_output_errors():
    cfg = ConvConfig.planar(5, 1, 1)
    with pytest.raises(ConfigError):
        conv(np.zeros((1, 1, 3, 3), dtype=np.float32), np.zeros((1, 1, 5, 5), dtype=np.float32), None, cfg)


def test_conv_linearity_f64():
    r = rng_(11)
    cfg = ConvConfig.cubic(3, 2, 3, padding=1)
    x = r.standard_normal((1, 2, 5, 5, 5))
    y = r.standard_normal((1, 2, 5, 5, 5))
    w = r.standard_normal((3, 2, 3, 3, 3))
    a, b = 0.37, -1.21
    lhs = conv(a * x + b * y, w, None, cfg)
    rhs = a * conv(x, w, None, cfg) + b * conv(y, w, None, cfg)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * np.max(np.abs(rhs))


def test_conv_determinism_bitwise():
    r = rng_(12)
    cfg = ConvConfig.cubic(3, 3, 4, stride=2, padding=1, dilation=2)
    x = r.standard_normal((2, 3, 9, 9, 9)).astype(np.float32)
    w = r.standard_normal((4, 3, 3, 3, 3)).astype(np.float32)
    assert np.array_equal(conv(x, w, None, cfg), conv(x, w, None, cfg))


def test_conv_dtype_mismatch():
    cfg = ConvConfig.planar(1, 1, 1)
    with pytest.raises(ShapeError):
        conv(np.zeros((1, 1, 1, 1), np.float32), np.zeros((1, 1, 1, 1), np.float64), None, cfg)


# ---------------------------------------------------------------------------
# conv backward


def test_conv_backward_scalar_example():
    x = np.array([[[[2.0]]]])
    w = np.array([[[[3.0]]]])
    cfg = ConvConfig.planar(1, 1, 1)
    gx, gw, gb = conv_backward(x, w, cfg, np.ones((1, 1, 1, 1)))
    assert gw[0, 0, 0, 0] == 2.0 and gx[0, 0, 0, 0] == 3.0 and gb[0] == 1.0


def test_conv_backward_zero_grad():
    r = rng_(13)
    cfg = ConvConfig.planar(3, 2, 2, padding=1)
    x = r.standard_normal((1, 2, 4, 4))
    w = r.standard_normal((2, 2, 3, 3))
    gx, gw, gb = conv_backward(x, w, cfg, np.zeros((1, 2, 4, 4)))
    assert not gx.any() and not gw.any() and not gb.any()


def test_conv_backward_batch_additivity():
    r = rng_(14)
    cfg = ConvConfig.planar(3, 2, 2, padding=1)
    x = r.standard_normal((4, 2, 5, 5))
    w = r.standard_normal((2, 2, 3, 3))
    g = r.standard_normal((4, 2, 5, 5))
    gx, gw, gb = conv_backward(x, w, cfg, g)
    gw_sum = np.zeros_like(gw)
    gb_sum = np.zeros_like(gb)
    for i in range(4):
        gxi, gwi, gbi = conv_backward(x[i : i + 1], w, cfg, g[i : i + 1])
        np.testing.assert_allclose(gxi, gx[i : i + 1], rtol=1e-12)
        gw_sum += gwi
        gb_sum += gbi
    np.testing.assert_allclose(gw_sum, gw, rtol=1e-12)
    np.testing.assert_allclose(gb_sum, gb, rtol=1e-12)


def test_conv_backward_matches_finite_differences():
    r = rng_(15)
    cfg = ConvConfig.planar(2, 2, 2, stride=2, padding=1, dilation=2)
    x = r.standard_normal((2, 2, 6, 5))
    w = r.standard_normal((2, 2, 2, 2))
    gout = r.standard_normal((2, 2) + cfg.out_shape((6, 5)))
    gx, gw, _ = conv_backward(x, w, cfg, gout)
    assert max_rel_err(gx, numeric_grad(lambda v: np.sum(gout * conv(v, w, None, cfg)), x)) <= 1e-6
    assert max_rel_err(gw, numeric_grad(lambda v: np.sum(gout * conv(x, v, None, cfg)), w)) <= 1e-6


def test_conv_backward_shape_mismatch():
    cfg = ConvConfig.planar(1, 1, 1)
    with pytest.raises(ShapeError):
        conv_backward(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 1, 1)), cfg, np.zeros((1, 1, 3, 3)))


# ---------------------------------------------------------------------------
# pooling


def test_pool_window_one_is_identity():
    x = rng_(16).standard_normal((1, 2, 3, 3, 3)).astype(np.float32)
    for mode in ("max", "avg"):
        y, _ = ops.pool3d(x, mode, (1, 1, 1), (1, 1, 1))
        np.testing.assert_array_equal(y, x)


def test_pool_max_and_avg_examples():
    x = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32).reshape(1, 1, 1, 2, 2)
    ymax, _ = ops.pool3d(x, "max", (1, 2, 2))
    yavg, _ = ops.pool3d(x, "avg", (1, 2, 2))
    assert ymax[0, 0, 0, 0, 0] == 4.0
    assert yavg[0, 0, 0, 0, 0] == pytest.approx(2.5)


def test_avg_pool_divisor_includes_padding():
    x = np.ones((1, 1, 1, 2, 2), dtype=np.float64)
    y, _ = ops.pool3d(x, "avg", (1, 2, 2), stride=(1, 1, 1), padding=(0, 1, 1))
    # corner window sees one real element out of 4
    assert y[0, 0, 0, 0, 0] == pytest.approx(0.25)
    assert y[0, 0, 0, 1, 1] == pytest.approx(1.0)


def test_max_pool_padding_never_wins():
    x = -np.ones((1, 1, 1, 2, 2), dtype=np.float32)
    y, _ = ops.pool3d(x, "max", (1, 2, 2), stride=(1, 1, 1), padding=(0, 1, 1))
    assert np.all(y == -1.0)


def test_max_pool_backward_first_max_in_scan_order():
    x = np.zeros((1, 1, 1, 2, 2), dtype=np.float64)  # all equal: 4-way tie
    y, cache = ops.pool3d(x, "max", (1, 2, 2))
    gx = ops.pool3d_backward(cache, np.ones_like(y))
    expect = np.zeros_like(x)
    expect[0, 0, 0, 0, 0] = 1.0  # first element in scan order takes the gradient
    np.testing.assert_array_equal(gx, expect)


def test_pool_backward_finite_differences():
    r = rng_(17)
    x = r.standard_normal((1, 2, 4, 4, 4))
    for mode in ("max", "avg"):
        y, cache = ops.pool3d(x, mode, (2, 2, 2), (2, 2, 2))
        gout = r.standard_normal(y.shape)
        gx = ops.pool3d_backward(cache, gout)

        def f(v):
            yy, _ = ops.pool3d(v, mode, (2, 2, 2), (2, 2, 2))
            return np.sum(gout * yy)

        assert max_rel_err(gx, numeric_grad(f, x)) <= 1e-6


def test_pool_window_too_large():
    with pytest.raises(ConfigError):
        ops.pool3d(np.zeros((1, 1, 2, 2, 2), dtype=np.float32), "max", (3, 3, 3))


# ---------------------------------------------------------------------------
# batchnorm


def test_batchnorm_eval_identity():
    x = rng_(18).standard_normal((2, 3, 4, 4)).astype(np.float64)
    one, zero = np.ones(3), np.zeros(3)
    y, rm, rv, _ = ops.batchnorm(x, one, zero, zero, one, 0.0, 0.1, "eval")
    np.testing.assert_array_equal(y, x)
    np.testing.assert_array_equal(rm, zero)


def test_batchnorm_train_hand_example():
    # per-channel batch mean 3, variance 4 -> y = 2*(x-3)/2 + 1
    x = np.array([1.0, 5.0, 1.0, 5.0]).reshape(1, 1, 2, 2)
    y, rm, rv, _ = ops.batchnorm(x, np.array([2.0]), np.array([1.0]),
                                 np.zeros(1), np.ones(1), 0.0, 0.5, "train")
    np.testing.assert_allclose(y.ravel(), 2.0 * (x.ravel() - 3.0) / 2.0 + 1.0)
    assert rm[0] == pytest.approx(1.5)   # (1-m)*0 + m*3 with momentum 0.5
    assert rv[0] == pytest.approx(2.5)   # (1-m)*1 + m*4


def test_batchnorm_running_stat_update_and_eval_use():
    r = rng_(19)
    x = r.standard_normal((4, 2, 3, 3)).astype(np.float64)
    gamma, beta = np.ones(2), np.zeros(2)
    rm, rv = np.zeros(2), np.ones(2)
    _, rm2, rv2, _ = ops.batchnorm(x, gamma, beta, rm, rv, 1e-5, 1.0, "train")
    y_eval, _, _, _ = ops.batchnorm(x, gamma, beta, rm2, rv2, 1e-5, 1.0, "eval")
    mu = x.mean(axis=(0, 2, 3))
    np.testing.assert_allclose(rm2, mu)
    assert np.abs(y_eval.mean(axis=(0, 2, 3))) .max() < 1e-12


def test_batchnorm_channel_mismatch():
    with pytest.raises(ShapeError):
        ops.batchnorm(np.zeros((1, 3, 2, 2)), np.ones(2), np.zeros(2),
                      np.zeros(2), np.ones(2), 1e-5, 0.1, "train")


def test_batchnorm_2d_params_load_into_3d():
    r = rng_(20)
    gamma, beta = r.standard_normal(3), r.standard_normal(3)
    rm, rv = r.standard_normal(3), np.abs(r.standard_normal(3)) + 0.5
    x2 = r.standard_normal((2, 3, 4, 4))
    x3 = r.standard_normal((2, 3, 2, 4, 4))
    y2, _, _, _ = ops.batchnorm(x2, gamma, beta, rm, rv, 1e-5, 0.1, "eval")
    y3, _, _, _ = ops.batchnorm(x3, gamma, beta, rm, rv, 1e-5, 0.1, "eval")
    assert y2.shape == x2.shape and y3.shape == x3.shape


# ---------------------------------------------------------------------------
# elementwise family


def test_relu_example():
    y, _ = ops.relu(np.array([-1.0, 2.0]))
    np.testing.assert_array_equal(y, [0.0, 2.0])


def test_concat_channel_extents_and_order():
    a = np.full((1, 2, 2, 2), 1.0)
    b = np.full((1, 3, 2, 2), 2.0)
    y = ops.concat_channels([a, b])
    assert y.shape == (1, 5, 2, 2)
    assert np.all(y[:, :2] == 1.0) and np.all(y[:, 2:] == 2.0)
    with pytest.raises(ShapeError):
        ops.concat_channels([a, np.zeros((1, 3, 3, 2))])


def test_upsample_nearest_block_replication():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
    y = ops.upsample_nearest(x, (2, 2))
    expect = np.array([[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]], dtype=float)
    np.testing.assert_array_equal(y[0, 0], expect)


def test_upsample_backward_is_block_sum():
    r = rng_(21)
    x = r.standard_normal((2, 3, 4, 5))
    g = r.standard_normal((2, 3, 8, 5))
    gx = ops.upsample_nearest_backward(g, (2, 1))
    np.testing.assert_allclose(gx, g.reshape(2, 3, 4, 2, 5).sum(axis=3))


def test_global_avg_pool_and_backward():
    r = rng_(22)
    x = r.standard_normal((2, 3, 4, 4))
    y = ops.global_avg_pool(x)
    np.testing.assert_allclose(y, x.mean(axis=(2, 3)))
    g = r.standard_normal((2, 3))
    gx = ops.global_avg_pool_backward(g, x.shape)
    err = max_rel_err(gx, numeric_grad(lambda v: np.sum(g * ops.global_avg_pool(v)), x))
    assert err <= 1e-6


def test_linear_and_backward():
    r = rng_(23)
    x = r.standard_normal((3, 4))
    w = r.standard_normal((2, 4))
    b = r.standard_normal(2)
    y = ops.linear(x, w, b)
    np.testing.assert_allclose(y, x @ w.T + b)
    g = r.standard_normal((3, 2))
    gx, gw, gb = ops.linear_backward(x, w, g)
    assert max_rel_err(gx, numeric_grad(lambda v: np.sum(g * ops.linear(v, w, b)), x)) <= 1e-6
    assert max_rel_err(gw, numeric_grad(lambda v: np.sum(g * ops.linear(x, v, b)), w)) <= 1e-6
    np.testing.assert_allclose(gb, g.sum(axis=0))
