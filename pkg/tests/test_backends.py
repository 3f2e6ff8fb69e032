"""The numba kernels and the pure-numpy fallback must agree: bitwise on the
convolution forward pass (identical per-element accumulation order) and to
tight tolerances on gradients and pooling."""

import numpy as np
import pytest

from acs3d import ConvConfig, backend
from acs3d import ops

pytestmark = pytest.mark.skipif(backend.active_backend() != "numba",
                                reason="numba backend unavailable")


def both_backends(fn):
    backend.set_backend("numba")
    try:
        a = fn()
        backend.set_backend("numpy")
        b = fn()
    finally:
        backend.set_backend("numba")
    return a, b


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("stride,dilation,padding", [
    (1, 1, 1), (2, 1, 0), (1, 2, 2), ((1, 2, 1), (2, 1, 1), 1),
])
def test_conv_forward_bitwise_identical(dtype, stride, dilation, padding, warm):
    r = np.random.default_rng(0)
    cfg = ConvConfig.cubic(3, 3, 4, stride=stride, padding=padding, dilation=dilation)
    x = r.standard_normal((2, 3, 8, 9, 8)).astype(dtype)
    w = r.standard_normal((4, 3, 3, 3, 3)).astype(dtype)
    b = r.standard_normal(4).astype(dtype)
    ya, yb = both_backends(lambda: ops.conv(x, w, b, cfg))
    assert np.array_equal(ya, yb)


@pytest.mark.parametrize("dtype,rtol", [(np.float32, 2e-5), (np.float64, 1e-12)])
def test_conv_backward_agreement(dtype, rtol, warm):
    r = np.random.default_rng(1)
    cfg = ConvConfig.cubic(3, 2, 3, stride=(1, 2, 1), padding=1, dilation=(2, 1, 1))
    x = r.standard_normal((2, 2, 7, 8, 7)).astype(dtype)
    w = r.standard_normal((3, 2, 3, 3, 3)).astype(dtype)
    gout = r.standard_normal((2, 3) + cfg.out_shape(x.shape[2:])).astype(dtype)
    ga, gb = both_backends(lambda: ops.conv_backward(x, w, cfg, gout))
    for a, b in zip(ga, gb):
        scale = max(np.abs(a).max(), 1e-30)
        assert np.abs(a - b).max() <= rtol * scale


def test_conv_backward_agreement_stride1_transposed_path(warm):
    # stride 1 takes the correlation-by-forward route on the numba side
    r = np.random.default_rng(2)
    cfg = ConvConfig.cubic(3, 2, 3, stride=1, padding=1, dilation=2)
    x = r.standard_normal((1, 2, 8, 8, 8))
    w = r.standard_normal((3, 2, 3, 3, 3))
    gout = r.standard_normal((1, 3) + cfg.out_shape(x.shape[2:]))
    ga, gb = both_backends(lambda: ops.conv_backward(x, w, cfg, gout))
    for a, b in zip(ga, gb):
        np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-12)


@pytest.mark.parametrize("mode", ["max", "avg"])
def test_pooling_agreement(mode, warm):
    r = np.random.default_rng(3)
    x = r.standard_normal((2, 3, 7, 7, 7)).astype(np.float32)

    def run():
        y, cache = ops.pool3d(x, mode, (2, 2, 2), (2, 2, 2), 1)
        g = np.ones_like(y)
        return y, ops.pool3d_backward(cache, g)

    (ya, gxa), (yb, gxb) = both_backends(run)
    if mode == "max":
        assert np.array_equal(ya, yb)
        assert np.array_equal(gxa, gxb)  # same first-max tie-break both sides
    else:
        # the final 1/window scaling rounds differently (f64 vs f32 path)
        np.testing.assert_allclose(ya, yb, rtol=1e-5, atol=1e-7)
        np.testing.assert_allclose(gxa, gxb, rtol=1e-5, atol=1e-7)


def test_env_flag_selects_backend():
    import subprocess
    import sys

    code = ("import acs3d, sys; "
            "sys.exit(0 if acs3d.active_backend() == 'numpy' else 1)")
    proc = subprocess.run([sys.executable, "-c", code],
                          env={"ACS3D_BACKEND": "numpy", "PATH": "/usr/bin:/bin"},
                          capture_output=True)
    assert proc.returncode == 0, proc.stderr.decode()


def test_bad_env_flag_rejected():
    import subprocess
    import sys

    code = "import acs3d; acs3d.active_backend()"
    proc = subprocess.run([sys.executable, "-c", code],
                          env={"ACS3D_BACKEND": "cuda", "PATH": "/usr/bin:/bin"},
                          capture_output=True)
    assert proc.returncode != 0
    assert b"ACS3D_BACKEND" in proc.stderr


def test_set_backend_validates():
    with pytest.raises(ValueError):
        backend.set_backend("fortran")
