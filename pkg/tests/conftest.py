import numpy as np
import pytest

from acs3d import ConvConfig, backend, ops


def warm_kernels():
    """Trigger JIT compilation of every hot kernel for both dtypes."""
    for dt in (np.float32, np.float64):
        x = np.ones((1, 1, 3, 4, 5), dtype=dt)
        w = np.ones((1, 1, 2, 2, 2), dtype=dt)
        cfg = ConvConfig.cubic(2, 1, 1)
        g = np.ones((1, 1) + cfg.out_shape(x.shape[2:]), dtype=dt)
        ops.conv(x, w, None, cfg)
        ops.conv_backward(x, w, cfg, g)
        cfg2 = ConvConfig.cubic(2, 1, 1, stride=2, padding=1)
        g2 = np.ones((1, 1) + cfg2.out_shape(x.shape[2:]), dtype=dt)
        ops.conv_backward(x, w, cfg2, g2)
        for mode in ("max", "avg"):
            y, cache = ops.pool3d(x, mode, (2, 2, 2), (1, 1, 1))
            ops.pool3d_backward(cache, np.ones_like(y))


@pytest.fixture(scope="session")
def warm():
    if backend.using_numba():
        warm_kernels()
    return backend.active_backend()


@pytest.fixture
def numpy_backend():
    """Run a test under the pure-numpy kernels, restoring the default after."""
    prev = backend.active_backend()
    backend.set_backend("numpy")
    yield
    backend.set_backend(prev)
