import numpy as np
import pytest

from vidpert import _kernels as K


@pytest.fixture
def both():
    if not K.HAVE_NUMBA:
        pytest.skip("numba unavailable")
    prev = K.backend()

    def run(fn, *args):
        K.set_backend("numpy")
        a = fn(*args)
        K.set_backend("numba")
        b = fn(*args)
        return a, b

    yield run
    K.set_backend(prev)


@pytest.mark.parametrize("stride,pad", [(1, 1), (2, 1), (1, 0)])
def test_im2col_col2im_agree(both, rng, stride, pad):
    x = rng.standard_normal((2, 3, 9, 9))
    a, b = both(K.im2col, x, 3, stride, pad)
    np.testing.assert_array_equal(a, b)
    a2, b2 = both(K.col2im, a, x.shape, 3, stride, pad)
    np.testing.assert_allclose(a2, b2, rtol=1e-12, atol=1e-12)


def test_horn_schunck_agree(both, rng):
    i1, i2 = rng.uniform(0, 255, (2, 12, 14))
    (u1, v1), (u2, v2) = both(K.horn_schunck, i1, i2, 10.0, 100)
    np.testing.assert_allclose(u1, u2, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(v1, v2, rtol=1e-9, atol=1e-9)


def test_bilinear_warp_agree(both, rng):
    field = rng.standard_normal((3, 10, 11))
    u, v = rng.uniform(-3, 3, (2, 10, 11))
    a, b = both(K.bilinear_warp, field, u, v)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError):
        K.set_backend("cuda")
