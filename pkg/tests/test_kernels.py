import numpy as np
import pytest

from figcap import kernels


@pytest.fixture(scope="module")
def backends():
    names = kernels.available_backends()
    return [kernels.load_backend(n) for n in names]


def test_backends_agree_on_random_inputs(backends):
    ref = kernels.load_backend("numpy")
    rng = np.random.default_rng(11)
    for _ in range(20):
        m, k, n = rng.integers(1, 9, size=3)
        a = rng.standard_normal((m, k))
        b = rng.standard_normal((k, n))
        x = rng.standard_normal((m, n)) * 10
        gain = rng.standard_normal(n)
        bias = rng.standard_normal(n)
        for impl in backends:
            assert np.allclose(impl.matmul(a, b), ref.matmul(a, b), atol=1e-12)
            assert np.allclose(impl.matmul(a.T.copy().T, b), ref.matmul(a, b), atol=1e-12)
            assert np.allclose(impl.sigmoid(x), ref.sigmoid(x), atol=1e-14)
            assert np.allclose(impl.tanh(x), ref.tanh(x), atol=1e-14)
            assert np.array_equal(impl.relu(x), ref.relu(x))
            assert np.allclose(impl.softmax_rows(x), ref.softmax_rows(x), atol=1e-14)
            o1, x1, i1 = impl.layer_norm_rows(x, gain, bias, 1e-5)
            o2, x2, i2 = ref.layer_norm_rows(x, gain, bias, 1e-5)
            assert np.allclose(o1, o2, atol=1e-11)
            assert np.allclose(x1, x2, atol=1e-11)
            assert np.allclose(i1, i2, atol=1e-11)


def test_strided_matmul_handles_transposed_views(backends):
    rng = np.random.default_rng(12)
    a = rng.standard_normal((5, 3))
    b = rng.standard_normal((5, 4))
    for impl in backends:
        assert np.allclose(impl.matmul(a.T, b), a.T @ b, atol=1e-12)


def test_sigmoid_extreme_values_do_not_overflow(backends):
    x = np.array([[-745.0, -50.0, 0.0, 50.0, 745.0]])
    for impl in backends:
        out = impl.sigmoid(x)
        assert np.all(np.isfinite(out))
        assert out[0, 0] >= 0.0 and out[0, -1] <= 1.0


def test_backend_selection_reports_name():
    assert kernels.BACKEND in ("native", "numpy")
    with pytest.raises(ValueError):
        kernels.load_backend("fortran")
