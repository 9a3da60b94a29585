"""Backend-selectable kernels: numpy/numba agreement and contracts."""

import numpy as np
import pytest

from rmnp import kernels


@pytest.fixture(autouse=True)
def restore_backend():
    before = kernels.get_backend()
    yield
    kernels.set_backend(before)


def test_numpy_backend_always_available():
    assert "numpy" in kernels.available_backends()


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError):
        kernels.set_backend("gpu")


def test_scatter_add_rows_matches_manual():
    rng = np.random.default_rng(0)
    rows = rng.normal(size=(50, 4))
    index = rng.integers(0, 7, size=50)
    expected = np.zeros((7, 4))
    np.add.at(expected, index, rows)
    for backend in kernels.available_backends():
        kernels.set_backend(backend)
        out = kernels.scatter_add_rows(index, rows, 7)
        np.testing.assert_allclose(out, expected, rtol=0, atol=0)


def test_segment_sum_with_duplicates_and_gaps():
    values = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    segments = np.array([2, 0, 2])
    for backend in kernels.available_backends():
        kernels.set_backend(backend)
        out = kernels.segment_sum(values, segments, 4)
        np.testing.assert_array_equal(
            out, [[3.0, 4.0], [0.0, 0.0], [6.0, 8.0], [0.0, 0.0]]
        )


def test_segment_max_empty_segment_is_zero():
    values = np.array([-5.0, -1.0, -3.0])
    segments = np.array([0, 0, 2])
    for backend in kernels.available_backends():
        kernels.set_backend(backend)
        out = kernels.segment_max(values, segments, 3)
        np.testing.assert_array_equal(out, [-1.0, 0.0, -3.0])


def test_backends_agree_on_random_input():
    backends = kernels.available_backends()
    if len(backends) < 2:
        pytest.skip("only one backend available")
    rng = np.random.default_rng(3)
    rows = rng.normal(size=(200, 8))
    index = rng.integers(0, 31, size=200)
    values = rng.normal(size=200)
    results = {}
    for backend in backends:
        kernels.set_backend(backend)
        results[backend] = (
            kernels.scatter_add_rows(index, rows, 31),
            kernels.segment_sum(rows, index, 31),
            kernels.segment_max(values, index, 31),
        )
    a, b = (results[k] for k in backends[:2])
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-15, atol=1e-15)
