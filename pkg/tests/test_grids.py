import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deltaflow.errors import InvalidDimensionError, ShapeMismatchError
from deltaflow.grids import GridLedger, as_grid, elementwise, reduce_norm, validate_dims


finite_grids = arrays(
    np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)),
    elements=st.floats(-1e6, 1e6, allow_nan=False),
)


def test_validate_dims_rejects_zero_extent():
    with pytest.raises(InvalidDimensionError):
        validate_dims([0])
    with pytest.raises(InvalidDimensionError):
        validate_dims([])
    assert validate_dims([2, 3]) == (2, 3)


def test_elementwise_hand_arithmetic():
    out = elementwise([1.0, 2.0], [0.5, 1.0], "sub", scale=2.0)
    np.testing.assert_array_equal(out, [0.0, 0.0])


@given(finite_grids)
@settings(max_examples=50)
def test_elementwise_self_cancellation(a):
    out = elementwise(a, a, "sub", scale=1.0)
    assert np.all(out == 0.0)


@given(finite_grids)
@settings(max_examples=50)
def test_elementwise_zero_scale_identity(a):
    b = np.ones_like(a)
    out = elementwise(a, b, "add", scale=0.0)
    np.testing.assert_array_equal(out, a)


def test_elementwise_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        elementwise([1.0, 2.0], [1.0], "add")


def test_reduce_norm_values():
    assert reduce_norm([3.0, 4.0], "l2") == 5.0
    assert reduce_norm([-2.0, 1.0], "max-abs") == 2.0
    assert reduce_norm(np.zeros((3, 3)), "l2") == 0.0
    assert reduce_norm([1.0, 3.0], "mean") == 2.0


def test_reduce_norm_empty():
    with pytest.raises(InvalidDimensionError):
        reduce_norm(np.zeros((0,)), "l2")


def test_as_grid_reshape_and_mismatch():
    g = as_grid([1, 2, 3, 4], dims=(2, 2))
    assert g.shape == (2, 2) and g.dtype == np.float64
    with pytest.raises(ShapeMismatchError):
        as_grid([1, 2, 3], dims=(2, 2))


def test_grid_ledger_tracks_peak():
    ledger = GridLedger()
    a = np.zeros((10, 10))
    b = np.zeros((20, 20))
    ledger.observe(a)
    ledger.observe(a, b)
    ledger.observe(a)
    assert ledger.peak_bytes == a.nbytes + b.nbytes
    ledger.reset()
    assert ledger.peak_bytes == 0
