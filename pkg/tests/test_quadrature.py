import numpy as np
import pytest
from hypothesis import given, strategies as st

from movns.quadrature import gauss_legendre_square, recommended_order


@pytest.mark.parametrize("order", [1, 4, 12, 24])
def test_weights_sum_to_area(order):
    q = gauss_legendre_square(order)
    assert q.size == order ** 2
    assert abs(q.weights.sum() - 1.0) < 1e-14
    assert np.all((q.nodes > 0) & (q.nodes < 1))


@given(order=st.integers(1, 12), a=st.integers(0, 23), b=st.integers(0, 23))
def test_monomials_integrated_exactly(order, a, b):
    q = gauss_legendre_square(order)
    if max(a, b) > 2 * order - 1:
        return
    val = q.weights @ (q.nodes[:, 0] ** a * q.nodes[:, 1] ** b)
    assert abs(val - 1.0 / ((a + 1) * (b + 1))) < 1e-13


def test_rule_is_cached_and_read_only():
    q = gauss_legendre_square(10)
    assert gauss_legendre_square(10) is q
    with pytest.raises(ValueError):
        q.weights[0] = 1.0
    with pytest.raises(ValueError):
        gauss_legendre_square(0)


def test_recommended_order_grows_with_modes():
    assert recommended_order(1) == 24
    orders = [recommended_order(m) for m in (4, 8, 16, 32)]
    assert orders == sorted(orders)
