from math import comb

import pytest
from hypothesis import given, strategies as st

from heatlab.combinatorics import (GammaTable, alt_binom_sum, gamma_closed, gamma_recursive,
                                   gamma_row_sum, identity_sweep)


def trinomial_coeffs(n):
    """Coefficients c[k][j] of x^k y^j in (1 - x - y)^n by repeated multiplication."""
    c = {(0, 0): 1}
    for _ in range(n):
        nxt = {}
        for (k, j), v in c.items():
            for (dk, dj), m in (((0, 0), 1), ((1, 0), -1), ((0, 1), -1)):
                key = (k + dk, j + dj)
                nxt[key] = nxt.get(key, 0) + m * v
        c = nxt
    return c


@pytest.mark.parametrize("n, k, j, expected", [
    (4, 2, 1, -12),
    (2, 0, 2, 1),
    (0, 0, 0, 1),
    (3, 1, 0, -3),
    (5, 0, 5, -1),
    (6, 3, 3, 20),
])
def test_gamma_frozen_values(n, k, j, expected):
    assert gamma_recursive(n, k, j) == expected
    assert gamma_closed(n, k, j) == expected


@pytest.mark.parametrize("n", range(0, 13))
def test_gamma_matches_trinomial_expansion(n):
    c = trinomial_coeffs(n)
    for k in range(n + 1):
        for j in range(n - k + 1):
            assert gamma_recursive(n, k, j) == c.get((k, j), 0)


@pytest.mark.parametrize("n, k, expected", [(5, 5, -1), (4, 4, 1), (3, 3, -1), (6, 2, 0), (0, 0, 1)])
def test_alt_binom_and_row_sum_frozen(n, k, expected):
    assert alt_binom_sum(n, k) == expected
    assert gamma_row_sum(n, k) == expected


@given(st.integers(0, 40).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, n))))
def test_alt_binom_sum_is_signed_delta(nk):
    n, k = nk
    assert alt_binom_sum(n, k) == ((-1) ** n if k == n else 0)


@given(st.integers(0, 30).flatmap(
    lambda n: st.integers(0, n).flatmap(lambda k: st.tuples(st.just(n), st.just(k), st.integers(0, n - k)))))
def test_closed_equals_recursive(nkj):
    n, k, j = nkj
    assert gamma_closed(n, k, j) == gamma_recursive(n, k, j)
    assert abs(gamma_closed(n, k, j)) == comb(n, k) * comb(n - k, j)


def test_gamma_table_entries():
    t = GammaTable.build(5)
    assert len(t.entries) == sum(5 - k + 1 for k in range(6))
    assert t.entries[(2, 1)] == gamma_closed(5, 2, 1)


@pytest.mark.parametrize("args, exc", [
    ((3, 4), ValueError),
    ((-1, 0), ValueError),
    ((2.0, 1), TypeError),
])
def test_alt_binom_sum_rejects_bad_input(args, exc):
    with pytest.raises(exc):
        alt_binom_sum(*args)


def test_gamma_rejects_j_out_of_range():
    with pytest.raises(ValueError):
        gamma_closed(4, 2, 3)


def test_identity_sweep_all_pass():
    out = identity_sweep(20)
    assert set(out["checks"].values()) == {"pass"}
    assert out["failures"] == []
