from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings

from scoremarket.errors import DomainError
from scoremarket.market import (
    CutoffVector,
    MarketParams,
    build_A,
    build_T,
    pallet_town,
    sort_by_competitiveness,
    stable_order,
)
from strategies import markets


def test_pallet_town_ratio_order_is_identity():
    params = pallet_town()
    np.testing.assert_allclose(params.ratios, [5 / 9, 5 / 6, 1.25, 2.5])
    assert sort_by_competitiveness(params).tolist() == [0, 1, 2, 3]


def test_equal_ratios_break_ties_by_index():
    assert sort_by_competitiveness(MarketParams([1, 1], [1, 1])).tolist() == [0, 1]
    assert stable_order([0.5, 0.2, 0.5, 0.2]).tolist() == [1, 3, 0, 2]


def test_single_school_matrices():
    s = build_A(MarketParams([1.0], [0.5]), [0])
    assert s.A.tolist() == [[-1.0]]
    assert s.A_inv.tolist() == [[-1.0]]


def test_pallet_town_matrix_identity():
    params = pallet_town()
    A = build_A(params, [0, 1, 2, 3]).A
    p_star = np.array([0.2, 0.3, 0.4, 0.6])
    np.testing.assert_allclose(A @ p_star + params.gamma / params.total_gamma, params.q, atol=1e-15)
    # first row against the band formula at Gamma = 12: -2/2, 2(1/2 - 1/3), 2(1/3 - 1/6), 2(1/6 - 1/12)
    np.testing.assert_allclose(A[0], [-1.0, 1 / 3, 1 / 3, 1 / 6], atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(markets(max_n=12))
def test_A_inverse_closed_form(params):
    order = np.random.default_rng(params.n_schools).permutation(params.n_schools)
    s = build_A(params, order)
    np.testing.assert_allclose(s.A @ s.A_inv, np.eye(params.n_schools), atol=1e-12)
    assert np.all(np.tril(s.A, -1) == 0)


def test_T_block():
    params = MarketParams([1, 1, 2], [0.1, 0.1, 0.1])
    np.testing.assert_allclose(build_T(params, [0, 1, 2], 3), [[-0.5], [-0.5]])
    assert build_T(params, [0, 1, 2], 1).shape == (0, 3)
    assert build_A(pallet_town(), [0, 1, 2, 3], 1).T.size == 0


@pytest.mark.parametrize(
    "gamma,q",
    [([], []), ([1, 2], [0.1]), ([1, -1], [0.1, 0.1]), ([1, np.nan], [0.1, 0.1]), ([1], [0.0])],
)
def test_params_validation(gamma, q):
    with pytest.raises(DomainError):
        MarketParams(gamma, q)


def test_params_are_immutable_and_normalize():
    params = MarketParams.from_delta(np.log([2.0, 6.0]), [0.1, 0.2])
    with pytest.raises(ValueError):
        params.gamma[0] = 3.0
    np.testing.assert_allclose(params.normalized().gamma, [0.25, 0.75])
    np.testing.assert_allclose(params.delta, np.log([2.0, 6.0]))


def test_cutoff_vector():
    cv = CutoffVector([0.4, 0.1, 0.4])
    assert cv.perm.tolist() == [1, 0, 2]
    np.testing.assert_array_equal(cv.sorted, [0.1, 0.4, 0.4])
    with pytest.raises(DomainError):
        CutoffVector([1.2])
    with pytest.raises(DomainError):
        CutoffVector([0.1, 0.2], perm=[0, 0])
