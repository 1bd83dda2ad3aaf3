from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scoremarket.demand import coordinate_root, demand, demand_via_matrix, verify_equilibrium
from scoremarket.discrete import decentralized_choice, sample_students
from scoremarket.errors import DomainError
from scoremarket.market import MarketParams, pallet_town
from strategies import cutoff_vectors, markets

P_STAR = np.array([0.2, 0.3, 0.4, 0.6])


def brute_force_demand(params: MarketParams, p) -> np.ndarray:
    """Integrate over score bands directly: in each band the admitted set is explicit."""
    p = np.asarray(p, dtype=float)
    knots = np.unique(np.r_[p, 0.0, 1.0])
    D = np.zeros(p.size)
    for lo, hi in zip(knots[:-1], knots[1:]):
        admitted = p <= lo
        if admitted.any():
            w = np.where(admitted, params.gamma, 0.0)
            D += (hi - lo) * w / w.sum()
    return D


def test_pallet_town_demand_at_equilibrium():
    res = demand(pallet_town(), P_STAR)
    np.testing.assert_allclose(res.D, [0.3, 0.1, 0.2, 0.2], atol=1e-15)
    assert res.unassigned_mass == pytest.approx(0.2)
    assert res.assigned_mass == pytest.approx(0.8)


def test_zero_cutoffs_give_preference_shares():
    params = pallet_town()
    res = demand(params, np.zeros(4))
    np.testing.assert_allclose(res.D, params.gamma / params.total_gamma, atol=1e-16)
    assert res.unassigned_mass == 0.0


def test_cutoff_one_enrolls_nobody():
    res = demand(pallet_town(), [0.2, 1.0, 0.4, 1.0])
    assert res.D[1] == 0.0 and res.D[3] == 0.0
    assert math.isclose(res.assigned_mass, 0.8)


@settings(max_examples=300, deadline=None)
@given(st.data())
def test_demand_matches_band_integration_and_matrix(data):
    params = data.draw(markets(max_n=8))
    p = data.draw(cutoff_vectors(params.n_schools))
    D = demand(params, p).D
    np.testing.assert_allclose(D, brute_force_demand(params, p), atol=1e-13)
    np.testing.assert_allclose(D, demand_via_matrix(params, p), atol=1e-12)
    assert math.isclose(float(np.sum(D)), 1 - float(np.min(p)), abs_tol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_appeal_matches_integration(data):
    params = data.draw(markets(max_n=6))
    p = data.draw(cutoff_vectors(params.n_schools))
    knots = np.unique(np.r_[p, 0.0, 1.0])
    L = np.zeros(p.size)
    for lo, hi in zip(knots[:-1], knots[1:]):
        admitted = p <= lo
        if admitted.any():
            w = np.where(admitted, params.gamma, 0.0)
            L += 0.5 * (hi * hi - lo * lo) * w / w.sum()
    np.testing.assert_allclose(demand(params, p).L, L, atol=1e-13)


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_tie_break_invariance_is_exact(data):
    params = data.draw(markets(min_n=2, max_n=5))
    n = params.n_schools
    levels = data.draw(st.lists(st.sampled_from([0.0, 0.25, 0.5, 0.9]), min_size=n, max_size=n))
    p = np.array(levels)
    reference = demand(params, p)
    for perm in itertools.permutations(range(n)):
        perm = np.array(perm)
        if np.any(np.diff(p[perm]) < 0):
            continue
        res = demand(params, p, order=perm)
        assert np.array_equal(res.D, reference.D)
        assert np.array_equal(res.L, reference.L)


def test_tie_break_order_must_sort():
    with pytest.raises(DomainError):
        demand(pallet_town(), P_STAR, order=[1, 0, 2, 3])


def test_demand_agrees_with_monte_carlo():
    params = pallet_town()
    n = 1_000_000
    sample = sample_students(params, n, seed=20240601)
    fill = decentralized_choice(sample, P_STAR).fill_counts / n
    D = demand(params, P_STAR).D
    se = np.sqrt(D * (1 - D) / n)
    assert np.all(np.abs(fill - D) < 3 * se)


def test_certificate_fixtures():
    params = pallet_town()
    cert = verify_equilibrium(params, P_STAR)
    assert cert.passes(1e-12)
    at_zero = verify_equilibrium(params, np.zeros(4))
    assert at_zero.max_capacity_violation == pytest.approx(0.3)
    assert math.isinf(at_zero.clearing_gap)
    assert not at_zero.passes(1e-10)


def test_certificate_underdemanded_market():
    # school 0 cannot fill even at a zero cutoff
    params = MarketParams([1.0, 3.0], [0.9, 0.2])
    from scoremarket.equilibrium import solve

    p = solve(params).p
    assert p[0] == 0.0
    cert = verify_equilibrium(params, p)
    assert cert.max_stability_violation < 1e-15
    assert cert.passes(1e-12)


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_coordinate_root_round_trip(data):
    params = data.draw(markets(min_n=2, max_n=6))
    p = data.draw(cutoff_vectors(params.n_schools))
    c = data.draw(st.integers(0, params.n_schools - 1))
    at_zero = p.copy()
    at_zero[c] = 0.0
    top = demand(params, at_zero).D[c]
    target = data.draw(st.floats(1e-6, 1.0)) * top
    x = coordinate_root(params, p, c, target)
    p[c] = x
    assert demand(params, p).D[c] == pytest.approx(target, abs=1e-12)
    assert coordinate_root(params, p, c, top * 1.01 + 1e-9) is None
