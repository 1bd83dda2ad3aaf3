from __future__ import annotations

import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scoremarket.demand import demand
from scoremarket.errors import DataError, DegeneracyError, DomainError, InfeasibleTargetError
from scoremarket.inverse import (
    MarketObservation,
    demand_curve,
    invert,
    invert_recursion,
    invert_rootfind,
    linear_target_cutoff,
    target_cutoff,
)
from scoremarket.market import MarketParams, pallet_town

LUNAR = MarketObservation([0.0, 0.99], [100 / 101, 1 / 101], ("Lunar College", "Antarctic University"))


def forward(gamma, p) -> MarketObservation:
    return MarketObservation(p, demand(MarketParams(gamma, np.ones(len(gamma))), p).D)


def test_pallet_town_round_trip():
    obs = MarketObservation([0.2, 0.3, 0.4, 0.6], [0.3, 0.1, 0.2, 0.2])
    est = invert_recursion(obs)
    np.testing.assert_allclose(est.gamma, pallet_town().gamma, atol=1e-15)
    np.testing.assert_allclose(invert_rootfind(obs).gamma, est.gamma, atol=1e-9)


def test_lunar_antarctic():
    est = invert_recursion(LUNAR)
    np.testing.assert_allclose(est.gamma, [1 / 101, 100 / 101], atol=1e-15)
    # same true yield despite very different preferability
    np.testing.assert_allclose(est.true_yield, [100 / 101, 100 / 101], atol=1e-15)
    assert est.ranking().tolist() == [1, 0]


def test_single_school():
    est = invert(MarketObservation([0.5], [0.25]))
    assert est.gamma.tolist() == [1.0]
    assert est.true_yield[0] == pytest.approx(0.5)


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_round_trip_property(n, seed):
    rng = np.random.default_rng(seed)
    gamma = np.exp(rng.uniform(-2, 2, n))
    gamma /= gamma.sum()
    p = rng.permutation(np.linspace(0.0, 0.95, n)) if n > 1 else np.array([0.3])
    obs = forward(gamma, p)
    np.testing.assert_allclose(invert_recursion(obs).gamma, gamma, atol=1e-10)
    np.testing.assert_allclose(invert_rootfind(obs).gamma, gamma, atol=1e-12)


def test_ties_in_cutoffs_are_handled():
    gamma = np.array([0.1, 0.2, 0.3, 0.4])
    obs = forward(gamma, [0.1, 0.5, 0.5, 0.8])
    np.testing.assert_allclose(invert(obs).gamma, gamma, atol=1e-14)


def test_clustered_cutoffs_root_finder():
    rng = np.random.default_rng(8)
    n = 100
    gamma = rng.uniform(0.5, 1.5, n)
    gamma /= gamma.sum()
    p = 0.5 + 1e-6 * np.arange(n)
    obs = forward(gamma, p)
    est = invert_rootfind(obs, start=np.full(n, 1.0 / n))
    assert est.converged and est.residual < 1e-9


def test_degenerate_recursion_falls_back():
    # demand inconsistent with any gamma on the top school exhausts the weights
    obs = MarketObservation([0.0, 0.5], [0.2, 0.5])
    with pytest.raises(DegeneracyError) as info:
        invert_recursion(obs)
    assert info.value.school == "0"
    est = invert(obs)
    assert est.method == "root-finder"
    assert np.isfinite(est.residual)


def test_unknown_method():
    with pytest.raises(DomainError):
        invert(LUNAR, "magic")


@pytest.mark.parametrize(
    "p,D",
    [([0.5], [0.6]), ([1.0], [0.1]), ([0.1], [0.0]), ([0.0, 0.0], [0.7, 0.7]), ([-0.1], [0.1])],
)
def test_observation_validation(p, D):
    with pytest.raises(DataError):
        MarketObservation(p, D)


def test_observation_csv_round_trip():
    obs = MarketObservation([0.0, 0.99], [100 / 101, 1 / 101], ("a", "b"), population=10100.0)
    buf = io.StringIO()
    obs.write_csv(buf)
    assert buf.getvalue().splitlines()[1] == "a,0.0,0.9900990099009901,10000"
    back = MarketObservation.read_csv(io.StringIO(buf.getvalue()))
    np.testing.assert_array_equal(back.D_obs, obs.D_obs)
    assert back.population == 10100.0
    counts_only = MarketObservation.read_csv(io.StringIO("name,cutoff,demand_count\na,0.0,300\nb,0.5,100\n"))
    np.testing.assert_allclose(counts_only.D_obs, [0.75, 0.25])


def test_estimate_csv():
    buf = io.StringIO()
    invert(LUNAR).write_csv(buf, LUNAR)
    rows = buf.getvalue().splitlines()
    assert rows[0] == "rank,name,demand_count,cutoff,yield,true_yield,gamma,demand_fraction"
    assert rows[1].startswith("1,Antarctic University,,0.99,,")


def test_demand_curve_and_targets():
    gamma = np.array([0.1, 0.2, 0.3, 0.4])
    p = np.array([0.1, 0.3, 0.6, 0.8])
    grid = np.linspace(0, 1, 101)
    curve = demand_curve(gamma, p, 2, grid)
    assert curve.shape == (101, 2)
    assert curve[-1, 1] == 0.0
    assert np.all(np.diff(curve[:, 1], 2) >= -1e-12)
    current = demand(MarketParams(gamma, np.ones(4)), p).D[2]
    assert target_cutoff(gamma, p, 2, current) == pytest.approx(0.6, abs=1e-12)
    x = target_cutoff(gamma, p, 2, 0.8 * current)
    q = p.copy()
    q[2] = x
    assert demand(MarketParams(gamma, np.ones(4)), q).D[2] == pytest.approx(0.8 * current, abs=1e-12)
    # convexity: the chord through (1, 0) overstates demand to the right of p_c
    # and understates it to the left
    assert linear_target_cutoff(0.6, current, 0.8 * current) >= x - 1e-12
    up = target_cutoff(gamma, p, 2, 1.2 * current)
    assert linear_target_cutoff(0.6, current, 1.2 * current) <= up + 1e-12


def test_infeasible_target_reports_bound():
    gamma = np.array([0.5, 0.5])
    with pytest.raises(InfeasibleTargetError) as info:
        target_cutoff(gamma, [0.5, 0.5], 0, 0.9)
    assert info.value.bound == pytest.approx(0.75)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_demand_curve_is_convex(n, seed):
    rng = np.random.default_rng(seed)
    gamma = rng.uniform(0.1, 1, n)
    p = rng.uniform(0, 1, n)
    c = int(rng.integers(n))
    curve = demand_curve(gamma, p, c, np.linspace(0, 1, 257))
    assert np.all(np.diff(curve[:, 1], 2) >= -1e-12)
    assert curve[-1].tolist() == [1.0, 0.0]
