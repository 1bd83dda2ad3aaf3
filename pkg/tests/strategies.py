"""Market generators shared by the test modules."""

from __future__ import annotations

import numpy as np
from hypothesis import strategies as st

from scoremarket.market import MarketParams

weights = st.floats(min_value=0.05, max_value=20.0, allow_nan=False)
capacities = st.floats(min_value=0.01, max_value=0.6, allow_nan=False)


@st.composite
def markets(draw, min_n=1, max_n=8):
    n = draw(st.integers(min_n, max_n))
    g = draw(st.lists(weights, min_size=n, max_size=n))
    q = draw(st.lists(capacities, min_size=n, max_size=n))
    return MarketParams(g, q)


@st.composite
def cutoff_vectors(draw, n):
    return np.array(draw(st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=n, max_size=n)))


def random_market(rng: np.random.Generator, n: int, q_high: float | None = None) -> MarketParams:
    """Preferability ``exp(U(0, 1))`` and capacities ``U(0.01, q_high)``."""
    q_high = 1.5 / n if q_high is None else q_high
    return MarketParams.from_delta(rng.uniform(0, 1, n), rng.uniform(0.01, q_high, n))


def tie_free_cutoffs(rng: np.random.Generator, n: int, min_gap: float = 1e-3) -> np.ndarray:
    """Distinct cutoffs in (0, 1) with pairwise and boundary gaps of at least ``min_gap``."""
    while True:
        p = rng.uniform(0, 1, n)
        s = np.sort(p)
        if np.min(np.r_[np.diff(s), s[0], 1 - s[-1]]) >= min_gap:
            return p


def tie_free_market(
    rng: np.random.Generator, n: int, min_gap: float = 1e-3, q_high: float | None = None
) -> MarketParams:
    """A market whose unclipped equilibrium cutoffs are distinct and away from zero."""
    from scoremarket.statics import equilibrium_kink_distance

    while True:
        params = random_market(rng, n, q_high)
        if equilibrium_kink_distance(params) >= min_gap:
            return params
