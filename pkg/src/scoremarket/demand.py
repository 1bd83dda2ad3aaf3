"""Piecewise-linear demand and appeal under single-score MNL choice."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .market import CutoffVector, MarketParams, build_A, stable_order

__all__ = [
    "DemandResult",
    "EquilibriumCertificate",
    "as_cutoffs",
    "demand",
    "demand_via_matrix",
    "verify_equilibrium",
    "coordinate_root",
]


@dataclass(frozen=True)
class DemandResult:
    """Enrollment mass ``D``, appeal ``L`` and the unplaced mass, in original order."""

    D: np.ndarray
    L: np.ndarray
    unassigned_mass: float

    @property
    def assigned_mass(self) -> float:
        return float(np.sum(self.D))


@dataclass(frozen=True)
class EquilibriumCertificate:
    max_capacity_violation: float
    max_stability_violation: float
    ncp_residual: float
    clearing_gap: float

    def passes(self, tol: float) -> bool:
        return max(
            self.max_capacity_violation,
            self.max_stability_violation,
            self.ncp_residual,
            self.clearing_gap,
        ) <= tol


def as_cutoffs(p) -> np.ndarray:
    if isinstance(p, CutoffVector):
        return np.array(p.p)
    arr = np.array(p, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0) or np.any(arr > 1):
        raise DomainError(f"cutoffs must lie in [0, 1], got {arr.tolist()}")
    return arr


def _check_tiebreak(order, ps_key: np.ndarray) -> np.ndarray:
    order = np.asarray(order, dtype=int)
    if sorted(order.tolist()) != list(range(ps_key.size)):
        raise DomainError("order must be a permutation of the school indices")
    if np.any(np.diff(ps_key[order]) < 0):
        raise DomainError("order does not sort the cutoffs ascending")
    return order


def demand(params: MarketParams, p, order=None) -> DemandResult:
    """Demand and appeal at cutoffs ``p``.

    Students are split into ``n + 1`` bands by the sorted cutoffs (with a
    sentinel cutoff of 1 at the top); a student in band ``d`` is admitted to
    the ``d`` least selective schools and picks ``c`` among them with MNL
    probability ``g_c / S_d``. Tied cutoffs are merged into one band, with the
    block's weight added by a correctly rounded sum, so the result does not
    depend on how ties are ordered. ``order`` may pin a particular
    tie-breaking permutation; it must sort ``p``.
    """
    p = as_cutoffs(p)
    n = params.n_schools
    if p.size != n:
        raise DomainError(f"expected {n} cutoffs, got {p.size}")
    order = stable_order(p) if order is None else _check_tiebreak(order, p)
    ps = p[order]
    g = params.gamma[order]

    starts = np.flatnonzero(np.r_[True, ps[1:] != ps[:-1]])
    ends = np.r_[starts[1:], n]
    levels = ps[starts]
    upper = np.r_[levels[1:], 1.0]

    group_sum = np.array([math.fsum(g[a:b]) for a, b in zip(starts, ends)])
    S = np.cumsum(group_sum)
    band = (upper - levels) / S
    band_sq = 0.5 * (upper * upper - levels * levels) / S
    # suffix sums over groups at or above each group
    R = np.cumsum(band[::-1])[::-1]
    R_sq = np.cumsum(band_sq[::-1])[::-1]

    group_of = np.repeat(np.arange(starts.size), ends - starts)
    D = np.empty(n)
    L = np.empty(n)
    D[order] = g * R[group_of]
    L[order] = g * R_sq[group_of]
    # a school at cutoff 1 sits in an empty band
    D[p == 1.0] = 0.0
    L[p == 1.0] = 0.0
    D.setflags(write=False)
    L.setflags(write=False)
    return DemandResult(D=D, L=L, unassigned_mass=float(ps[0]))


def demand_via_matrix(params: MarketParams, p) -> np.ndarray:
    """``A p + gamma / Gamma`` in sorted coordinates, mapped back to original order."""
    p = as_cutoffs(p)
    order = stable_order(p)
    A = build_A(params, order).A
    g = params.gamma[order]
    out = np.empty(p.size)
    out[order] = A @ p[order] + g / params.total_gamma
    return out


def verify_equilibrium(params: MarketParams, p, tol: float = 1e-10) -> EquilibriumCertificate:
    """Measure how far ``p`` is from satisfying the equilibrium conditions.

    The clearing gap compares total enrollment with ``min(1, sum q)``; it is
    reported as ``inf`` when the other violations already exceed ``tol``,
    since the identity only holds at an equilibrium.
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    p = as_cutoffs(p)
    D = demand(params, p).D
    excess = D - params.q
    cap = max(0.0, float(np.max(excess)))
    active = p > 0
    stab = float(np.max(np.abs(excess[active]))) if np.any(active) else 0.0
    ncp = abs(float(np.dot(-excess, p)))
    if max(cap, stab, ncp) <= tol:
        gap = abs(math.fsum(D) - min(1.0, math.fsum(params.q)))
    else:
        gap = math.inf
    return EquilibriumCertificate(cap, stab, ncp, gap)


def coordinate_root(params: MarketParams, p, c: int, target: float) -> float | None:
    """Cutoff for school ``c`` at which its demand equals ``target``, others fixed.

    With the other cutoffs held, ``D_c`` is continuous, piecewise linear and
    strictly decreasing in ``p_c`` on ``[0, 1]``, with kinks only where ``p_c``
    crosses another school's cutoff. Demand is evaluated at those kinks and
    the root is read off the bracketing linear piece. Returns ``None`` when
    ``target`` exceeds the demand at ``p_c = 0``.
    """
    p = as_cutoffs(p).copy()
    others = np.delete(p, c)
    knots = np.unique(np.r_[0.0, others[(others > 0) & (others < 1)], 1.0])

    def at(x: float) -> float:
        p[c] = x
        return float(demand(params, p).D[c])

    values = np.array([at(x) for x in knots])
    if target > values[0]:
        return None
    if target <= 0.0:
        return 1.0
    # values are nonincreasing along knots
    k = int(np.searchsorted(-values, -target, side="left"))
    if values[k] == target:
        return float(knots[k])
    lo, hi = knots[k - 1], knots[k]
    v_lo, v_hi = values[k - 1], values[k]
    return float(lo + (v_lo - target) * (hi - lo) / (v_lo - v_hi))
