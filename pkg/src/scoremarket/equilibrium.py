"""Closed-form market equilibrium.

At equilibrium the cutoffs are ordered like the competitiveness ratios
``gamma_c / q_c``. Sorting by that ratio makes the demand system
``A p + gamma / Gamma = q`` triangular, so the unclipped solution
``p_bar = A^{-1} (q - gamma / Gamma)`` is a single suffix-sum pass and the
equilibrium is its positive part.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .demand import DemandResult, demand, verify_equilibrium
from .errors import DomainError
from .market import CutoffVector, MarketParams, build_A, build_T, sort_by_competitiveness

__all__ = ["EquilibriumSolution", "solve", "equilibrium_demand", "adjacent_gap", "unclipped_cutoffs"]


@dataclass(frozen=True)
class EquilibriumSolution:
    """Equilibrium cutoffs and demand.

    ``p_star`` is in original order, with ``p_star.perm`` sorting the
    competitiveness ratios. ``p_bar`` is the unclipped pre-image in those
    sorted coordinates. ``b_index`` is 1-based in sorted order.
    """

    params: MarketParams
    p_star: CutoffVector
    p_bar: np.ndarray
    b_index: int
    D_star: DemandResult

    @property
    def order(self) -> np.ndarray:
        return self.p_star.perm

    @property
    def p(self) -> np.ndarray:
        return self.p_star.p


def unclipped_cutoffs(params: MarketParams, order=None) -> np.ndarray:
    """``A^{-1} (q - gamma/Gamma)`` in the sorted coordinates of ``order``.

    Row ``i`` of the inverse is ``-S_i/g_i`` on the diagonal and ``-1`` to its
    right, so ``p_bar_i = -(S_i/g_i) x_i - sum_{j>i} x_j``.
    """
    if order is None:
        order = sort_by_competitiveness(params)
    g = params.gamma[order]
    x = params.q[order] - g / params.total_gamma
    S = np.cumsum(g)
    tail = np.zeros_like(x)
    tail[:-1] = np.cumsum(x[::-1])[::-1][1:]
    return -(S / g) * x - tail


def solve(params: MarketParams) -> EquilibriumSolution:
    order = sort_by_competitiveness(params)
    p_bar = unclipped_cutoffs(params, order)
    p_bar.setflags(write=False)
    clipped = np.clip(p_bar, 0.0, 1.0)
    p = np.empty_like(clipped)
    p[order] = clipped
    positive = np.flatnonzero(p_bar > 0)
    b_index = int(positive[0]) + 1 if positive.size else params.n_schools + 1
    p_star = CutoffVector(p, perm=order)
    return EquilibriumSolution(
        params=params,
        p_star=p_star,
        p_bar=p_bar,
        b_index=b_index,
        D_star=demand(params, p),
    )


def structure(solution: EquilibriumSolution):
    """Structure matrices in ratio-sorted coordinates, with the solution's ``b``."""
    return build_A(solution.params, solution.order, solution.b_index)


def equilibrium_demand(params: MarketParams, solution: EquilibriumSolution) -> np.ndarray:
    """Equilibrium demand from the block formula, in original order.

    Schools with a positive cutoff enroll exactly ``q_c``; the zero-cutoff
    schools split what is left in proportion to ``gamma``.
    """
    order = solution.order
    b = solution.b_index
    g = params.gamma[order]
    q = params.q[order]
    Gamma = params.total_gamma
    D = q.copy()
    if b > 1:
        T = build_T(params, order, b)
        head = slice(0, b - 1)
        spill = math.fsum(q[b - 1 :] - g[b - 1 :] / Gamma)
        col = T[:, 0] if T.shape[1] else -g[head] / np.sum(g[head])
        D[head] = col * spill + g[head] / Gamma
    out = np.empty_like(D)
    out[order] = D
    return out


def adjacent_gap(params: MarketParams, c: int, order=None) -> float:
    """``p_bar_{c+1} - p_bar_c`` for 1-based sorted position ``c``.

    Computed as ``(sum_{j<=c} g_j)(q_c/g_c - q_{c+1}/g_{c+1})`` and checked
    against the difference of the unclipped cutoffs.
    """
    n = params.n_schools
    if not 1 <= c < n:
        raise DomainError(f"c must lie in [1, {n - 1}], got {c}")
    if order is None:
        order = sort_by_competitiveness(params)
    g = params.gamma[order]
    q = params.q[order]
    i = c - 1
    gap = float(np.sum(g[: i + 1]) * (q[i] / g[i] - q[i + 1] / g[i + 1]))
    p_bar = unclipped_cutoffs(params, order)
    direct = float(p_bar[i + 1] - p_bar[i])
    scale = max(1.0, abs(direct), float(np.sum(g[: i + 1]) * q[i] / g[i]))
    assert abs(gap - direct) <= 1e-12 * scale, (gap, direct)
    return gap


def certificate(solution: EquilibriumSolution, tol: float = 1e-10):
    return verify_equilibrium(solution.params, solution.p, tol)
