"""Comparative statics: analytic Jacobians and a finite-difference oracle.

Unconstrained Jacobians hold the cutoff vector fixed (a decentralized
market); equilibrium Jacobians differentiate the closed-form equilibrium.
Every matrix is returned in original school order, rows indexing the
responding school and columns the perturbed one.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from typing import IO, Callable

import numpy as np

from .demand import as_cutoffs, demand
from .equilibrium import solve, unclipped_cutoffs
from .errors import KnifeEdgeError
from .market import MarketParams, build_A, sort_by_competitiveness, stable_order

__all__ = [
    "JacobianSet",
    "unconstrained_jacobians",
    "equilibrium_jacobians",
    "central_difference",
    "fd_unconstrained",
    "fd_equilibrium",
    "fd_equilibrium_appeal",
    "cutoff_kink_distance",
    "equilibrium_kink_distance",
    "TIE_TOL",
    "KNIFE_EDGE_TOL",
]

TIE_TOL = 1e-9
KNIFE_EDGE_TOL = 1e-9


@dataclass(frozen=True)
class JacobianSet:
    J_p_D: np.ndarray | None = None
    J_p_L: np.ndarray | None = None
    J_gamma_D: np.ndarray | None = None
    J_gamma_L: np.ndarray | None = None
    J_gamma_phat: np.ndarray | None = None
    J_gamma_D_eq: np.ndarray | None = None
    J_q_phat: np.ndarray | None = None
    J_q_D_eq: np.ndarray | None = None
    has_ties: bool = False

    def matrices(self) -> dict[str, np.ndarray]:
        return {
            f.name: getattr(self, f.name)
            for f in fields(self)
            if f.name.startswith("J_") and getattr(self, f.name) is not None
        }

    def merged(self, other: JacobianSet) -> JacobianSet:
        kw = self.matrices()
        kw.update(other.matrices())
        return JacobianSet(**kw, has_ties=self.has_ties or other.has_ties)

    def write_csv(self, fh: IO[str], labels=None) -> None:
        """Long format: one ``(matrix, row_school, col_school, value)`` per entry."""
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["matrix", "row_school", "col_school", "value"])
        for name, M in self.matrices().items():
            n = M.shape[0]
            names = labels if labels is not None else list(range(n))
            for i in range(n):
                for j in range(n):
                    writer.writerow([name, names[i], names[j], repr(float(M[i, j]))])


def _unsort(M_sorted: np.ndarray, order: np.ndarray) -> np.ndarray:
    out = np.empty_like(M_sorted)
    out[np.ix_(order, order)] = M_sorted
    return out


def _gamma_jacobian(g: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """d/dg of ``g_c * sum_{d>=c} weights_d / S_d`` in sorted coordinates.

    ``weights`` are the band masses (cutoff gaps for demand, half the gaps
    of squared cutoffs for appeal).
    """
    n = g.size
    S = np.cumsum(g)
    R = np.cumsum((weights / S)[::-1])[::-1]
    R2 = np.cumsum((weights / S**2)[::-1])[::-1]
    rows = np.arange(n)[:, None]
    cols = np.arange(n)[None, :]
    start = np.maximum(rows, cols)
    J = -g[:, None] * R2[start]
    J[np.diag_indices(n)] += R
    return J


def unconstrained_jacobians(params: MarketParams, p) -> JacobianSet:
    """Sensitivities of demand and appeal to cutoffs and to preferability.

    When two cutoffs lie within ``TIE_TOL`` of each other the matrices are
    those of the stable tie-break piece and ``has_ties`` is set; the true
    subdifferential is the convex hull over tie orderings.
    """
    p = as_cutoffs(p)
    order = stable_order(p)
    ps = p[order]
    g = params.gamma[order]
    A = build_A(params, order).A
    upper = np.r_[ps[1:], 1.0]
    J_gD = _gamma_jacobian(g, upper - ps)
    J_gL = _gamma_jacobian(g, 0.5 * (upper**2 - ps**2))
    ties = bool(np.any(np.diff(ps) <= TIE_TOL))
    return JacobianSet(
        J_p_D=_unsort(A, order),
        J_p_L=_unsort(A * ps[None, :], order),
        J_gamma_D=_unsort(J_gD, order),
        J_gamma_L=_unsort(J_gL, order),
        has_ties=ties,
    )


def equilibrium_jacobians(params: MarketParams) -> JacobianSet:
    """Sensitivities of the equilibrium cutoffs and demand to ``gamma`` and ``q``.

    Raises :class:`KnifeEdgeError` when some unclipped cutoff is within
    ``KNIFE_EDGE_TOL`` of zero, where these derivatives do not exist.
    """
    order = sort_by_competitiveness(params)
    p_bar = unclipped_cutoffs(params, order)
    near = np.flatnonzero(np.abs(p_bar) < KNIFE_EDGE_TOL)
    if near.size:
        school = int(order[near[0]])
        raise KnifeEdgeError(
            f"school {school} has unclipped equilibrium cutoff {p_bar[near[0]]:.3e}; "
            "equilibrium derivatives are undefined there",
            school=school,
        )
    n = params.n_schools
    g = params.gamma[order]
    q = params.q[order]
    S = np.cumsum(g)
    S_before = S - g
    pos = p_bar > 0
    positive = np.flatnonzero(pos)
    b = int(positive[0]) + 1 if positive.size else n + 1
    A_inv = build_A(params, order, b).A_inv

    J_gp = np.zeros((n, n))
    for c in positive:
        J_gp[c, :c] = -q[c] / g[c]
        J_gp[c, c] = q[c] * S_before[c] / g[c] ** 2

    J_gD = np.zeros((n, n))
    J_qD = np.zeros((n, n))
    if b > 1:
        head = slice(0, b - 1)
        B = S[b - 2]
        rest = 1.0 - float(np.sum(q[b - 1 :]))
        # zero-cutoff schools enroll g_c * rest / B; only weights inside B matter
        J_gD[head, head] = -np.outer(g[head], np.ones(b - 1)) * rest / B**2
        J_gD[head, head][np.diag_indices(b - 1)] += rest / B
        J_qD[head, b - 1 :] = -(g[head] / B)[:, None]
    J_qD[b - 1 :, b - 1 :] = np.eye(n - b + 1)

    J_qp = np.where(pos[:, None], A_inv, 0.0)
    return JacobianSet(
        J_gamma_phat=_unsort(J_gp, order),
        J_gamma_D_eq=_unsort(J_gD, order),
        J_q_phat=_unsort(J_qp, order),
        J_q_D_eq=_unsort(J_qD, order),
    )


def central_difference(f: Callable[[np.ndarray], np.ndarray], x, rel_step: float = 1e-6) -> np.ndarray:
    """Jacobian of ``f`` at ``x`` by central differences, ``h = rel_step * max(1, |x_j|)``."""
    x = np.array(x, dtype=float)
    cols = []
    for j in range(x.size):
        h = rel_step * max(1.0, abs(x[j]))
        up = x.copy()
        dn = x.copy()
        up[j] += h
        dn[j] -= h
        cols.append((np.asarray(f(up)) - np.asarray(f(dn))) / (2 * h))
    return np.column_stack(cols)


def cutoff_kink_distance(p) -> float:
    """Distance from ``p`` to the nearest kink of the demand surface.

    Kinks are ties between cutoffs and the boundary of ``[0, 1]``.
    """
    p = np.sort(as_cutoffs(p))
    gaps = np.r_[np.diff(p), p[0], 1.0 - p[-1]]
    return float(np.min(gaps))


def equilibrium_kink_distance(params: MarketParams) -> float:
    """Smallest of ``|p_bar_c|`` and the unclipped gaps between ratio-adjacent schools."""
    order = sort_by_competitiveness(params)
    p_bar = unclipped_cutoffs(params, order)
    gaps = np.diff(p_bar)
    return float(np.min(np.r_[np.abs(p_bar), gaps]))


def fd_unconstrained(params: MarketParams, p, rel_step: float = 1e-6) -> JacobianSet:
    p = as_cutoffs(p)
    gamma = params.gamma

    def by_p(field):
        return lambda x: getattr(demand(params, x), field)

    def by_gamma(field):
        return lambda x: getattr(demand(MarketParams(x, params.q), p), field)

    return JacobianSet(
        J_p_D=central_difference(by_p("D"), p, rel_step),
        J_p_L=central_difference(by_p("L"), p, rel_step),
        J_gamma_D=central_difference(by_gamma("D"), gamma, rel_step),
        J_gamma_L=central_difference(by_gamma("L"), gamma, rel_step),
    )


def fd_equilibrium(params: MarketParams, rel_step: float = 1e-6) -> JacobianSet:
    def cut_g(x):
        return solve(MarketParams(x, params.q)).p

    def dem_g(x):
        return solve(MarketParams(x, params.q)).D_star.D

    def cut_q(x):
        return solve(MarketParams(params.gamma, x)).p

    def dem_q(x):
        return solve(MarketParams(params.gamma, x)).D_star.D

    return JacobianSet(
        J_gamma_phat=central_difference(cut_g, params.gamma, rel_step),
        J_gamma_D_eq=central_difference(dem_g, params.gamma, rel_step),
        J_q_phat=central_difference(cut_q, params.q, rel_step),
        J_q_D_eq=central_difference(dem_q, params.q, rel_step),
    )


def fd_equilibrium_appeal(params: MarketParams, rel_step: float = 1e-6) -> np.ndarray:
    """Numerical Jacobian of equilibrium appeal in ``gamma``; no closed form is offered."""
    return central_difference(lambda x: solve(MarketParams(x, params.q)).D_star.L, params.gamma, rel_step)
