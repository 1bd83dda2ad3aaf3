"""Inverse problem: preferability weights from observed cutoffs and enrollment.

Given cutoffs ``p`` and demand ``D`` the MNL weights are pinned down up to
scale. Sorting schools by cutoff, the most selective school's admits can go
anywhere, so its weight is its true yield ``D / (1 - p)`` (with weights
summing to one); every other weight then follows from the ones above it.
The recursion divides by small quantities when cutoffs bunch together, so
a Newton solve on the forward model is offered as a backstop.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import IO

import numpy as np

from .demand import as_cutoffs, coordinate_root, demand
from .errors import DataError, DegeneracyError, DomainError, InfeasibleTargetError
from .market import MarketParams, stable_order
from .statics import unconstrained_jacobians

__all__ = [
    "MarketObservation",
    "PreferabilityEstimate",
    "invert_recursion",
    "invert_rootfind",
    "invert",
    "demand_curve",
    "target_cutoff",
    "linear_target_cutoff",
    "CONSISTENCY_SLACK",
]

CONSISTENCY_SLACK = 1e-9
_DEGENERATE = 1e-12
# band widths divided by smaller weight sums overflow
_TINY_WEIGHT = 1e-280


@dataclass(frozen=True)
class MarketObservation:
    """Observed cutoffs and demand fractions, one entry per school.

    ``population`` converts fractions to head counts for reporting and
    ``reported_yield`` is carried through for display only (``nan`` if absent).
    """

    p_obs: np.ndarray
    D_obs: np.ndarray
    labels: tuple = field(default=None)
    population: float | None = None
    reported_yield: np.ndarray | None = None

    def __post_init__(self):
        p = np.array(self.p_obs, dtype=float).reshape(-1)
        D = np.array(self.D_obs, dtype=float).reshape(-1)
        if p.shape != D.shape or p.size == 0:
            raise DataError("p_obs and D_obs must be nonempty and of equal length")
        labels = tuple(str(i) for i in range(p.size)) if self.labels is None else tuple(self.labels)
        if len(labels) != p.size:
            raise DataError("one label per school is required")
        if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p >= 1):
            bad = labels[int(np.flatnonzero(~((p >= 0) & (p < 1)))[0])]
            raise DataError(f"observed cutoff of {bad} is outside [0, 1)")
        if not np.all(np.isfinite(D)) or np.any(D <= 0) or np.any(D > 1):
            bad = labels[int(np.flatnonzero(~((D > 0) & (D <= 1)))[0])]
            raise DataError(f"observed demand of {bad} is outside (0, 1]")
        total = math.fsum(D)
        if total > 1 + CONSISTENCY_SLACK:
            raise DataError(f"observed demand sums to {total!r} > 1")
        over = D - (1 - p)
        if np.any(over > CONSISTENCY_SLACK):
            i = int(np.argmax(over))
            raise DataError(
                f"{labels[i]} enrolls {float(D[i])!r} but only {float(1 - p[i])!r} of students clear its cutoff"
            )
        y = None
        if self.reported_yield is not None:
            y = np.array(self.reported_yield, dtype=float).reshape(-1)
            y.setflags(write=False)
        for arr in (p, D):
            arr.setflags(write=False)
        object.__setattr__(self, "p_obs", p)
        object.__setattr__(self, "D_obs", D)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "reported_yield", y)

    @property
    def n_schools(self) -> int:
        return self.p_obs.size

    @property
    def true_yield(self) -> np.ndarray:
        return self.D_obs / (1.0 - self.p_obs)

    def counts(self) -> np.ndarray | None:
        return None if self.population is None else self.D_obs * self.population

    def write_csv(self, fh: IO[str]) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["name", "cutoff", "demand_fraction", "demand_count"])
        counts = self.counts()
        for i, name in enumerate(self.labels):
            count = "" if counts is None else _fmt_count(counts[i])
            writer.writerow([name, repr(float(self.p_obs[i])), repr(float(self.D_obs[i])), count])

    @classmethod
    def read_csv(cls, fh: IO[str], population: float | None = None) -> MarketObservation:
        """Parse ``name, cutoff, demand_fraction[, demand_count][, yield]`` rows.

        Either a fraction or a count column must be present; counts are
        normalized by ``population`` or, failing that, by their total.
        """
        reader = csv.DictReader(fh)
        cols = set(reader.fieldnames or ())
        if not {"name", "cutoff"} <= cols or not ({"demand_fraction", "demand_count"} & cols):
            raise DataError("observation file needs name, cutoff and demand_fraction or demand_count")
        names, p, frac, count, yld = [], [], [], [], []
        for line, row in enumerate(reader, start=2):
            try:
                names.append(row["name"])
                p.append(float(row["cutoff"]))
                f = row.get("demand_fraction") or ""
                k = row.get("demand_count") or ""
                frac.append(float(f) if f.strip() else math.nan)
                count.append(float(k) if k.strip() else math.nan)
                y = row.get("yield") or ""
                yld.append(float(y) if y.strip() else math.nan)
            except (TypeError, ValueError) as exc:
                raise DataError(f"line {line}: {exc}") from None
        frac = np.array(frac)
        count = np.array(count)
        if np.all(np.isfinite(frac)):
            D = frac
            if population is None and np.all(np.isfinite(count)):
                population = math.fsum(count)
        elif np.all(np.isfinite(count)):
            if population is None:
                population = math.fsum(count)
            D = count / population
        else:
            raise DataError("every row needs a demand fraction or a demand count")
        return cls(p, D, tuple(names), population, np.array(yld))


def _fmt_count(x: float) -> str:
    r = round(x)
    return str(int(r)) if abs(x - r) < 1e-6 else repr(float(x))


@dataclass(frozen=True)
class PreferabilityEstimate:
    gamma: np.ndarray
    method: str
    residual: float
    true_yield: np.ndarray
    converged: bool = True
    iterations: int = 0

    def ranking(self) -> np.ndarray:
        """School indices by descending gamma (ties by index)."""
        return np.argsort(-self.gamma, kind="stable")

    def write_csv(self, fh: IO[str], obs: MarketObservation) -> None:
        """Ranked table: rank, name, demand_count, cutoff, yield, true_yield, gamma."""
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["rank", "name", "demand_count", "cutoff", "yield", "true_yield", "gamma", "demand_fraction"]
        )
        counts = obs.counts()
        for r, i in enumerate(self.ranking(), start=1):
            y = obs.reported_yield[i] if obs.reported_yield is not None else math.nan
            writer.writerow(
                [
                    r,
                    obs.labels[i],
                    "" if counts is None else _fmt_count(counts[i]),
                    repr(float(obs.p_obs[i])),
                    "" if not np.isfinite(y) else repr(float(y)),
                    repr(float(self.true_yield[i])),
                    repr(float(self.gamma[i])),
                    repr(float(obs.D_obs[i])),
                ]
            )


class _Neumaier:
    """Compensated running sum."""

    def __init__(self):
        self.total = 0.0
        self.comp = 0.0

    def add(self, x: float) -> None:
        t = self.total + x
        if abs(self.total) >= abs(x):
            self.comp += (self.total - t) + x
        else:
            self.comp += (x - t) + self.total
        self.total = t

    @property
    def value(self) -> float:
        return self.total + self.comp


def _residual(gamma: np.ndarray, obs: MarketObservation) -> float:
    D = demand(MarketParams(gamma, np.ones_like(gamma)), obs.p_obs).D
    return float(np.max(np.abs(D - obs.D_obs)))


def invert_recursion(obs: MarketObservation) -> PreferabilityEstimate:
    """Closed-form weights by the top-down recursion over cutoff-sorted schools.

    Tied cutoffs need no special handling: the bands between tied schools
    have zero width and drop out of every denominator.
    """
    order = stable_order(obs.p_obs)
    ps = obs.p_obs[order]
    Ds = obs.D_obs[order]
    n = ps.size
    width = np.r_[ps[1:], 1.0] - ps
    g = np.empty(n)
    above = _Neumaier()  # sum of weights of schools above the current one
    denom = _Neumaier()  # sum_{d>=c} width_d / S_d
    for c in range(n - 1, -1, -1):
        S_c = 1.0 - above.value
        name = obs.labels[order[c]]
        if S_c < _DEGENERATE:
            raise DegeneracyError(
                f"weights above {name} already exhaust the unit total (remaining {S_c:.3e})", school=name
            )
        denom.add(width[c] / S_c)
        if denom.value < _DEGENERATE:
            raise DegeneracyError(f"vanishing denominator {denom.value:.3e} at {name}", school=name)
        g[c] = Ds[c] / denom.value
        if not g[c] > 0:
            raise DegeneracyError(f"nonpositive weight {g[c]!r} for {name}", school=name)
        above.add(g[c])
    gamma = np.empty(n)
    gamma[order] = g / math.fsum(g)
    return PreferabilityEstimate(
        gamma=gamma,
        method="recursion",
        residual=_residual(gamma, obs),
        true_yield=obs.true_yield,
    )


def invert_rootfind(
    obs: MarketObservation,
    start: np.ndarray | None = None,
    max_iter: int = 100,
    tol: float = 1e-14,
) -> PreferabilityEstimate:
    """Solve ``D(gamma, p_obs) = D_obs`` by damped Newton in log-weights.

    Demand is homogeneous of degree zero in ``gamma``, so the Newton system
    is augmented with the normalization ``sum(gamma) = 1`` and solved in the
    least-squares sense. Starts from the recursion when it succeeds, else
    from uniform weights. Non-convergence is reported, not raised.
    """
    n = obs.n_schools
    if start is None:
        try:
            start = invert_recursion(obs).gamma
        except DegeneracyError:
            start = np.full(n, 1.0 / n)
    gamma = np.asarray(start, dtype=float) / math.fsum(start)
    ones = np.ones(n)

    def resid(g):
        if not np.all(np.isfinite(g)) or np.any(g < _TINY_WEIGHT):
            # an exponent step over- or underflowed; the line search backs off
            return np.full(n + 1, np.inf)
        D = demand(MarketParams(g, ones), obs.p_obs).D
        return np.r_[D - obs.D_obs, math.fsum(g) - 1.0]

    r = resid(gamma)
    best = float(np.max(np.abs(r[:-1])))
    it = 0
    for it in range(1, max_iter + 1):
        if best < tol:
            break
        J = unconstrained_jacobians(MarketParams(gamma, ones), obs.p_obs).J_gamma_D * gamma[None, :]
        M = np.vstack([J, gamma[None, :]])
        step = np.linalg.lstsq(M, -r, rcond=None)[0]
        lam = 1.0
        norm = float(np.linalg.norm(r))
        while lam > 1e-10:
            trial = gamma * np.exp(lam * step)
            r_trial = resid(trial)
            if np.linalg.norm(r_trial) < norm:
                break
            lam *= 0.5
        else:
            break
        gamma, r = trial, r_trial
        best = float(np.max(np.abs(r[:-1])))
    gamma = gamma / math.fsum(gamma)
    residual = _residual(gamma, obs)
    return PreferabilityEstimate(
        gamma=gamma,
        method="root-finder",
        residual=residual,
        true_yield=obs.true_yield,
        converged=residual < 1e-9,
        iterations=it,
    )


def invert(obs: MarketObservation, method: str = "auto") -> PreferabilityEstimate:
    """Dispatch on ``method``: ``recursion``, ``root-finder`` or ``auto``.

    ``auto`` runs the recursion and polishes with the root-finder when the
    recursion fails or leaves a residual above 1e-9.
    """
    if method == "recursion":
        return invert_recursion(obs)
    if method == "root-finder":
        return invert_rootfind(obs)
    if method != "auto":
        raise DomainError(f"unknown inversion method {method!r}")
    try:
        est = invert_recursion(obs)
    except DegeneracyError:
        return invert_rootfind(obs)
    if est.residual < 1e-9:
        return est
    polished = invert_rootfind(obs, start=est.gamma)
    return polished if polished.residual < est.residual else est


def _params(gamma) -> MarketParams:
    gamma = np.asarray(gamma, dtype=float)
    return MarketParams(gamma, np.ones_like(gamma))


def demand_curve(gamma, p_others, school_c: int, grid) -> np.ndarray:
    """Demand of ``school_c`` along ``grid`` with every other cutoff held fixed.

    Returns an ``(len(grid), 2)`` array of ``(p_c, D_c)`` rows.
    """
    params = _params(gamma)
    p = as_cutoffs(p_others).copy()
    grid = as_cutoffs(grid)
    out = np.empty((grid.size, 2))
    for k, x in enumerate(grid):
        p[school_c] = x
        out[k] = x, demand(params, p).D[school_c]
    return out


def target_cutoff(gamma, p_others, school_c: int, target_D: float) -> float:
    """Cutoff at which ``school_c`` enrolls exactly ``target_D``, others fixed."""
    if not target_D > 0:
        raise DomainError(f"target demand must be positive, got {target_D}")
    params = _params(gamma)
    root = coordinate_root(params, p_others, school_c, float(target_D))
    if root is None:
        p = as_cutoffs(p_others).copy()
        p[school_c] = 0.0
        bound = float(demand(params, p).D[school_c])
        raise InfeasibleTargetError(
            f"target {target_D!r} exceeds the demand {bound!r} reachable at a zero cutoff", bound=bound
        )
    return root


def linear_target_cutoff(p_c: float, D_c: float, target_D: float) -> float:
    """Cutoff from holding true yield fixed: the chord through ``(p_c, D_c)`` and ``(1, 0)``."""
    return 1.0 - target_D / D_c * (1.0 - p_c)
