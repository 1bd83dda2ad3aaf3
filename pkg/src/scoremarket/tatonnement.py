"""Iterative cutoff dynamics: simultaneous and deferred-acceptance tatonnement."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import IO

import numpy as np

from .demand import as_cutoffs, coordinate_root, demand
from .errors import DomainError
from .market import CutoffVector, MarketParams

__all__ = [
    "TatonnementConfig",
    "Trajectory",
    "step_sizes",
    "simultaneous_tatonnement",
    "da_tatonnement",
]


@dataclass(frozen=True)
class TatonnementConfig:
    p0: np.ndarray
    alpha: float = 0.2
    beta: float = 0.01
    epsilon: float = 1e-8
    max_iters: int = 1000

    def __post_init__(self):
        if not self.alpha > 0:
            raise DomainError(f"alpha must be positive, got {self.alpha}")
        if not 0 <= self.beta < 1:
            raise DomainError(f"beta must lie in [0, 1), got {self.beta}")
        if not self.epsilon > 0:
            raise DomainError(f"epsilon must be positive, got {self.epsilon}")
        if int(self.max_iters) < 1:
            raise DomainError(f"max_iters must be at least 1, got {self.max_iters}")
        p0 = as_cutoffs(self.p0)
        p0.setflags(write=False)
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "max_iters", int(self.max_iters))


@dataclass(frozen=True)
class Trajectory:
    """Recorded iterates ``(k, p^(k), Z(p^(k)))`` and the terminal cutoffs."""

    iterates: tuple
    converged: bool
    final_p: CutoffVector

    def __len__(self) -> int:
        return len(self.iterates)

    def cutoffs(self) -> np.ndarray:
        return np.array([p for _, p, _ in self.iterates])

    def write_csv(self, fh: IO[str], labels=None) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iter", "school_id", "p", "Z"])
        for k, p, Z in self.iterates:
            for c in range(p.size):
                school = labels[c] if labels is not None else c
                writer.writerow([k, school, repr(float(p[c])), repr(float(Z[c]))])


def step_sizes(alpha: float, beta: float, count: int) -> np.ndarray:
    """The decreasing schedule ``alpha / (k + 1)**beta`` for ``k = 0 .. count-1``."""
    k = np.arange(count, dtype=float)
    return alpha / (k + 1.0) ** beta


def simultaneous_tatonnement(params: MarketParams, config: TatonnementConfig) -> Trajectory:
    """Move every cutoff along its excess demand with a decreasing step.

    The update is clamped to ``[0, 1]``; iteration stops once no cutoff
    moves by ``epsilon`` or more, or after ``max_iters`` demand evaluations.
    """
    p = np.array(config.p0)
    iterates = []
    converged = False
    for k in range(config.max_iters):
        Z = demand(params, p).D - params.q
        iterates.append((k, p.copy(), Z))
        step = config.alpha / (k + 1.0) ** config.beta
        nxt = np.clip(p + step * Z, 0.0, 1.0)
        moved = float(np.max(np.abs(nxt - p)))
        p = nxt
        if moved < config.epsilon:
            converged = True
            break
    return Trajectory(iterates=tuple(iterates), converged=converged, final_p=CutoffVector(p))


def da_tatonnement(params: MarketParams, p0, max_rounds: int = 10_000, tol: float = 1e-12) -> Trajectory:
    """Successive best-response process mirroring deferred acceptance.

    Each round, every school whose demand differs from its capacity jumps
    to the cutoff that would clear it given the others' current cutoffs,
    or to zero if even a zero cutoff leaves it short. From all-zero cutoffs
    this traces student-proposing DA, from all-one cutoffs school-proposing DA.
    """
    p = as_cutoffs(p0)
    iterates = []
    converged = False
    for k in range(max_rounds):
        D = demand(params, p).D
        Z = D - params.q
        iterates.append((k, p.copy(), Z))
        nxt = p.copy()
        for c in np.flatnonzero(Z != 0):
            root = coordinate_root(params, p, int(c), float(params.q[c]))
            nxt[c] = 0.0 if root is None else root
        if np.max(np.abs(nxt - p)) <= tol:
            converged = True
            p = nxt
            break
        p = nxt
    return Trajectory(iterates=tuple(iterates), converged=converged, final_p=CutoffVector(p))
