"""Finite student samples, deferred acceptance and decentralized choice.

Preference lists are drawn by perturbing each school's log-weight with
independent standard Gumbel noise and sorting descending. The first entry
is then an MNL draw over all schools, and each later entry is an MNL draw
over the schools not yet listed, which is the exploded-logit model.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import IO

import numpy as np

from .demand import as_cutoffs
from .errors import DomainError
from .market import MarketParams

__all__ = [
    "UNASSIGNED",
    "StudentSample",
    "MatchingResult",
    "sample_students",
    "scaled_capacities",
    "student_proposing_da",
    "school_proposing_da",
    "decentralized_choice",
    "blocking_pairs",
]

UNASSIGNED = -1


@dataclass(frozen=True)
class StudentSample:
    scores: np.ndarray
    pref_lists: np.ndarray
    seed: int | None

    @property
    def n_students(self) -> int:
        return self.scores.size

    @property
    def n_schools(self) -> int:
        return self.pref_lists.shape[1]

    def ranks(self) -> np.ndarray:
        """``ranks[s, c]`` is the position of school ``c`` on student ``s``'s list."""
        r = np.empty_like(self.pref_lists)
        rows = np.arange(self.n_students)[:, None]
        r[rows, self.pref_lists] = np.arange(self.n_schools)[None, :]
        return r


@dataclass(frozen=True)
class MatchingResult:
    assignment: np.ndarray
    implied_cutoffs: np.ndarray
    fill_counts: np.ndarray
    rounds: int = 0

    def write_csv(self, fh: IO[str], sample: StudentSample, labels=None) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["student_id", "score", "pref_list", "assigned_school"])
        for s in range(sample.n_students):
            prefs = sample.pref_lists[s]
            if labels is not None:
                prefs = [labels[c] for c in prefs]
            a = int(self.assignment[s])
            assigned = "" if a == UNASSIGNED else (labels[a] if labels is not None else a)
            writer.writerow([s, repr(float(sample.scores[s])), " ".join(map(str, prefs)), assigned])


def sample_students(params: MarketParams, n: int, seed: int | None = None) -> StudentSample:
    """Draw ``n`` students: uniform scores and MNL preference lists."""
    if n < 1:
        raise DomainError(f"need at least one student, got {n}")
    rng = np.random.default_rng(seed)
    scores = rng.random(n)
    while np.unique(scores).size < n:
        _, first = np.unique(scores, return_index=True)
        dup = np.setdiff1d(np.arange(n), first)
        scores[dup] = rng.random(dup.size)
    utility = params.delta[None, :] + rng.gumbel(size=(n, params.n_schools))
    prefs = np.argsort(-utility, axis=1, kind="stable")
    scores.setflags(write=False)
    prefs.setflags(write=False)
    return StudentSample(scores=scores, pref_lists=prefs, seed=seed)


def scaled_capacities(params: MarketParams, n: int) -> np.ndarray:
    """Seats per school for ``n`` students, ``floor(q_c * n)``."""
    return np.floor(params.q * n + 1e-9).astype(int)


def _result(assignment: np.ndarray, scores: np.ndarray, n_schools: int, rounds: int) -> MatchingResult:
    fill = np.bincount(assignment[assignment >= 0], minlength=n_schools)
    cut = np.ones(n_schools)
    placed = assignment >= 0
    np.minimum.at(cut, assignment[placed], scores[placed])
    return MatchingResult(assignment=assignment, implied_cutoffs=cut, fill_counts=fill, rounds=rounds)


def _check_caps(capacities, n_schools: int) -> np.ndarray:
    caps = np.asarray(capacities)
    if caps.shape != (n_schools,) or np.any(caps < 0) or np.any(caps != np.floor(caps)):
        raise DomainError("capacities must be one nonnegative integer per school")
    return caps.astype(int)


def student_proposing_da(sample: StudentSample, capacities) -> MatchingResult:
    """Students apply down their lists; schools hold their best applicants so far."""
    n, C = sample.n_students, sample.n_schools
    caps = _check_caps(capacities, C)
    scores = sample.scores
    prefs = sample.pref_lists
    nxt = np.zeros(n, dtype=int)
    held = [np.empty(0, dtype=int) for _ in range(C)]
    free = np.arange(n)
    rounds = 0
    while True:
        free = free[nxt[free] < C]
        if free.size == 0:
            break
        rounds += 1
        choice = prefs[free, nxt[free]]
        nxt[free] += 1
        rejected = []
        for c in np.unique(choice):
            pool = np.r_[held[c], free[choice == c]]
            if pool.size > caps[c]:
                ranked = pool[np.argsort(-scores[pool], kind="stable")]
                held[c] = ranked[: caps[c]]
                rejected.append(ranked[caps[c] :])
            else:
                held[c] = pool
        free = np.concatenate(rejected) if rejected else np.empty(0, dtype=int)
    assignment = np.full(n, UNASSIGNED)
    for c in range(C):
        assignment[held[c]] = c
    return _result(assignment, scores, C, rounds)


def school_proposing_da(sample: StudentSample, capacities) -> MatchingResult:
    """Schools offer seats to their best remaining candidates; students keep one offer.

    Each round a school proposes to the top ``capacity`` students still in its
    pool, each student rejects all but their favorite proposer, and rejected
    schools drop that student from their pools. Stops when a round has no rejections.
    """
    n, C = sample.n_students, sample.n_schools
    caps = _check_caps(capacities, C)
    scores = sample.scores
    ranks = sample.ranks()
    by_score = np.argsort(-scores, kind="stable")
    in_pool = np.ones((n, C), dtype=bool)
    rounds = 0
    while True:
        rounds += 1
        pooled = in_pool[by_score]
        offered_sorted = pooled & (np.cumsum(pooled, axis=0) <= caps[None, :])
        offers = np.empty_like(offered_sorted)
        offers[by_score] = offered_sorted
        masked = np.where(offers, ranks, C)
        best = np.argmin(masked, axis=1)
        has_offer = offers.any(axis=1)
        keep = np.zeros_like(offers)
        keep[np.flatnonzero(has_offer), best[has_offer]] = True
        rejections = offers & ~keep
        if not rejections.any():
            break
        in_pool &= ~rejections
    assignment = np.where(has_offer, best, UNASSIGNED)
    return _result(assignment, scores, C, rounds)


def decentralized_choice(sample: StudentSample, p) -> MatchingResult:
    """Each student enrolls at their favorite school among those whose cutoff they meet."""
    p = as_cutoffs(p)
    if p.size != sample.n_schools:
        raise DomainError(f"expected {sample.n_schools} cutoffs, got {p.size}")
    admitted = sample.scores[:, None] >= p[None, :]
    masked = np.where(admitted, sample.ranks(), sample.n_schools)
    best = np.argmin(masked, axis=1)
    assignment = np.where(admitted.any(axis=1), best, UNASSIGNED)
    return _result(assignment, sample.scores, sample.n_schools, 1)


def blocking_pairs(sample: StudentSample, capacities, assignment) -> list[tuple[int, int, str]]:
    """All ``(student, school, kind)`` blocking pairs of a matching.

    ``kind`` is ``"I"`` when the preferred school has an empty seat and
    ``"II"`` when it holds a student with a lower score. An over-capacity
    school is reported as ``(-1, school, "capacity")``.
    """
    caps = _check_caps(capacities, sample.n_schools)
    assignment = np.asarray(assignment)
    C = sample.n_schools
    fill = np.bincount(assignment[assignment >= 0], minlength=C)
    out = [(-1, int(c), "capacity") for c in np.flatnonzero(fill > caps)]
    lowest = np.full(C, np.inf)
    placed = assignment >= 0
    np.minimum.at(lowest, assignment[placed], sample.scores[placed])
    ranks = sample.ranks()
    for s in range(sample.n_students):
        a = assignment[s]
        limit = C if a == UNASSIGNED else ranks[s, a]
        for c in sample.pref_lists[s, :limit]:
            if fill[c] < caps[c]:
                out.append((s, int(c), "I"))
            elif lowest[c] < sample.scores[s]:
                out.append((s, int(c), "II"))
    return out
