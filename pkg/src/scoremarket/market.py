"""Market data model and the triangular structure matrices.

All closed forms below live in *sorted coordinates*: schools are re-indexed
so that some key (the cutoffs, or the competitiveness ratios gamma/q) is
nondecreasing. Public functions elsewhere in the package take and return
vectors in the caller's original school order; the permutation stored on a
:class:`CutoffVector` is what translates between the two.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

__all__ = [
    "MarketParams",
    "CutoffVector",
    "StructMatrices",
    "stable_order",
    "sort_by_competitiveness",
    "build_A",
    "build_T",
    "pallet_town",
]


def _frozen(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    if arr.size == 0:
        raise DomainError(f"{name} must be nonempty")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class MarketParams:
    """Exogenous description of a single-score MNL admissions market.

    ``gamma`` holds the preferability weights (``gamma = exp(delta)``) and ``q``
    the capacities as fractions of the unit student mass. The weights are not
    normalized; only their ratios matter to demand.
    """

    gamma: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        gamma = _frozen(self.gamma, "gamma")
        q = _frozen(self.q, "q")
        if gamma.shape != q.shape:
            raise DomainError(f"gamma has {gamma.size} entries but q has {q.size}")
        if not np.all(np.isfinite(gamma)) or np.any(gamma <= 0):
            raise DomainError("all gamma entries must be finite and positive")
        if not np.all(np.isfinite(q)) or np.any(q <= 0):
            raise DomainError("all capacities q must be finite and positive")
        total = float(np.sum(gamma))
        if not np.isfinite(total):
            raise DomainError("sum of gamma overflows")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "q", q)

    @classmethod
    def from_delta(cls, delta, q) -> MarketParams:
        return cls(np.exp(np.asarray(delta, dtype=float)), q)

    @property
    def n_schools(self) -> int:
        return self.gamma.size

    @property
    def total_gamma(self) -> float:
        return float(np.sum(self.gamma))

    @property
    def delta(self) -> np.ndarray:
        return np.log(self.gamma)

    @property
    def ratios(self) -> np.ndarray:
        """Competitiveness ratios ``gamma / q``."""
        return self.gamma / self.q

    def normalized(self) -> MarketParams:
        return MarketParams(self.gamma / self.total_gamma, self.q)


def stable_order(key) -> np.ndarray:
    """Permutation sorting ``key`` ascending, ties broken by original index."""
    return np.argsort(np.asarray(key, dtype=float), kind="stable")


@dataclass(frozen=True)
class CutoffVector:
    """Cutoffs in original school order plus the permutation sorting a key.

    ``perm[k]`` is the original index of the school in sorted position ``k``.
    By default the key is ``p`` itself.
    """

    p: np.ndarray
    perm: np.ndarray = field(default=None)

    def __post_init__(self):
        p = _frozen(self.p, "p")
        if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
            raise DomainError(f"cutoffs must lie in [0, 1], got {p.tolist()}")
        perm = stable_order(p) if self.perm is None else np.asarray(self.perm, dtype=int)
        if sorted(perm.tolist()) != list(range(p.size)):
            raise DomainError("perm is not a permutation of the school indices")
        perm = perm.copy()
        perm.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "perm", perm)

    @property
    def sorted(self) -> np.ndarray:
        return self.p[self.perm]

    def __len__(self) -> int:
        return self.p.size


@dataclass(frozen=True)
class StructMatrices:
    """The demand matrix ``A``, its closed-form inverse and the block ``T``.

    All three are expressed in the sorted coordinates given by ``order``.
    ``b_index`` is 1-based: the first sorted school with a positive
    equilibrium cutoff (``n + 1`` when every cutoff is zero).
    """

    order: np.ndarray
    A: np.ndarray
    A_inv: np.ndarray
    b_index: int
    T: np.ndarray


def sort_by_competitiveness(params: MarketParams) -> np.ndarray:
    """Permutation sorting the ratios ``gamma_c / q_c`` ascending (stable)."""
    return stable_order(params.ratios)


def _check_order(order, n: int) -> np.ndarray:
    order = np.asarray(order, dtype=int)
    if order.shape != (n,) or sorted(order.tolist()) != list(range(n)):
        raise DomainError("order must be a permutation of the school indices")
    return order


def build_T(params: MarketParams, order, b_index: int) -> np.ndarray:
    """Block of equilibrium demand sensitivities of zero-cutoff schools.

    Shape ``(b-1, n-b+1)``; row ``i`` is constant, ``-gamma_i / sum_{k<b} gamma_k``.
    """
    n = params.n_schools
    order = _check_order(order, n)
    if not 1 <= b_index <= n + 1:
        raise DomainError(f"b_index must lie in [1, {n + 1}], got {b_index}")
    g = params.gamma[order]
    head = g[: b_index - 1]
    if head.size == 0:
        return np.zeros((0, n))
    col = -head / np.sum(head)
    return np.repeat(col[:, None], n - b_index + 1, axis=1)


def build_A(params: MarketParams, order, b_index: int | None = None) -> StructMatrices:
    """Assemble ``A`` and ``A^{-1}`` from running prefix sums of sorted gamma.

    ``A`` is upper triangular with ``A_ii = -g_i / S_i`` and
    ``A_ij = g_i (1/S_{j-1} - 1/S_j)`` for ``i < j``, where ``S_k`` is the sum
    of the first ``k`` sorted weights. Its inverse has ``-S_i / g_i`` on the
    diagonal and ``-1`` everywhere above it.
    """
    n = params.n_schools
    order = _check_order(order, n)
    g = params.gamma[order]
    S = np.cumsum(g)
    inv_S = 1.0 / S
    # column factor (1/S_{j-1} - 1/S_j), j >= 2
    col = np.zeros(n)
    col[1:] = inv_S[:-1] - inv_S[1:]
    A = np.triu(np.outer(g, col), k=1)
    A[np.diag_indices(n)] = -g * inv_S
    A_inv = np.triu(-np.ones((n, n)), k=1)
    A_inv[np.diag_indices(n)] = -S / g
    if b_index is None:
        b_index = n + 1
    T = build_T(params, order, b_index)
    for arr in (A, A_inv, T):
        arr.setflags(write=False)
    order = order.copy()
    order.setflags(write=False)
    return StructMatrices(order=order, A=A, A_inv=A_inv, b_index=b_index, T=T)


def pallet_town(scale: float = 1.0) -> MarketParams:
    """The four-school worked example, ``gamma = scale * (2, 1, 3, 6) / 12``."""
    return MarketParams(np.array([2.0, 1.0, 3.0, 6.0]) * scale / 12.0, [0.3, 0.1, 0.2, 0.2])
