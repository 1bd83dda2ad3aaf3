"""Single-score admissions markets with multinomial-logit preferences."""

from __future__ import annotations

__version__ = "0.1.0"

from .demand import DemandResult, EquilibriumCertificate, demand, verify_equilibrium
from .equilibrium import EquilibriumSolution, solve
from .errors import (
    DataError,
    DegeneracyError,
    DomainError,
    InfeasibleTargetError,
    KnifeEdgeError,
    MarketError,
    NumericError,
)
from .inverse import MarketObservation, PreferabilityEstimate, invert
from .market import CutoffVector, MarketParams, pallet_town

__all__ = [
    "__version__",
    "CutoffVector",
    "DataError",
    "DegeneracyError",
    "DemandResult",
    "DomainError",
    "EquilibriumCertificate",
    "EquilibriumSolution",
    "InfeasibleTargetError",
    "KnifeEdgeError",
    "MarketError",
    "MarketObservation",
    "MarketParams",
    "NumericError",
    "PreferabilityEstimate",
    "demand",
    "invert",
    "pallet_town",
    "solve",
    "verify_equilibrium",
]
