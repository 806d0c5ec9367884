"""Quantum-limited spectrophotometry of bacterial growth."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    DivergentInformationError,
    ModelDomainError,
    SchemaError,
    TruncationUnderflowError,
)
from .growth import (  # noqa: E402
    BeerLambert,
    CubicDecayParams,
    GompertzParams,
    absorbance_to_transmissivity,
    gompertz_absorbance,
    transmissivity_to_absorbance,
)
from .metrology import EnergyBudget, ProbeSource, SourceKind, TruncatedGaussian  # noqa: E402

__all__ = [
    "BeerLambert",
    "CubicDecayParams",
    "DivergentInformationError",
    "EnergyBudget",
    "GompertzParams",
    "ModelDomainError",
    "ProbeSource",
    "SchemaError",
    "SourceKind",
    "TruncatedGaussian",
    "TruncationUnderflowError",
    "absorbance_to_transmissivity",
    "gompertz_absorbance",
    "transmissivity_to_absorbance",
]
