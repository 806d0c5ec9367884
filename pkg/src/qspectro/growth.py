"""Growth-curve models and absorbance/transmissivity/concentration conversions.

Absorbance (optical density) and transmissivity are related by
``A = -log10(eta)``.  Growth is described either by a Gompertz sigmoid in
absorbance space or, for the first hours of growth, by a cubic decay law in
transmissivity space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ModelDomainError

__all__ = [
    "GompertzParams",
    "CubicDecayParams",
    "BeerLambert",
    "gompertz_absorbance",
    "gompertz_transmissivity",
    "gompertz_linear_phase",
    "gompertz_inflection_time",
    "absorbance_to_transmissivity",
    "transmissivity_to_absorbance",
    "concentration_from_absorbance",
    "cubic_transmissivity",
]


@dataclass(frozen=True)
class GompertzParams:
    """Gompertz growth curve in the (asymptote, rate, lag, background) form.

    Attributes
    ----------
    asymptote_a : float
        Absorbance reached as t -> infinity (above the background).
    rate_mu : float
        Slope of the linear growth phase, absorbance per hour.
    lag_theta : float
        Lag time in hours; the linear phase crosses zero here.
    background_Abk : float
        Blank absorbance added as a constant offset.
    """

    asymptote_a: float
    rate_mu: float
    lag_theta: float
    background_Abk: float = 0.0

    def __post_init__(self):
        for name in ("asymptote_a", "rate_mu", "lag_theta", "background_Abk"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.asymptote_a <= 0:
            raise ValueError(f"asymptote_a must be > 0, got {self.asymptote_a}")
        if self.rate_mu <= 0:
            raise ValueError(f"rate_mu must be > 0, got {self.rate_mu}")
        if self.background_Abk < 0:
            raise ValueError(f"background_Abk must be >= 0, got {self.background_Abk}")

    @classmethod
    def from_abc(cls, a: float, b: float, c: float, background_Abk: float = 0.0) -> "GompertzParams":
        """Convert the ``a*exp(-exp(b - c*t))`` form (mu = a*c/e, theta = (b-1)/c)."""
        if c <= 0:
            raise ValueError(f"c must be > 0, got {c}")
        return cls(a, a * c / math.e, (b - 1.0) / c, background_Abk)

    def to_abc(self) -> tuple[float, float, float]:
        c = self.rate_mu * math.e / self.asymptote_a
        return self.asymptote_a, c * self.lag_theta + 1.0, c

    def to_dict(self) -> dict:
        return {
            "asymptote_a": self.asymptote_a,
            "rate_mu": self.rate_mu,
            "lag_theta": self.lag_theta,
            "background_Abk": self.background_Abk,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GompertzParams":
        return cls(
            float(d["asymptote_a"]),
            float(d["rate_mu"]),
            float(d["lag_theta"]),
            float(d.get("background_Abk", 0.0)),
        )


@dataclass(frozen=True)
class CubicDecayParams:
    """Early-growth transmissivity law ``eta_bk - c*t**2 + d*t**3``.

    The law is only meaningful inside ``[t_min, t_max]``; past a few hours the
    cubic term turns the curve upward, which is unphysical.
    """

    eta_bk: float
    quad_c: float
    cubic_d: float
    t_min: float = 0.0
    t_max: float = 3.0

    def __post_init__(self):
        if not 0 < self.eta_bk <= 1:
            raise ValueError(f"eta_bk must lie in (0, 1], got {self.eta_bk}")
        if not self.t_min < self.t_max:
            raise ValueError("t_min must be < t_max")

    def to_dict(self) -> dict:
        return {
            "eta_bk": self.eta_bk,
            "quad_c": self.quad_c,
            "cubic_d": self.cubic_d,
            "t_min": self.t_min,
            "t_max": self.t_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CubicDecayParams":
        return cls(
            float(d["eta_bk"]),
            float(d["quad_c"]),
            float(d["cubic_d"]),
            float(d.get("t_min", 0.0)),
            float(d.get("t_max", 3.0)),
        )


@dataclass(frozen=True)
class BeerLambert:
    """Molar extinction coefficient (m^2/mol) and optical path length (m)."""

    molar_extinction_eps: float
    path_length_l: float

    def __post_init__(self):
        if self.molar_extinction_eps <= 0 or self.path_length_l <= 0:
            raise ValueError("extinction coefficient and path length must be > 0")


def _check_finite(x, name="t"):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def _out(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


def gompertz_absorbance(t, p: GompertzParams):
    """Absorbance of the Gompertz curve at time ``t`` (hours); accepts arrays."""
    t = _check_finite(t)
    k = p.rate_mu * math.e / p.asymptote_a
    # exp overflow -> inf -> exp(-inf) = 0, which is the correct limit
    with np.errstate(over="ignore"):
        inner = np.exp(k * (p.lag_theta - t) + 1.0)
    return _out(p.asymptote_a * np.exp(-inner) + p.background_Abk)


def gompertz_transmissivity(t, p: GompertzParams):
    return _out(10.0 ** (-np.asarray(gompertz_absorbance(t, p))))


def gompertz_linear_phase(t, p: GompertzParams):
    """Linear growth phase ``(t - theta) * mu`` (background not included)."""
    return _out((np.asarray(t, dtype=float) - p.lag_theta) * p.rate_mu)


def gompertz_inflection_time(p: GompertzParams) -> float:
    """Time of maximal slope, ``theta + a/(mu*e)``; the slope there equals ``mu``."""
    return p.lag_theta + p.asymptote_a / (p.rate_mu * math.e)


def absorbance_to_transmissivity(A):
    A = _check_finite(A, "A")
    if np.any(A < 0):
        raise ValueError("negative absorbance would imply optical gain")
    return _out(10.0 ** (-A))


def transmissivity_to_absorbance(eta):
    eta = _check_finite(eta, "eta")
    if np.any((eta <= 0) | (eta > 1)):
        raise ValueError("transmissivity must lie in (0, 1]")
    return _out(-np.log10(eta))


def concentration_from_absorbance(A, bl: BeerLambert):
    """Beer-Lambert concentration ``A / (eps * l)`` in mol/m^3."""
    A = _check_finite(A, "A")
    if np.any(A < 0):
        raise ValueError("negative absorbance would imply optical gain")
    return _out(A / (bl.molar_extinction_eps * bl.path_length_l))


def cubic_transmissivity(t, p: CubicDecayParams):
    """Evaluate the cubic decay law, refusing to extrapolate outside its window."""
    t = _check_finite(t)
    if np.any((t < p.t_min) | (t > p.t_max)):
        raise ModelDomainError(
            f"t outside cubic validity window [{p.t_min}, {p.t_max}] h", value=_out(t)
        )
    eta = p.eta_bk - p.quad_c * t**2 + p.cubic_d * t**3
    if np.any((eta <= 0) | (eta > 1)):
        raise ModelDomainError("cubic law left (0, 1]; parameters misused", value=_out(eta))
    return _out(eta)
