"""Fisher information of loss probes, Cramer-Rao error bars and photon accounting.

All information values refer to one probe state carrying ``n_bar`` mean
photons through a pure-loss channel of transmissivity ``eta``.  A reading uses
``N`` probes with ``n_tot = N * n_bar`` photons overall, and the estimator
variance obeys ``sigma_eta**2 >= 1 / (N * H)``.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import constants, special

from .errors import DivergentInformationError, TruncationUnderflowError

__all__ = [
    "SourceKind",
    "ProbeSource",
    "EnergyBudget",
    "TruncatedGaussian",
    "ThermalCovariance",
    "SqueezedValidityWarning",
    "qfi",
    "thermal_gamma",
    "resolve_budget",
    "qcrb_sigma_eta",
    "sigma_A_from_sigma_eta",
    "sigma_A_bound",
    "squeezing_from_db",
    "probes_for_budget",
    "inverse_mills",
    "truncated_moments",
    "photon_budget",
    "thermal_covariance",
]

LN10 = math.log(10.0)
SQUEEZE_VALIDITY_LIMIT = 10.0


class SqueezedValidityWarning(UserWarning):
    """Squeezed-vacuum information evaluated far from the low-energy regime."""


class SourceKind(str, enum.Enum):
    COHERENT = "coherent"
    OPTIMAL = "optimal"
    SQUEEZED = "squeezed"
    THERMAL = "thermal"


@dataclass(frozen=True)
class ProbeSource:
    """Light source used to probe the sample.

    ``n_bar_per_probe`` is mandatory for squeezed and thermal sources, whose
    information is not linear in the photon number.  For the thermal source it
    counts photons in the mode sent through the sample only.
    """

    kind: SourceKind
    n_bar_per_probe: float | None = None
    asymmetry_x: float | None = None
    label: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", SourceKind(self.kind))
        if self.kind in (SourceKind.SQUEEZED, SourceKind.THERMAL):
            if self.n_bar_per_probe is None or not self.n_bar_per_probe > 0:
                raise ValueError(f"{self.kind.value} source needs n_bar_per_probe > 0")
        elif self.n_bar_per_probe is not None and not self.n_bar_per_probe > 0:
            raise ValueError("n_bar_per_probe must be > 0")
        if self.kind is SourceKind.THERMAL:
            if self.asymmetry_x is None or not 0 < self.asymmetry_x < 1:
                raise ValueError("thermal source needs asymmetry_x in (0, 1)")

    @classmethod
    def coherent(cls) -> "ProbeSource":
        return cls(SourceKind.COHERENT, label="coherent")

    @classmethod
    def optimal(cls) -> "ProbeSource":
        return cls(SourceKind.OPTIMAL, label="optimal")

    @classmethod
    def squeezed(cls, db: float = 1.0) -> "ProbeSource":
        _, n_bar = squeezing_from_db(db)
        return cls(SourceKind.SQUEEZED, n_bar_per_probe=n_bar, label=f"squeezed:{db:g}")

    @classmethod
    def thermal(cls, x: float, n_bar: float = 1.0) -> "ProbeSource":
        return cls(SourceKind.THERMAL, n_bar_per_probe=n_bar, asymmetry_x=x,
                   label=f"thermal:{x:g}:{n_bar:g}")

    @property
    def name(self) -> str:
        return self.label or self.kind.value

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "n_bar_per_probe": self.n_bar_per_probe,
            "asymmetry_x": self.asymmetry_x,
            "label": self.name,
        }


@dataclass(frozen=True)
class EnergyBudget:
    """Photons spent on one reading, split over ``probes_N`` probe states."""

    n_tot: float
    probes_N: int = 1

    def __post_init__(self):
        if not self.n_tot > 0:
            raise ValueError(f"n_tot must be > 0, got {self.n_tot}")
        if int(self.probes_N) != self.probes_N or self.probes_N < 1:
            raise ValueError(f"probes_N must be a positive integer, got {self.probes_N}")

    @property
    def n_bar(self) -> float:
        return self.n_tot / self.probes_N

    @classmethod
    def for_source(cls, source: ProbeSource, n_tot: float) -> "EnergyBudget":
        """Budget with the probe count implied by the source's per-probe energy.

        Coherent and optimal sources only depend on ``n_tot`` so a single probe
        is used unless the source pins ``n_bar_per_probe``.
        """
        if source.n_bar_per_probe is None:
            return cls(n_tot, 1)
        return cls(n_tot, probes_for_budget(n_tot, source.n_bar_per_probe))


@dataclass(frozen=True)
class TruncatedGaussian:
    """Gaussian with parameters ``raw_mean``/``raw_std`` restricted to [lower, upper]."""

    raw_mean: float
    raw_std: float
    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        if not self.raw_std > 0:
            raise ValueError(f"raw_std must be > 0, got {self.raw_std}")
        if not self.lower < self.upper:
            raise ValueError("lower must be < upper")

    @property
    def alpha(self) -> float:
        return (self.lower - self.raw_mean) / self.raw_std

    @property
    def beta(self) -> float:
        return (self.upper - self.raw_mean) / self.raw_std


class ThermalCovariance(NamedTuple):
    """Entries of the two-mode correlated thermal covariance ``[[aI, cI], [cI, bI]]``."""

    a: float
    b: float
    c: float

    def matrix(self) -> np.ndarray:
        eye = np.eye(2)
        return np.block([[self.a * eye, self.c * eye], [self.c * eye, self.b * eye]])


# -- information catalog -----------------------------------------------------

def _kind(source) -> SourceKind:
    return source.kind if isinstance(source, ProbeSource) else SourceKind(source)


def _check_eta(kind: SourceKind, eta: float):
    if not 0 <= eta <= 1 or math.isnan(eta):
        raise ValueError(f"transmissivity must lie in [0, 1], got {eta}")
    if eta == 0:
        raise DivergentInformationError(kind.value, eta)
    if eta == 1 and kind in (SourceKind.OPTIMAL, SourceKind.SQUEEZED):
        raise DivergentInformationError(kind.value, eta)


def thermal_gamma(x: float, n_bar: float, eta: float) -> float:
    """Penalty factor (<= 1) of correlated-thermal photon counting vs coherent light."""
    r = n_bar / x
    return (1.0 + (1.0 - x) * r) / (1.0 + (1.0 - x + x * eta) * r)


def qfi(source: ProbeSource, eta: float, n_bar: float | None = None) -> float:
    """Information about ``eta`` carried by one probe of ``n_bar`` photons.

    For the thermal source this is the classical Fisher information of
    photon counting on both output modes, not a QFI.

    Raises
    ------
    DivergentInformationError
        At ``eta = 0`` for every source and at ``eta = 1`` for the optimal and
        squeezed sources.
    """
    kind = _kind(source)
    if n_bar is None:
        n_bar = source.n_bar_per_probe
    if n_bar is None or not n_bar > 0:
        raise ValueError("n_bar must be > 0")
    eta = float(eta)
    _check_eta(kind, eta)
    if kind is SourceKind.COHERENT:
        return n_bar / eta
    if kind is SourceKind.OPTIMAL:
        return n_bar / (eta * (1.0 - eta))
    if kind is SourceKind.SQUEEZED:
        p = eta * (1.0 - eta)
        if n_bar * p > SQUEEZE_VALIDITY_LIMIT:
            warnings.warn(
                f"squeezed-vacuum information at n_bar*eta*(1-eta)={n_bar * p:.3g} is outside "
                "the low-energy regime it was derived for",
                SqueezedValidityWarning,
                stacklevel=2,
            )
        return (n_bar - 2.0 * n_bar * p) / (eta * (1.0 - eta) * (1.0 + 2.0 * n_bar * p))
    gamma = thermal_gamma(source.asymmetry_x, n_bar, eta)
    return gamma * n_bar / eta


def _inverse_information(kind: SourceKind, source, eta: float, n_bar: float) -> float:
    # 1/H written so that the endpoints where H diverges give 0 instead of inf/inf
    if kind is SourceKind.COHERENT:
        return eta / n_bar
    if kind is SourceKind.OPTIMAL:
        return eta * (1.0 - eta) / n_bar
    if kind is SourceKind.SQUEEZED:
        p = eta * (1.0 - eta)
        return p * (1.0 + 2.0 * n_bar * p) / (n_bar * (1.0 - 2.0 * p))
    return eta / (thermal_gamma(source.asymmetry_x, n_bar, eta) * n_bar)


def resolve_budget(source: ProbeSource, budget: EnergyBudget) -> EnergyBudget:
    """Probe split actually used for ``source``.

    Sources with a fixed per-probe energy spend ``n_tot`` through
    ``round(n_tot / n_bar_per_probe)`` probes of ``n_tot / N`` photons each,
    whatever ``budget.probes_N`` says.  Other sources keep the given split.
    """
    if isinstance(source, ProbeSource) and source.n_bar_per_probe is not None:
        n = probes_for_budget(budget.n_tot, source.n_bar_per_probe)
        if n != budget.probes_N:
            return EnergyBudget(budget.n_tot, n)
    return budget


def qcrb_sigma_eta(source: ProbeSource, eta, budget: EnergyBudget):
    """Smallest standard deviation of an unbiased transmissivity estimate.

    ``sqrt(1 / (N * H(eta, n_tot/N)))`` with the split from
    :func:`resolve_budget`.  Where ``H`` diverges (e.g. the optimal
    probe at ``eta = 1``) the bound is the finite limit 0.  Accepts arrays.
    """
    kind = _kind(source)
    eta_arr = np.asarray(eta, dtype=float)
    if np.any(~((eta_arr >= 0) & (eta_arr <= 1))):
        raise ValueError("transmissivity must lie in [0, 1]")
    budget = resolve_budget(source, budget)
    if kind is SourceKind.SQUEEZED and np.any(budget.n_bar * eta_arr * (1 - eta_arr) > SQUEEZE_VALIDITY_LIMIT):
        warnings.warn("squeezed-vacuum information outside its low-energy regime",
                      SqueezedValidityWarning, stacklevel=2)
    var = _inverse_information(kind, source, eta_arr, budget.n_bar) / budget.probes_N
    sigma = np.sqrt(var)
    return float(sigma) if sigma.ndim == 0 else sigma


def sigma_A_from_sigma_eta(sigma_eta, eta):
    """First-order (delta-method) absorbance error ``sigma_eta / (eta ln 10)``."""
    eta = np.asarray(eta, dtype=float)
    sigma_eta = np.asarray(sigma_eta, dtype=float)
    if np.any((eta <= 0) | (eta > 1)):
        raise ValueError("transmissivity must lie in (0, 1]")
    if np.any(sigma_eta < 0):
        raise ValueError("sigma_eta must be >= 0")
    out = sigma_eta / (eta * LN10)
    return float(out) if out.ndim == 0 else out


def sigma_A_bound(source: ProbeSource, A, budget: EnergyBudget):
    """Cramer-Rao error bar on the absorbance ``A`` of the sample.

    For coherent light this is ``sqrt(10**A / n_tot) / ln 10`` and for the
    optimal probe ``sqrt((10**A - 1) / n_tot) / ln 10``.
    """
    A = np.asarray(A, dtype=float)
    if np.any(A < 0) or not np.all(np.isfinite(A)):
        raise ValueError("absorbance must be finite and >= 0")
    eta = 10.0 ** (-A)
    return sigma_A_from_sigma_eta(qcrb_sigma_eta(source, eta, budget), eta)


# -- photon accounting ---------------------------------------------------------

def squeezing_from_db(db: float) -> tuple[float, float]:
    """Squeezing parameter ``r = 10**(-dB/10)`` and mean photons ``(1-r)**2/(4r)``."""
    if not db > 0:
        raise ValueError("squeezing must be > 0 dB")
    r = 10.0 ** (-db / 10.0)
    return r, (1.0 - r) ** 2 / (4.0 * r)


def probes_for_budget(n_tot: float, n_bar: float) -> int:
    """Number of probes needed to spend ``n_tot`` photons, nearest integer, at least 1."""
    return max(1, int(round(n_tot / n_bar)))


def photon_budget(energy: float, wavelength: float) -> float:
    """Photon count ``E * lambda / (h c)`` for energy in joules and wavelength in metres."""
    if energy < 0 or not wavelength > 0:
        raise ValueError("energy must be >= 0 and wavelength > 0")
    return energy * wavelength / (constants.h * constants.c)


def thermal_covariance(n_bar: float, x: float) -> ThermalCovariance:
    if not n_bar > 0 or not 0 < x < 1:
        raise ValueError("need n_bar > 0 and 0 < x < 1")
    return ThermalCovariance(
        a=n_bar + 0.5,
        b=n_bar * (1.0 / x - 1.0) + 0.5,
        c=math.sqrt((1.0 - x) / x) * n_bar,
    )


# -- truncated Gaussian ----------------------------------------------------------

def inverse_mills(x):
    """``g(x) = 2 N(x) / (1 - erf(x/sqrt 2))``, the hazard of the standard normal.

    Evaluated through ``erfcx`` for x > 0 so it stays accurate far in the tail.
    """
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        tail = math.sqrt(2.0 / math.pi) / special.erfcx(x / math.sqrt(2.0))
        body = special.ndtr(-x)
        body = np.where(body > 0, np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi) / body, 0.0)
    out = np.where(x > 0, tail, body)
    return float(out) if out.ndim == 0 else out


def _mass(alpha: float, beta: float) -> float:
    # evaluate in whichever tail keeps the difference accurate
    if alpha > 0:
        return special.ndtr(-alpha) - special.ndtr(-beta)
    return special.ndtr(beta) - special.ndtr(alpha)


def _pdf(z: float) -> float:
    return 0.0 if math.isinf(z) else math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)


def truncated_moments(tg: TruncatedGaussian) -> tuple[float, float]:
    """Mean and standard deviation of a truncated Gaussian.

    One-sided truncation from below uses ``mean + g(w) sigma`` and
    ``sigma * sqrt(1 + w g(w) - g(w)**2)`` with ``w`` the standardized bound;
    truncation from above is the mirror image.  Finite intervals use the
    standard two-sided closed form.

    Raises
    ------
    TruncationUnderflowError
        When the interval holds no representable probability mass.
    """
    mu, s = tg.raw_mean, tg.raw_std
    alpha, beta = tg.alpha, tg.beta
    if math.isinf(beta) and math.isinf(alpha):
        return mu, s
    if math.isinf(beta) or math.isinf(alpha):
        # mirror upper truncation onto lower truncation
        sign = 1.0 if math.isinf(beta) else -1.0
        w = alpha if sign > 0 else -beta
        if w > 1e7:
            raise TruncationUnderflowError(f"bound {w:g} sigma into the tail")
        g = float(inverse_mills(w))
        var_factor = 1.0 + w * g - g * g
        return mu + sign * g * s, s * math.sqrt(max(var_factor, 0.0))
    z = _mass(alpha, beta)
    if not z > 1e-300:
        raise TruncationUnderflowError(
            f"no probability mass in [{tg.lower}, {tg.upper}] for N({mu}, {s}^2)"
        )
    pa, pb = _pdf(alpha), _pdf(beta)
    d1 = (pa - pb) / z
    d2 = (alpha * pa - beta * pb) / z
    var_factor = 1.0 + d2 - d1 * d1
    return mu + s * d1, s * math.sqrt(max(var_factor, 0.0))
