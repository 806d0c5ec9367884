"""Threshold tests on the estimated transmissivity of a sample.

Two hypotheses predict transmissivities ``eta0(t)`` (null: blank or the
reference species) and ``eta1(t)`` (alternative: growing bacteria).  The
estimate is Gaussian with the Cramer-Rao spread of the chosen source,
truncated to ``[0, 1]``.  The test accepts the null when the estimate is at
least ``tau``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import erf

from .growth import (
    CubicDecayParams,
    GompertzParams,
    cubic_transmissivity,
    gompertz_transmissivity,
)
from .metrology import EnergyBudget, ProbeSource, TruncatedGaussian, qcrb_sigma_eta, resolve_budget

__all__ = [
    "HypothesisPair",
    "TestPoint",
    "DetectionResult",
    "MonotonicityWarning",
    "blank_pair",
    "species_pair_from_gompertz",
    "error_probabilities",
    "threshold_for_fp",
    "mean_error",
    "asymmetric_fn",
    "error_figure",
    "detection_time",
    "sweep",
]

SQRT2 = math.sqrt(2.0)
INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
GRID_POINTS = 1025  # 1024 intervals over [0, 1]


class MonotonicityWarning(UserWarning):
    """Error figure increased with time somewhere inside a search window."""


@dataclass(frozen=True)
class HypothesisPair:
    """Null and alternative transmissivity laws probed with one source and budget."""

    eta0_law: Callable[[float], float]
    eta1_law: Callable[[float], float]
    source: ProbeSource
    budget: EnergyBudget
    labels: tuple[str, str] = ("H0", "H1")

    def means(self, t: float) -> tuple[float, float]:
        e0, e1 = float(self.eta0_law(t)), float(self.eta1_law(t))
        for e in (e0, e1):
            if not 0 < e <= 1:
                raise ValueError(f"transmissivity law left (0, 1] at t={t}: {e}")
        return e0, e1

    def sigmas(self, t: float) -> tuple[float, float]:
        e0, e1 = self.means(t)
        return qcrb_sigma_eta(self.source, e0, self.budget), qcrb_sigma_eta(self.source, e1, self.budget)

    def distributions(self, t: float) -> tuple[tuple[float, float], tuple[float, float]]:
        """((mean0, sigma0), (mean1, sigma1)) of the untruncated estimators."""
        e0, e1 = self.means(t)
        return (
            (e0, qcrb_sigma_eta(self.source, e0, self.budget)),
            (e1, qcrb_sigma_eta(self.source, e1, self.budget)),
        )

    def truncated(self, t: float) -> tuple[TruncatedGaussian | None, TruncatedGaussian | None]:
        out = []
        for m, s in self.distributions(t):
            out.append(TruncatedGaussian(m, s, 0.0, 1.0) if s > 0 else None)
        return tuple(out)

    @property
    def probes_N(self) -> int:
        return resolve_budget(self.source, self.budget).probes_N


@dataclass(frozen=True)
class TestPoint:
    time: float
    threshold_tau: float
    p_fp: float
    p_fn: float

    __test__ = False  # not a pytest class

    @property
    def p_mean(self) -> float:
        return 0.5 * (self.p_fp + self.p_fn)


@dataclass
class DetectionResult:
    """Earliest time an error figure drops to ``target`` inside ``window``.

    ``time`` is None when the target is not reached; ``final_error`` then holds
    the error figure at the end of the window.
    """

    reached: bool
    time: float | None
    target: float
    final_error: float
    window: tuple[float, float]
    monotone: bool = True
    violations: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "reached": self.reached,
            "time_h": self.time,
            "target": self.target,
            "final_error": self.final_error,
            "window": list(self.window),
            "monotone": self.monotone,
            "monotonicity_violations": list(self.violations),
        }


# -- construction ------------------------------------------------------------

def blank_pair(cubic: CubicDecayParams, source: ProbeSource, budget: EnergyBudget) -> HypothesisPair:
    """Growth (cubic decay) against a blank that stays at ``eta_bk``."""
    eta_bk = cubic.eta_bk
    return HypothesisPair(
        eta0_law=lambda t: eta_bk,
        eta1_law=lambda t: cubic_transmissivity(t, cubic),
        source=source,
        budget=budget,
        labels=("blank", "growth"),
    )


def species_pair_from_gompertz(
    ecoli: GompertzParams,
    salmo: GompertzParams,
    source: ProbeSource,
    budget: EnergyBudget,
    polynomial_degree: int | None = None,
    fit_window: tuple[float, float] = (0.0, 6.0),
) -> HypothesisPair:
    """Null = ``salmo`` growth, alternative = ``ecoli`` growth, both as ``10**-A(t)``.

    With ``polynomial_degree`` set, each transmissivity curve is replaced by a
    least-squares polynomial fitted on ``fit_window`` instead.
    """
    law0 = lambda t: gompertz_transmissivity(t, salmo)  # noqa: E731
    law1 = lambda t: gompertz_transmissivity(t, ecoli)  # noqa: E731
    if polynomial_degree is not None:
        ts = np.linspace(*fit_window, 201)
        poly0 = np.polynomial.Polynomial.fit(ts, law0(ts), polynomial_degree)
        poly1 = np.polynomial.Polynomial.fit(ts, law1(ts), polynomial_degree)
        law0 = lambda t: float(poly0(t))  # noqa: E731
        law1 = lambda t: float(poly1(t))  # noqa: E731
    return HypothesisPair(law0, law1, source, budget, labels=("salmonella", "ecoli"))


# -- error probabilities ---------------------------------------------------------

def _cdf_mass(mean, sigma, lo, hi):
    """Unnormalized Gaussian mass of [lo, hi] via the erf difference."""
    return 0.5 * (erf((mean - lo) / (SQRT2 * sigma)) - erf((mean - hi) / (SQRT2 * sigma)))


def _p_fp(tau, mean, sigma):
    tau = np.asarray(tau, dtype=float)
    if sigma == 0:
        return np.where(mean < tau, 1.0, 0.0)
    norm = _cdf_mass(mean, sigma, 0.0, 1.0)
    return _cdf_mass(mean, sigma, 0.0, tau) / norm


def _p_fn(tau, mean, sigma):
    tau = np.asarray(tau, dtype=float)
    if sigma == 0:
        return np.where(mean >= tau, 1.0, 0.0)
    norm = _cdf_mass(mean, sigma, 0.0, 1.0)
    return _cdf_mass(mean, sigma, tau, 1.0) / norm


def error_probabilities(pair: HypothesisPair, t: float, tau):
    """False-positive and false-negative probabilities of threshold ``tau``.

    ``p_fp = P(estimate < tau | H0)`` and ``p_fn = P(estimate >= tau | H1)``,
    each normalized by the Gaussian mass inside [0, 1].  ``tau`` may be an
    array.  A zero spread gives step-function probabilities.
    """
    tau_arr = np.asarray(tau, dtype=float)
    if np.any((tau_arr < 0) | (tau_arr > 1)):
        raise ValueError("threshold must lie in [0, 1]")
    (m0, s0), (m1, s1) = pair.distributions(t)
    fp, fn = _p_fp(tau_arr, m0, s0), _p_fn(tau_arr, m1, s1)
    if tau_arr.ndim == 0:
        return float(fp), float(fn)
    return fp, fn


def threshold_for_fp(pair: HypothesisPair, t: float, target_fp: float) -> float:
    """Threshold whose false-positive probability equals ``target_fp`` (bisection)."""
    if not 0 < target_fp < 1:
        raise ValueError("target_fp must lie in (0, 1)")
    (m0, s0), _ = pair.distributions(t)
    if s0 == 0:
        return m0
    lo, hi = 0.0, 1.0
    while True:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        f = float(_p_fp(mid, m0, s0)) - target_fp
        if abs(f) < 1e-12:
            return mid
        if f < 0:
            lo = mid
        else:
            hi = mid
    f_lo = abs(float(_p_fp(lo, m0, s0)) - target_fp)
    f_hi = abs(float(_p_fp(hi, m0, s0)) - target_fp)
    return lo if f_lo <= f_hi else hi


def _golden(f, a, b, tol=1e-13):
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def mean_error(pair: HypothesisPair, t: float) -> tuple[float, float]:
    """Equal-prior error ``min_tau (p_fp + p_fn)/2`` and its minimizing threshold.

    A 1024-interval grid brackets the global minimum; the derivative sign at
    the bracket ends is checked before a golden-section refinement.
    """
    (m0, s0), (m1, s1) = pair.distributions(t)

    def f(tau):
        return 0.5 * (_p_fp(tau, m0, s0) + _p_fn(tau, m1, s1))

    grid = np.linspace(0.0, 1.0, GRID_POINTS)
    vals = f(grid)
    i = int(np.argmin(vals))
    best_tau, best = float(grid[i]), float(vals[i])
    if s0 == 0 or s1 == 0:
        return best, best_tau
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, GRID_POINTS - 1)]
    h = 1e-9
    # a local minimum inside (a, b) needs f' <= 0 at a and f' >= 0 at b
    left_ok = i == 0 or float(f(a + h) - f(a)) <= 0
    right_ok = i == GRID_POINTS - 1 or float(f(b) - f(b - h)) >= 0
    if left_ok and right_ok:
        tau, val = _golden(lambda x: float(f(x)), float(a), float(b))
        if val < best:
            best_tau, best = tau, val
    return best, best_tau


def asymmetric_fn(pair: HypothesisPair, t: float, target_fp: float) -> TestPoint:
    """Fix the false-positive rate and report the resulting false-negative rate."""
    tau = threshold_for_fp(pair, t, target_fp)
    fp, fn = error_probabilities(pair, t, tau)
    return TestPoint(t, tau, fp, fn)


def error_figure(pair: HypothesisPair, t: float, mode: str = "symmetric", target_fp: float = 0.01) -> float:
    if mode == "symmetric":
        return mean_error(pair, t)[0]
    if mode == "asymmetric":
        return asymmetric_fn(pair, t, target_fp).p_fn
    raise ValueError(f"unknown mode {mode!r}")


def detection_time(
    pair: HypothesisPair,
    mode: str = "symmetric",
    target: float = 0.05,
    window: tuple[float, float] = (0.0, 3.0),
    target_fp: float = 0.01,
    grid_step: float = 0.02,
    tol: float = 1e-3,
) -> DetectionResult:
    """Earliest time in ``window`` at which the error figure is at most ``target``.

    ``mode`` is ``"symmetric"`` (mean error) or ``"asymmetric"`` (false
    negatives at false-positive rate ``target_fp``).  The error curve is
    scanned on a grid, checked for monotone decrease, and the first crossing is
    bisected to ``tol`` hours.
    """
    t_lo, t_hi = window
    if not t_lo < t_hi:
        raise ValueError("window must satisfy t_lo < t_hi")
    n = max(2, int(math.ceil((t_hi - t_lo) / grid_step)) + 1)
    ts = np.linspace(t_lo, t_hi, n)
    errs = np.array([error_figure(pair, t, mode, target_fp) for t in ts])

    rises = np.diff(errs) > 1e-12
    violations = [float(ts[k + 1]) for k in np.flatnonzero(rises)]
    if violations:
        warnings.warn(
            f"error figure not monotone in t over {window}; first rise at t={violations[0]:.4g} h",
            MonotonicityWarning,
            stacklevel=2,
        )
    result = DetectionResult(False, None, target, float(errs[-1]), (t_lo, t_hi),
                             monotone=not violations, violations=violations)

    hits = np.flatnonzero(errs <= target)
    if hits.size == 0:
        return result
    k = int(hits[0])
    if k == 0:
        result.reached, result.time = True, float(ts[0])
        return result
    a, b = float(ts[k - 1]), float(ts[k])
    while b - a > tol:
        mid = 0.5 * (a + b)
        if error_figure(pair, mid, mode, target_fp) <= target:
            b = mid
        else:
            a = mid
    result.reached, result.time = True, b
    return result


def sweep(pair: HypothesisPair, times, target_fp: float = 0.01) -> list[dict]:
    """Per-time table of the symmetric optimum and the fixed-false-positive test."""
    rows = []
    for t in times:
        t = float(t)
        p_mean, tau_star = mean_error(pair, t)
        fp, fn = error_probabilities(pair, t, tau_star)
        asym = asymmetric_fn(pair, t, target_fp)
        rows.append({
            "t": t,
            "tau_star": tau_star,
            "p_fp": fp,
            "p_fn": fn,
            "p_mean": p_mean,
            "tau_fixed_fp": asym.threshold_tau,
            "p_fn_fixed_fp": asym.p_fn,
        })
    return rows
