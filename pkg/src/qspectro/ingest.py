"""Spectrophotometer replicate readings: parsing, dilution filtering, averaging, fitting.

The CSV format is UTF-8 with the header ``species,time_h,dilution,od,replicate``.
Readings at or above OD 1 are unreliable and dropped.  Retained readings are
scaled to an effective OD and averaged per reading time; the mean curve is
then fitted with a Gompertz sigmoid.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.optimize import minimize

from .errors import SchemaError
from .growth import GompertzParams, gompertz_absorbance

__all__ = [
    "CSV_COLUMNS",
    "RawReading",
    "ReplicateSeries",
    "FitReport",
    "read_readings_csv",
    "parse_readings",
    "filter_and_scale",
    "reduce_replicates",
    "subtract_blank",
    "heuristic_init",
    "fit_gompertz",
]

CSV_COLUMNS = ("species", "time_h", "dilution", "od", "replicate")
OD_LIMIT = 1.0
MAX_ITER = 500
REL_TOL = 1e-8


@dataclass(frozen=True)
class RawReading:
    time: float
    dilution_d: int
    od_measured: float
    replicate_id: str = ""
    species: str = ""

    def __post_init__(self):
        if self.dilution_d < 1:
            raise ValueError(f"dilution must be >= 1, got {self.dilution_d}")
        if not self.time >= 0:
            raise ValueError(f"time must be >= 0, got {self.time}")


@dataclass
class ReplicateSeries:
    times: np.ndarray
    mean_A: np.ndarray
    std_A: np.ndarray
    count: np.ndarray
    species: str = ""
    clamped: int = 0  # means raised to 0 after blank subtraction

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.mean_A = np.asarray(self.mean_A, dtype=float)
        self.std_A = np.asarray(self.std_A, dtype=float)
        self.count = np.asarray(self.count, dtype=int)
        if not (len(self.times) == len(self.mean_A) == len(self.std_A) == len(self.count)):
            raise ValueError("series columns differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if np.any(self.std_A < 0) or np.any(self.count < 1):
            raise ValueError("std must be >= 0 and count >= 1")

    def __len__(self):
        return len(self.times)

    def to_dict(self) -> dict:
        return {
            "species": self.species,
            "times": self.times.tolist(),
            "mean_A": self.mean_A.tolist(),
            "std_A": self.std_A.tolist(),
            "count": self.count.tolist(),
            "clamped": self.clamped,
        }


@dataclass
class FitReport:
    params: GompertzParams
    residual_rms: float
    iterations: int
    converged: bool
    degenerate: bool = False
    start_index: int = 0
    starts: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "residual_rms": self.residual_rms,
            "iterations": self.iterations,
            "converged": self.converged,
            "degenerate": self.degenerate,
            "start_index": self.start_index,
        }


# -- parsing ----------------------------------------------------------------

def parse_readings(lines: Iterable[str]) -> list[RawReading]:
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("empty file: header row required", line=1) from None
    header = [h.strip() for h in header]
    if tuple(header) != CSV_COLUMNS:
        raise SchemaError(f"header must be {','.join(CSV_COLUMNS)!r}, got {','.join(header)!r}", line=1)
    readings = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(CSV_COLUMNS):
            raise SchemaError(f"expected {len(CSV_COLUMNS)} fields, got {len(row)}", line=lineno)
        species, time_s, dil_s, od_s, rep = (c.strip() for c in row)
        try:
            time = float(time_s)
            od = float(od_s)
            dil_f = float(dil_s)
        except ValueError as exc:
            raise SchemaError(f"non-numeric field: {exc}", line=lineno) from None
        if not (math.isfinite(time) and math.isfinite(od)):
            raise SchemaError("non-finite value", line=lineno)
        if dil_f != int(dil_f) or dil_f < 1:
            raise SchemaError(f"dilution must be a positive integer, got {dil_s!r}", line=lineno)
        if time < 0:
            raise SchemaError(f"time must be >= 0, got {time}", line=lineno)
        readings.append(RawReading(time, int(dil_f), od, rep, species))
    return readings


def read_readings_csv(path) -> list[RawReading]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return parse_readings(fh)


# -- reduction ----------------------------------------------------------------

def filter_and_scale(readings: Iterable[RawReading], rule: str = "literal") -> list[tuple[float, float]]:
    """Drop readings with OD >= 1 and convert the rest to an effective OD.

    ``rule="literal"`` divides the measured OD by the dilution factor d;
    ``rule="physical"`` multiplies by d, which undoes a 1:d dilution.  The
    output is sorted, so it does not depend on input order.
    """
    if rule not in ("literal", "physical"):
        raise ValueError(f"unknown dilution rule {rule!r}")
    out = []
    for r in readings:
        if r.od_measured >= OD_LIMIT:
            continue
        od = r.od_measured / r.dilution_d if rule == "literal" else r.od_measured * r.dilution_d
        out.append((r.time, od))
    out.sort()
    return out


def reduce_replicates(scaled: Iterable[tuple[float, float]], grouping_tolerance: float = 0.0,
                      species: str = "") -> ReplicateSeries:
    """Group readings taken within ``grouping_tolerance`` hours and average them.

    A group starts at its earliest time and absorbs readings up to
    ``grouping_tolerance`` later; its time is the mean of its members' times.
    The spread is the sample standard deviation (0 for a single reading).
    """
    if grouping_tolerance < 0:
        raise ValueError("grouping_tolerance must be >= 0")
    pts = sorted(scaled)
    groups: list[list[tuple[float, float]]] = []
    for t, od in pts:
        if groups and t - groups[-1][0][0] <= grouping_tolerance:
            groups[-1].append((t, od))
        else:
            groups.append([(t, od)])
    times, means, stds, counts = [], [], [], []
    for g in groups:
        ts = np.array([p[0] for p in g])
        ods = np.array([p[1] for p in g])
        times.append(ts.mean())
        means.append(ods.mean())
        stds.append(ods.std(ddof=1) if len(ods) > 1 else 0.0)
        counts.append(len(ods))
    return ReplicateSeries(np.array(times), np.array(means), np.array(stds), np.array(counts), species)


def subtract_blank(series: ReplicateSeries, blank_A: float) -> ReplicateSeries:
    """Remove a blank absorbance; negative means are clamped to 0 and counted."""
    mean = series.mean_A - blank_A
    neg = mean < 0
    return ReplicateSeries(series.times.copy(), np.where(neg, 0.0, mean), series.std_A.copy(),
                           series.count.copy(), series.species, series.clamped + int(neg.sum()))


# -- fitting ----------------------------------------------------------------------

def heuristic_init(series: ReplicateSeries, background: float | None = None) -> GompertzParams:
    """Starting point from the data: plateau height, steepest slope and its time."""
    t, y = series.times, series.mean_A
    bk = float(y.min()) if background is None else background
    a = max(float(y.max()) - bk, 1e-6)
    slopes = np.diff(y) / np.diff(t)
    k = int(np.argmax(slopes))
    mu = max(float(slopes[k]), 1e-6)
    theta = 0.5 * float(t[k] + t[k + 1])
    return GompertzParams(a, mu, theta, max(bk, 0.0))


def _starts(init: GompertzParams, series: ReplicateSeries) -> list[GompertzParams]:
    t, y = series.times, series.mean_A
    slopes = np.diff(y) / np.diff(t)
    k = int(np.argmax(slopes))
    tm = 0.5 * float(t[k] + t[k + 1])
    ym = 0.5 * float(y[k] + y[k + 1])
    # lag as the zero crossing of the steepest tangent
    tangent_theta = tm - (ym - init.background_Abk) / init.rate_mu
    a, mu, th, bk = init.asymptote_a, init.rate_mu, init.lag_theta, init.background_Abk
    return [
        init,
        GompertzParams(a, mu, tangent_theta, bk),
        GompertzParams(1.5 * a, mu, tangent_theta, bk),
        GompertzParams(a, 0.5 * mu, th, bk),
        GompertzParams(0.7 * a, 2.0 * mu, tangent_theta, bk),
    ]


def _encode(p: GompertzParams, fixed_bk: bool) -> np.ndarray:
    v = [math.log(p.asymptote_a), math.log(p.rate_mu), p.lag_theta]
    if not fixed_bk:
        v.append(p.background_Abk)
    return np.array(v)


def _decode(v: np.ndarray, fixed_bk: float | None) -> tuple[float, float, float, float]:
    bk = fixed_bk if fixed_bk is not None else v[3]
    return math.exp(v[0]), math.exp(v[1]), float(v[2]), float(bk)


def _model(t, a, mu, theta, bk):
    with np.errstate(over="ignore"):
        return a * np.exp(-np.exp(mu * math.e / a * (theta - t) + 1.0)) + bk


def _simplex(x0: np.ndarray, rel: float) -> np.ndarray:
    pts = [x0.copy()]
    for i in range(len(x0)):
        x = x0.copy()
        x[i] += rel * max(abs(x[i]), 0.25)
        pts.append(x)
    return np.array(pts)


def _nelder_mead(obj, x0: np.ndarray, max_iter: int):
    """Simplex minimization with restarts.

    Stops once a restart moves the incumbent by less than ``REL_TOL``
    (relative, floored at 1) or after ``max_iter`` iterations in total.
    """
    it = 0
    rel = 0.1
    x = x0
    while it < max_iter:
        res = minimize(obj, x, method="Nelder-Mead",
                       options={"initial_simplex": _simplex(x, rel), "maxiter": max_iter - it,
                                "xatol": 1e-10, "fatol": np.inf, "adaptive": True})
        it += max(int(res.nit), 1)
        moved = np.abs(res.x - x) / np.maximum(np.abs(x), 1.0)
        x = res.x
        if rel < 0.1 and np.all(moved < REL_TOL):
            return x, float(res.fun), it, True
        rel = 1e-3
    return x, float(obj(x)), it, False


def fit_gompertz(series: ReplicateSeries, init: GompertzParams | None = None,
                 fixed_background: float | None = None, max_iter: int = MAX_ITER) -> FitReport:
    """Least-squares Gompertz fit of the mean curve by multi-start Nelder-Mead.

    Five starts are derived from ``init`` (or the data heuristic).  The
    lowest residual wins; ties go to the earlier start.  ``fixed_background``
    freezes the blank absorbance.
    """
    if len(series) < 5:
        raise ValueError("fit needs at least 5 distinct time points")
    t, y = series.times, series.mean_A
    base = init or heuristic_init(series, fixed_background)
    if fixed_background is not None:
        base = GompertzParams(base.asymptote_a, base.rate_mu, base.lag_theta, fixed_background)
    yscale = max(float(np.ptp(y)), 1e-300)
    if np.ptp(y) <= 1e-12 * max(1.0, float(np.abs(y).max())):
        return FitReport(base, float(np.sqrt(np.mean((y - y.mean()) ** 2))), 0, False, degenerate=True)

    def obj(v):
        a, mu, th, bk = _decode(v, fixed_background)
        r = (_model(t, a, mu, th, bk) - y) / yscale
        val = float(r @ r)
        return val if math.isfinite(val) else 1e300

    best = None
    starts = []
    for idx, p0 in enumerate(_starts(base, series)):
        x, f, it, conv = _nelder_mead(obj, _encode(p0, fixed_background is not None), max_iter)
        starts.append({"index": idx, "objective": f, "iterations": it, "converged": conv})
        if best is None or f < best[1]:
            best = (x, f, it, conv, idx)
    x, f, it, conv, idx = best
    a, mu, th, bk = _decode(x, fixed_background)
    degenerate = a < 1e-6 * yscale
    try:
        params = GompertzParams(a, mu, th, max(bk, 0.0))
    except ValueError:
        params, conv, degenerate = base, False, True
    rms = float(np.sqrt(np.mean((gompertz_absorbance(t, params) - y) ** 2)))
    return FitReport(params, rms, it, conv and not degenerate, degenerate, idx, starts)
