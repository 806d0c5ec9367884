"""Stochastic cross-checks of the analytic error bars and test error rates.

Random numbers come from Philox, a counter-based generator.  Trials are cut
into fixed-size blocks and block ``k`` of stream ``s`` is keyed by
``(seed, s, k)``, so a run is bit-identical whatever the number of workers.
Truncated Gaussians are sampled by inverse CDF on the truncated range.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy import special
from statsmodels.stats.proportion import proportion_confint

from .detection import HypothesisPair, error_probabilities
from .metrology import (
    EnergyBudget,
    ProbeSource,
    TruncatedGaussian,
    qcrb_sigma_eta,
    sigma_A_from_sigma_eta,
    truncated_moments,
)

__all__ = [
    "SimConfig",
    "MomentStats",
    "EstimatorReport",
    "TestReport",
    "LogTransformReport",
    "block_rng",
    "sample_truncated_normal",
    "simulate_truncated",
    "simulate_estimator",
    "simulate_test",
    "log_transform_check",
]

BLOCK_SIZE = 1 << 16
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class SimConfig:
    trials: int = 1_000_000
    seed: int = 0
    workers: int = 1
    z: float = 3.0  # agreement band, in standard errors
    confidence: float = 0.99  # Wilson interval level

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if not 0 <= self.seed <= _MASK64:
            raise ValueError("seed must be an unsigned 64-bit integer")


def block_rng(seed: int, stream: int, block: int) -> np.random.Generator:
    """Generator for one block: Philox keyed by seed (low word) and (stream, block) (high word)."""
    high = ((stream & 0xFFFF) << 48) | (block & ((1 << 48) - 1))
    return np.random.Generator(np.random.Philox(key=(high << 64) | (seed & _MASK64)))


def sample_truncated_normal(rng, mean, std, lower, upper, size):
    """Inverse-CDF draws from N(mean, std^2) restricted to [lower, upper]."""
    u = rng.random(size)
    if std == 0:
        return np.full(size, float(mean))
    a = (lower - mean) / std
    b = (upper - mean) / std
    if a > 0:
        # upper tail: invert the survival function to keep precision
        qa, qb = special.ndtr(-a), special.ndtr(-b)
        z = -special.ndtri(qa - u * (qa - qb))
    else:
        pa, pb = special.ndtr(a), special.ndtr(b)
        z = special.ndtri(pa + u * (pb - pa))
    return mean + std * np.clip(z, a, b)


def _blocks(trials: int):
    full, rest = divmod(trials, BLOCK_SIZE)
    sizes = [BLOCK_SIZE] * full + ([rest] if rest else [])
    return list(enumerate(sizes))


def _map_blocks(fn, trials: int, workers: int):
    blocks = _blocks(trials)
    if workers == 1:
        return [fn(k, n) for k, n in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda kn: fn(*kn), blocks))


@dataclass
class MomentStats:
    """Sample mean/std with standard errors, merged from shifted power sums."""

    n: int
    mean: float
    std: float
    se_mean: float
    se_std: float

    @classmethod
    def from_sums(cls, n: int, shift: float, s1: float, s2: float, s3: float, s4: float) -> "MomentStats":
        d = s1 / n
        mean = shift + d
        m2 = s2 / n - d * d
        m4 = s4 / n - 4 * d * s3 / n + 6 * d * d * s2 / n - 3 * d**4
        var = max(m2, 0.0) * n / max(n - 1, 1)
        std = math.sqrt(var)
        se_mean = std / math.sqrt(n)
        # delta method on the sample variance: Var(s) ~ (m4 - m2^2) / (4 m2 n)
        se_std = math.sqrt(max(m4 - m2 * m2, 0.0) / (4 * m2 * n)) if m2 > 0 else 0.0
        return cls(n, mean, std, se_mean, se_std)


def _power_sums(x: np.ndarray, shift: float):
    y = x - shift
    y2 = y * y
    return np.array([y.sum(), y2.sum(), (y2 * y).sum(), (y2 * y2).sum()])


@dataclass
class EstimatorReport:
    config: dict
    scenario: dict
    sample: MomentStats
    analytic_mean: float
    analytic_std: float
    histogram_counts: list[int]
    histogram_edges: list[float]

    @property
    def mean_ok(self) -> bool:
        return _within(self.sample.mean, self.analytic_mean, self.sample.se_mean, self.config["z"])

    @property
    def std_ok(self) -> bool:
        return _within(self.sample.std, self.analytic_std, self.sample.se_std, self.config["z"])

    @property
    def passed(self) -> bool:
        return self.mean_ok and self.std_ok

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "scenario": self.scenario,
            "statistics": asdict(self.sample),
            "analytic": {"mean": self.analytic_mean, "std": self.analytic_std},
            "checks": {
                "mean": {"pass": self.mean_ok, "band": self.config["z"] * self.sample.se_mean},
                "std": {"pass": self.std_ok, "band": self.config["z"] * self.sample.se_std},
            },
            "histogram": {"counts": self.histogram_counts, "edges": self.histogram_edges},
            "pass": self.passed,
        }


def _within(value, expected, se, z):
    if se == 0:
        return abs(value - expected) <= 1e-12 * max(1.0, abs(expected))
    return abs(value - expected) <= z * se


def simulate_truncated(tg: TruncatedGaussian | None, cfg: SimConfig, *, mean: float | None = None,
                       stream: int = 0, bins: int = 50) -> tuple[MomentStats, np.ndarray, np.ndarray]:
    """Sample statistics and histogram of ``tg`` (a point mass at ``mean`` when None)."""
    if tg is None:
        lo, hi, mu, sd = mean, mean, mean, 0.0
        edges = np.linspace(mean - 0.5, mean + 0.5, bins + 1)
    else:
        lo, hi, mu, sd = tg.lower, tg.upper, tg.raw_mean, tg.raw_std
        e_lo = max(lo, mu - 6 * sd)
        e_hi = min(hi, mu + 6 * sd)
        edges = np.linspace(e_lo, e_hi, bins + 1)
    shift = mu

    def one(k, n):
        x = sample_truncated_normal(block_rng(cfg.seed, stream, k), mu, sd, lo, hi, n)
        counts, _ = np.histogram(x, bins=edges)
        return _power_sums(x, shift), counts

    parts = _map_blocks(one, cfg.trials, cfg.workers)
    sums = np.zeros(4)
    counts = np.zeros(bins, dtype=np.int64)
    for s, c in parts:  # block order, so float sums do not depend on scheduling
        sums += s
        counts += c
    return MomentStats.from_sums(cfg.trials, shift, *sums), counts, edges


def simulate_estimator(source: ProbeSource, eta_true: float, budget: EnergyBudget, cfg: SimConfig,
                       truncate: bool = True, bins: int = 50) -> EstimatorReport:
    """Draw transmissivity estimates at the Cramer-Rao spread and compare moments.

    With ``truncate`` the estimate is restricted to [0, 1] and compared against
    :func:`truncated_moments`; otherwise against the raw Gaussian.
    """
    sigma = qcrb_sigma_eta(source, eta_true, budget)
    if sigma == 0:
        tg, analytic = None, (eta_true, 0.0)
    elif truncate:
        tg = TruncatedGaussian(eta_true, sigma, 0.0, 1.0)
        analytic = truncated_moments(tg)
    else:
        tg = TruncatedGaussian(eta_true, sigma)
        analytic = (eta_true, sigma)
    stats, counts, edges = simulate_truncated(tg, cfg, mean=eta_true, bins=bins)
    return EstimatorReport(
        # worker count is left out: it must not change any reported value
        config={k: v for k, v in asdict(cfg).items() if k != "workers"},
        scenario={"source": source.to_dict(), "eta_true": eta_true, "n_tot": budget.n_tot,
                  "sigma_eta": sigma, "truncated": truncate},
        sample=stats,
        analytic_mean=analytic[0],
        analytic_std=analytic[1],
        histogram_counts=[int(c) for c in counts],
        histogram_edges=[float(e) for e in edges],
    )


@dataclass
class TestReport:
    __test__ = False

    time: float
    tau: float
    trials: int
    fp_count: int
    fn_count: int
    analytic_fp: float
    analytic_fn: float
    fp_interval: tuple[float, float]
    fn_interval: tuple[float, float]

    @property
    def empirical_fp(self) -> float:
        return self.fp_count / self.trials

    @property
    def empirical_fn(self) -> float:
        return self.fn_count / self.trials

    @property
    def fp_ok(self) -> bool:
        return self.fp_interval[0] <= self.analytic_fp <= self.fp_interval[1]

    @property
    def fn_ok(self) -> bool:
        return self.fn_interval[0] <= self.analytic_fn <= self.fn_interval[1]

    def to_dict(self) -> dict:
        return {
            "time_h": self.time,
            "tau": self.tau,
            "trials": self.trials,
            "empirical": {"p_fp": self.empirical_fp, "p_fn": self.empirical_fn},
            "analytic": {"p_fp": self.analytic_fp, "p_fn": self.analytic_fn},
            "wilson_interval": {"p_fp": list(self.fp_interval), "p_fn": list(self.fn_interval)},
            "pass": {"p_fp": self.fp_ok, "p_fn": self.fn_ok},
        }


def _count_blocks(tg, mean, cfg, stream, predicate):
    if tg is None:
        lo = hi = mu = mean
        sd = 0.0
    else:
        lo, hi, mu, sd = tg.lower, tg.upper, tg.raw_mean, tg.raw_std

    def one(k, n):
        x = sample_truncated_normal(block_rng(cfg.seed, stream, k), mu, sd, lo, hi, n)
        return int(np.count_nonzero(predicate(x)))

    return sum(_map_blocks(one, cfg.trials, cfg.workers))


def wilson_interval(count: int, n: int, confidence: float = 0.99) -> tuple[float, float]:
    lo, hi = proportion_confint(count, n, alpha=1.0 - confidence, method="wilson")
    return float(lo), float(hi)


def simulate_test(pair: HypothesisPair, t: float, tau: float, cfg: SimConfig) -> TestReport:
    """Empirical false-positive/false-negative rates of threshold ``tau`` at time ``t``.

    Null draws use stream 1 and alternative draws stream 2, so the two rates
    are independent and reproducible.
    """
    if not 0 <= tau <= 1:
        raise ValueError("threshold must lie in [0, 1]")
    (m0, _), (m1, _) = pair.distributions(t)
    tg0, tg1 = pair.truncated(t)
    fp = _count_blocks(tg0, m0, cfg, 1, lambda x: x < tau)
    fn = _count_blocks(tg1, m1, cfg, 2, lambda x: x >= tau)
    afp, afn = error_probabilities(pair, t, tau)
    return TestReport(
        time=t, tau=tau, trials=cfg.trials, fp_count=fp, fn_count=fn,
        analytic_fp=afp, analytic_fn=afn,
        fp_interval=wilson_interval(fp, cfg.trials, cfg.confidence),
        fn_interval=wilson_interval(fn, cfg.trials, cfg.confidence),
    )


@dataclass
class LogTransformReport:
    sample_std_A: float
    analytic_sigma_A: float
    se_std_A: float

    @property
    def ratio(self) -> float:
        if self.analytic_sigma_A == 0:
            return 1.0 if self.sample_std_A == 0 else math.inf
        return self.sample_std_A / self.analytic_sigma_A


def log_transform_check(eta_mean: float, sigma_eta: float, cfg: SimConfig) -> LogTransformReport:
    """Compare the spread of ``-log10`` of Gaussian estimates with the first-order error bar."""
    if not 0 < eta_mean <= 1:
        raise ValueError("eta_mean must lie in (0, 1]")
    if sigma_eta < 0 or sigma_eta >= 0.1 * eta_mean:
        raise ValueError("need 0 <= sigma_eta < 0.1 * eta_mean for the first-order expansion")
    analytic = sigma_A_from_sigma_eta(sigma_eta, eta_mean)
    if sigma_eta == 0:
        return LogTransformReport(0.0, analytic, 0.0)
    shift = -math.log10(eta_mean)

    def one(k, n):
        x = sample_truncated_normal(block_rng(cfg.seed, 3, k), eta_mean, sigma_eta, 0.0, math.inf, n)
        return _power_sums(-np.log10(x), shift)

    sums = np.zeros(4)
    for s in _map_blocks(one, cfg.trials, cfg.workers):
        sums += s
    stats = MomentStats.from_sums(cfg.trials, shift, *sums)
    return LogTransformReport(stats.std, analytic, stats.se_std)
