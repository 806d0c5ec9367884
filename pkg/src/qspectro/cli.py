"""Command-line entry point: ``qspectro {fit,errorbars,detect,discriminate,simulate}``.

Every command writes its tables/reports plus ``manifest.json`` into
``--output-dir``.  Exit codes: 0 success, 2 input error, 3 numerical
failure, 4 detection target not reached.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import warnings
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .detection import (
    HypothesisPair,
    blank_pair,
    detection_time,
    mean_error,
    species_pair_from_gompertz,
    sweep,
)
from .errors import (
    DivergentInformationError,
    ModelDomainError,
    SchemaError,
    TruncationUnderflowError,
)
from .growth import CubicDecayParams, GompertzParams, gompertz_absorbance
from .ingest import (
    filter_and_scale,
    fit_gompertz,
    parse_readings,
    reduce_replicates,
)
from .metrology import (
    EnergyBudget,
    ProbeSource,
    TruncatedGaussian,
    resolve_budget,
    sigma_A_bound,
    truncated_moments,
)
from .montecarlo import SimConfig, simulate_estimator, simulate_test

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_NOT_REACHED = 0, 2, 3, 4


class InputError(Exception):
    pass


# -- serialization ------------------------------------------------------------

def fmt(x) -> str:
    """17 significant digits: exact round trip for doubles."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return "" if x is None else str(x)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dump_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def dump_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r.get(c)) for c in columns])
    return buf.getvalue()


class Run:
    """Collects inputs and outputs of one command and writes the manifest."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.out_dir = Path(args.output_dir)
        self.params = {k: v for k, v in sorted(vars(args).items())
                       if k not in ("func", "output_dir", "command")}
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []

    def record_input(self, name: str, data: bytes):
        self.inputs[name] = "sha256:" + hashlib.sha256(data).hexdigest()

    def write(self, name: str, text: str):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / name).write_text(text, encoding="utf-8")
        self.outputs.append(name)

    def finish(self):
        manifest = {
            "command": self.command,
            "parameters": self.params,
            "input_hashes": self.inputs,
            "output_paths": sorted(self.outputs),
            "tool_version": __version__,
        }
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / "manifest.json").write_text(dump_json(manifest), encoding="utf-8")


# -- input resolution -----------------------------------------------------------

BUNDLED = ("gompertz_reference", "gompertz_ecoli", "gompertz_salmonella", "blank_detection", "species_discrimination")


def read_input(ref: str, run: Run) -> bytes:
    """File path, or ``bundled:<name>`` / bare bundled name for packaged scenarios."""
    name = ref[len("bundled:"):] if ref.startswith("bundled:") else ref
    path = Path(ref)
    if path.is_file():
        data = path.read_bytes()
    elif name in BUNDLED or name.removesuffix(".json") in BUNDLED:
        fname = name if name.endswith(".json") else name + ".json"
        data = resources.files("qspectro").joinpath("scenarios", fname).read_bytes()
        ref = "bundled:" + fname
    else:
        raise InputError(f"input not found: {ref}")
    run.record_input(ref, data)
    return data


def load_json(ref: str, run: Run) -> dict:
    try:
        return json.loads(read_input(ref, run).decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise InputError(f"{ref}: invalid JSON ({exc})") from None


def load_gompertz(ref: str, run: Run, species: str | None = None) -> GompertzParams:
    """Parameters from a bare parameter file or a ``fit.json`` report."""
    d = load_json(ref, run)
    if "fits" in d:
        fits = d["fits"]
        if species is None:
            if len(fits) != 1:
                raise InputError(f"{ref}: several species {sorted(fits)}; choose one with --species")
            species = next(iter(fits))
        if species not in fits:
            raise InputError(f"{ref}: no species {species!r}")
        d = fits[species]
    if "params" in d:
        d = d["params"]
    try:
        return GompertzParams.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{ref}: bad Gompertz parameters ({exc})") from None


def parse_source(spec: str) -> ProbeSource:
    """``coherent`` | ``optimal`` | ``squeezed:<dB>`` | ``thermal:<x>[:<n_bar>]``."""
    parts = spec.strip().lower().split(":")
    try:
        if parts[0] == "coherent" and len(parts) == 1:
            return ProbeSource.coherent()
        if parts[0] == "optimal" and len(parts) == 1:
            return ProbeSource.optimal()
        if parts[0] == "squeezed" and len(parts) <= 2:
            return ProbeSource.squeezed(float(parts[1]) if len(parts) == 2 else 1.0)
        if parts[0] == "thermal" and len(parts) in (2, 3):
            n_bar = float(parts[2]) if len(parts) == 3 else 1.0
            return ProbeSource.thermal(float(parts[1]), n_bar)
    except ValueError as exc:
        raise InputError(f"bad source {spec!r}: {exc}") from None
    raise InputError(f"bad source {spec!r}; expected coherent|optimal|squeezed:<dB>|thermal:<x>")


def time_grid(t_min: float, t_max: float, t_step: float) -> np.ndarray:
    if not t_step > 0 or not t_max >= t_min:
        raise InputError("need t_step > 0 and t_max >= t_min")
    n = int(math.floor((t_max - t_min) / t_step + 1e-9)) + 1
    return np.minimum(t_min + t_step * np.arange(n), t_max)


# -- commands ----------------------------------------------------------------------

def cmd_fit(args, run: Run) -> int:
    try:
        text = read_input(args.input, run).decode("utf-8")
    except UnicodeDecodeError:
        raise InputError("input is not UTF-8") from None
    readings = parse_readings(text.splitlines())
    if not readings:
        raise SchemaError("no data rows", line=2)
    species = sorted({r.species for r in readings})
    if args.species:
        if args.species not in species:
            raise InputError(f"species {args.species!r} not in file (found {species})")
        species = [args.species]
    fits, series_out = {}, {}
    for sp in species:
        scaled = filter_and_scale([r for r in readings if r.species == sp], rule=args.dilution_rule)
        series = reduce_replicates(scaled, args.grouping_tolerance, species=sp)
        if len(series) < 5:
            raise InputError(f"species {sp!r}: {len(series)} time points after filtering, need >= 5")
        report = fit_gompertz(series, fixed_background=args.blank_A)
        fits[sp] = report.to_dict()
        series_out[sp] = series.to_dict()
    run.write("fit.json", dump_json({"fits": fits}))
    run.write("series.json", dump_json({"series": series_out}))
    print(f"{'species':<16}{'a':>12}{'mu':>12}{'theta':>12}{'A_bk':>12}{'rms':>12}  converged")
    for sp, f in fits.items():
        p = f["params"]
        print(f"{sp:<16}{p['asymptote_a']:>12.6g}{p['rate_mu']:>12.6g}{p['lag_theta']:>12.6g}"
              f"{p['background_Abk']:>12.6g}{f['residual_rms']:>12.3g}  {f['converged']}")
    return EXIT_OK


def errorbar_rows(params: GompertzParams, source: ProbeSource, n_tot: float, times) -> list[dict]:
    """Mean absorbance and one-sigma band; bands crossing A = 0 use the truncated moments."""
    budget = resolve_budget(source, EnergyBudget(n_tot))
    rows = []
    for t in times:
        A = float(gompertz_absorbance(float(t), params))
        s = float(sigma_A_bound(source, A, budget))
        truncated = s > 0 and A - s < 0
        if truncated:
            mean, std = truncated_moments(TruncatedGaussian(A, s, 0.0, math.inf))
        else:
            mean, std = A, s
        rows.append({"t": float(t), "A_model": A, "A_mean": mean, "A_lo": mean - std,
                     "A_hi": mean + std, "sigma_A": std, "truncated": truncated})
    return rows


def cmd_errorbars(args, run: Run) -> int:
    params = load_gompertz(args.input, run, args.species)
    times = time_grid(args.t_min, args.t_max, args.t_step)
    out = []
    for spec in args.source or ["coherent"]:
        src = parse_source(spec)
        for r in errorbar_rows(params, src, args.n_tot, times):
            out.append({"source": src.name, "n_tot": args.n_tot, **r})
    run.write("errorbars.csv", dump_csv(out, ["source", "n_tot", "t", "A_model", "A_mean", "A_lo",
                                              "A_hi", "sigma_A", "truncated"]))
    print(f"wrote {len(out)} rows to {run.out_dir / 'errorbars.csv'}")
    return EXIT_OK


SWEEP_COLUMNS = ["source", "probes_N", "t", "tau_star", "p_fp", "p_fn", "p_mean",
                 "tau_fixed_fp", "p_fn_fixed_fp"]


def _scenario_pair_factory(sc: dict):
    kind = sc.get("kind")
    try:
        if kind == "growth_vs_blank":
            cubic = CubicDecayParams.from_dict(sc["cubic"])
            return lambda src, budget: blank_pair(cubic, src, budget)
        if kind == "species":
            null = GompertzParams.from_dict(sc["null"])
            alt = GompertzParams.from_dict(sc["alternative"])
            degree = sc.get("polynomial_degree")
            return lambda src, budget: species_pair_from_gompertz(alt, null, src, budget, degree)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"bad scenario: {exc}") from None
    raise InputError(f"unknown scenario kind {kind!r}")


def _settings(args, sc: dict) -> dict:
    window = sc.get("window", [0.0, 3.0])
    s = {
        "n_tot": args.n_tot if args.n_tot is not None else sc.get("n_tot", 150),
        "sources": args.source or sc.get("sources", ["coherent", "optimal"]),
        "mode": args.mode or sc.get("mode", "symmetric"),
        "target": args.target if args.target is not None else sc.get("target", 0.05),
        "fp": args.fp if args.fp is not None else sc.get("fp", 0.01),
        "t_min": args.t_min if args.t_min is not None else window[0],
        "t_max": args.t_max if args.t_max is not None else window[1],
        "t_step": args.t_step if args.t_step is not None else sc.get("t_step", 0.05),
    }
    if not 0 < s["target"] < 1 or not 0 < s["fp"] < 1:
        raise InputError("--target and --fp must lie in (0, 1)")
    if s["mode"] not in ("symmetric", "asymmetric"):
        raise InputError(f"unknown mode {s['mode']!r}")
    return s


def run_detection(sc: dict, s: dict, run: Run) -> int:
    make_pair = _scenario_pair_factory(sc)
    times = time_grid(s["t_min"], s["t_max"], s["t_step"])
    rows, summary = [], {}
    not_reached = False
    for spec in s["sources"]:
        src = parse_source(spec)
        pair = make_pair(src, EnergyBudget(s["n_tot"]))
        for r in sweep(pair, times, s["fp"]):
            rows.append({"source": src.name, "probes_N": pair.probes_N, **r})
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            det = detection_time(pair, s["mode"], s["target"], (s["t_min"], s["t_max"]),
                                 target_fp=s["fp"], grid_step=min(s["t_step"], 0.02))
        not_reached |= not det.reached
        summary[src.name] = {"probes_N": pair.probes_N, "source": src.to_dict(), **det.to_dict()}
    run.write("sweep.csv", dump_csv(rows, SWEEP_COLUMNS))
    run.write("summary.json", dump_json({"scenario": sc.get("kind"), "mode": s["mode"],
                                         "target": s["target"], "fp": s["fp"],
                                         "n_tot": s["n_tot"], "detection": summary}))
    print(f"{'source':<18}{'N':>10}  detection time (h)")
    for name, d in summary.items():
        t = f"{d['time_h']:.3f}" if d["reached"] else f"not reached (final error {d['final_error']:.3g})"
        print(f"{name:<18}{d['probes_N']:>10}  {t}")
    return EXIT_NOT_REACHED if not_reached else EXIT_OK


def cmd_detect(args, run: Run) -> int:
    sc = load_json(args.input, run)
    return run_detection(sc, _settings(args, sc), run)


def cmd_discriminate(args, run: Run) -> int:
    if args.input:
        sc = load_json(args.input, run)
    else:
        sc = load_json("bundled:species_discrimination.json", run)
    if args.ecoli:
        sc["alternative"] = load_gompertz(args.ecoli, run).to_dict()
    if args.salmo:
        sc["null"] = load_gompertz(args.salmo, run).to_dict()
    if sc.get("kind") != "species":
        raise InputError("discriminate needs a species scenario")
    return run_detection(sc, _settings(args, sc), run)


def cmd_simulate(args, run: Run) -> int:
    sc = load_json(args.input, run)
    s = _settings(args, sc)
    cfg = SimConfig(trials=args.trials, seed=args.seed, workers=args.workers)
    reports = {}
    all_pass = True
    if sc.get("kind") == "estimator":
        try:
            eta = float(sc["eta"]) if "eta" in sc else 10.0 ** (-float(sc["A"]))
        except (KeyError, ValueError) as exc:
            raise InputError(f"estimator scenario needs 'eta' or 'A' ({exc})") from None
        for spec in s["sources"]:
            src = parse_source(spec)
            rep = simulate_estimator(src, eta, EnergyBudget(s["n_tot"]), cfg)
            reports[src.name] = {"estimator": rep.to_dict()}
            all_pass &= rep.passed
    else:
        make_pair = _scenario_pair_factory(sc)
        t = float(sc.get("time", 0.5 * (s["t_min"] + s["t_max"])))
        for spec in s["sources"]:
            src = parse_source(spec)
            pair: HypothesisPair = make_pair(src, EnergyBudget(s["n_tot"]))
            _, tau = mean_error(pair, t)
            test = simulate_test(pair, t, tau, cfg)
            (m0, _), (m1, _) = pair.distributions(t)
            est0 = simulate_estimator(src, m0, EnergyBudget(s["n_tot"]), cfg)
            est1 = simulate_estimator(src, m1, EnergyBudget(s["n_tot"]), cfg)
            reports[src.name] = {
                "test": test.to_dict(),
                "estimator_null": est0.to_dict(),
                "estimator_alternative": est1.to_dict(),
            }
            all_pass &= test.fp_ok and test.fn_ok and est0.passed and est1.passed
    run.write("simulation.json", dump_json({
        "config": {"trials": cfg.trials, "seed": cfg.seed, "z": cfg.z, "confidence": cfg.confidence},
        "scenario": sc,
        "reports": reports,
        "pass": all_pass,
    }))
    print(f"simulation {'PASS' if all_pass else 'FAIL'}: {len(reports)} source(s), {cfg.trials} trials each")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qspectro",
        description="Quantum-limited error bars and early detection of bacterial growth.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, input_required=True, input_default=None):
        p.add_argument("--input", required=input_required, default=input_default,
                       help="file path or bundled:<name>")
        p.add_argument("--output-dir", default="out", metavar="DIR")

    def sweep_flags(p):
        p.add_argument("--source", action="append", metavar="SPEC",
                       help="coherent|optimal|squeezed:<dB>|thermal:<x>[:<n_bar>]; repeatable")
        p.add_argument("--n-tot", type=float, default=None)
        p.add_argument("--mode", choices=["symmetric", "asymmetric"], default=None)
        p.add_argument("--target", type=float, default=None)
        p.add_argument("--fp", type=float, default=None)
        p.add_argument("--t-min", type=float, default=None)
        p.add_argument("--t-max", type=float, default=None)
        p.add_argument("--t-step", type=float, default=None)

    p = sub.add_parser("fit", help="fit Gompertz curves to replicate readings (CSV)")
    common(p)
    p.add_argument("--species", default=None)
    p.add_argument("--blank-A", type=float, default=None, help="freeze background absorbance")
    p.add_argument("--dilution-rule", choices=["literal", "physical"], default="literal")
    p.add_argument("--grouping-tolerance", type=float, default=0.0)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("errorbars", help="Cramer-Rao error bars along a Gompertz curve")
    common(p, input_required=False, input_default="bundled:gompertz_reference.json")
    p.add_argument("--species", default=None)
    p.add_argument("--source", action="append", metavar="SPEC")
    p.add_argument("--n-tot", type=float, default=100.0)
    p.add_argument("--t-min", type=float, default=0.0)
    p.add_argument("--t-max", type=float, default=6.0)
    p.add_argument("--t-step", type=float, default=0.1)
    p.set_defaults(func=cmd_errorbars)

    p = sub.add_parser("detect", help="growth-vs-blank (or any scenario) detection sweep")
    common(p, input_required=False, input_default="bundled:blank_detection.json")
    sweep_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("discriminate", help="species discrimination sweep")
    common(p, input_required=False)
    p.add_argument("--ecoli", default=None, help="alternative-hypothesis Gompertz parameters")
    p.add_argument("--salmo", default=None, help="null-hypothesis Gompertz parameters")
    sweep_flags(p)
    p.set_defaults(func=cmd_discriminate)

    p = sub.add_parser("simulate", help="Monte Carlo cross-check of a scenario")
    common(p, input_required=False, input_default="bundled:blank_detection.json")
    sweep_flags(p)
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    run = Run(args.command, args)
    try:
        code = args.func(args, run)
    except (InputError, SchemaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DivergentInformationError, TruncationUnderflowError, ModelDomainError,
            FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    run.finish()
    return code


if __name__ == "__main__":
    sys.exit(main())
