import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from qspectro.cli import fmt, main, parse_source, time_grid, InputError
from qspectro.growth import GompertzParams, gompertz_absorbance

HEADER = "species,time_h,dilution,od,replicate\n"


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _write_readings(path, params_by_species, times, rule="physical"):
    lines = [HEADER]
    for sp, p in params_by_species.items():
        for t in times:
            A = float(gompertz_absorbance(t, p))
            for rep, d in enumerate((1, 2, 5, 10)):
                od = A / d if rule == "physical" else A * d
                lines.append(f"{sp},{float(t)!r},{d},{od!r},r{rep}\n")
    path.write_text("".join(lines))


def _params_file(path, p):
    path.write_text(json.dumps(p.to_dict()))
    return str(path)


# -- helpers ----------------------------------------------------------------------

def test_fmt_round_trips():
    x = 0.1 + 0.2
    assert float(fmt(x)) == x
    assert fmt(True) == "1" and fmt(None) == "" and fmt(3) == "3"


def test_parse_source():
    assert parse_source("coherent").kind.value == "coherent"
    assert parse_source("squeezed:1").n_bar_per_probe == pytest.approx(0.0133134, rel=1e-5)
    th = parse_source("thermal:0.3:2")
    assert th.asymmetry_x == 0.3 and th.n_bar_per_probe == 2.0
    for bad in ("laser", "thermal", "squeezed:x", "coherent:1"):
        with pytest.raises(InputError):
            parse_source(bad)


def test_time_grid_ends_at_t_max():
    g = time_grid(0.0, 3.0, 0.05)
    assert len(g) == 61 and g[-1] == 3.0
    with pytest.raises(InputError):
        time_grid(0.0, 1.0, 0.0)


# -- fit ----------------------------------------------------------------------------

def test_fit_recovers_reference_curve(tmp_path):
    data = tmp_path / "r.csv"
    _write_readings(data, {"reference": GompertzParams(9.4, 1.7, 2.9, 0.036)}, np.linspace(0, 6, 25))
    out = tmp_path / "out"
    code = main(["fit", "--input", str(data), "--dilution-rule", "physical", "--output-dir", str(out)])
    assert code == 0
    fit = json.loads((out / "fit.json").read_text())["fits"]["reference"]
    assert fit["params"]["asymptote_a"] == pytest.approx(9.4, rel=1e-4)
    assert fit["converged"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "fit"
    assert manifest["input_hashes"][str(data)].startswith("sha256:")
    assert manifest["output_paths"] == ["fit.json", "series.json"]


def test_fit_two_species(tmp_path):
    data = tmp_path / "r.csv"
    ps = {"ecoli": GompertzParams(0.309, 0.139, 2.634, 0.144),
          "salmonella": GompertzParams(0.242, 0.0882, 2.672, 0.144)}
    # literal rule: effective OD = OD_d / d, so write d * A
    _write_readings(data, ps, np.linspace(0, 24, 25), rule="literal")
    out = tmp_path / "out"
    assert main(["fit", "--input", str(data), "--output-dir", str(out)]) == 0
    fits = json.loads((out / "fit.json").read_text())["fits"]
    assert sorted(fits) == ["ecoli", "salmonella"]
    for sp, p in ps.items():
        assert fits[sp]["params"]["rate_mu"] == pytest.approx(p.rate_mu, rel=1e-3)
    out2 = tmp_path / "out2"
    assert main(["fit", "--input", str(data), "--species", "ecoli", "--output-dir", str(out2)]) == 0
    assert list(json.loads((out2 / "fit.json").read_text())["fits"]) == ["ecoli"]


def test_fit_empty_file(tmp_path, capsys):
    data = tmp_path / "empty.csv"
    data.write_text("")
    assert main(["fit", "--input", str(data), "--output-dir", str(tmp_path / "o")]) == 2
    assert "line 1" in capsys.readouterr().err


def test_fit_schema_error_line(tmp_path, capsys):
    data = tmp_path / "bad.csv"
    data.write_text(HEADER + "e,0,1,0.1,r\ne,oops,1,0.1,r\n")
    assert main(["fit", "--input", str(data), "--output-dir", str(tmp_path / "o")]) == 2
    assert "line 3" in capsys.readouterr().err


def test_missing_input(tmp_path):
    assert main(["fit", "--input", str(tmp_path / "nope.csv"), "--output-dir", str(tmp_path)]) == 2


# -- errorbars ---------------------------------------------------------------------

def test_errorbars_coherent_scaling(tmp_path):
    widths, plain = {}, None
    for n in (100, 1000, 10000):
        out = tmp_path / str(n)
        assert main(["errorbars", "--source", "coherent", "--n-tot", str(n), "--output-dir", str(out)]) == 0
        rows = _read_csv(out / "errorbars.csv")
        widths[n] = np.array([float(r["A_hi"]) - float(r["A_lo"]) for r in rows])
        mask = np.array([r["truncated"] == "0" for r in rows])
        plain = mask if plain is None else plain & mask
    # the scaling law holds wherever no bar is cut at A = 0
    assert plain.sum() > 40
    assert np.allclose(widths[100][plain] / widths[1000][plain], math.sqrt(10), rtol=1e-6, atol=0)
    assert np.allclose(widths[1000][plain] / widths[10000][plain], math.sqrt(10), rtol=1e-6, atol=0)


def test_errorbars_optimal_near_zero(tmp_path):
    params = _params_file(tmp_path / "p.json", GompertzParams(1.0, 0.5, 3.0, 0.0))
    out = tmp_path / "o"
    code = main(["errorbars", "--input", params, "--source", "optimal", "--n-tot", "100",
                 "--t-min", "0", "--t-max", "3", "--t-step", "0.25", "--output-dir", str(out)])
    assert code == 0
    rows = _read_csv(out / "errorbars.csv")
    assert any(r["truncated"] == "1" for r in rows)
    for r in rows:
        assert float(r["A_lo"]) >= 0
        if r["truncated"] == "1":
            # asymmetric: the mean moves up, away from the model value
            assert float(r["A_mean"]) > float(r["A_model"])


def test_errorbars_zero_width_at_zero_absorbance(tmp_path):
    params = _params_file(tmp_path / "p.json", GompertzParams(1.0, 2.0, 20.0, 0.0))
    out = tmp_path / "o"
    assert main(["errorbars", "--input", params, "--source", "optimal", "--t-max", "1",
                 "--output-dir", str(out)]) == 0
    row = _read_csv(out / "errorbars.csv")[0]
    assert float(row["A_model"]) == 0.0
    assert float(row["A_hi"]) - float(row["A_lo"]) == 0.0


# -- detect / discriminate -----------------------------------------------------------

def test_detect_bundled(tmp_path):
    out = tmp_path / "o"
    assert main(["detect", "--output-dir", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())["detection"]
    assert summary["coherent"]["time_h"] == pytest.approx(2.0, abs=0.5)
    assert summary["optimal"]["time_h"] == pytest.approx(1.0, abs=0.5)
    sq = next(v for k, v in summary.items() if k.startswith("squeezed"))
    assert abs(sq["probes_N"] - 11267) <= 5
    rows = _read_csv(out / "sweep.csv")
    assert rows[0].keys() >= {"t", "tau_star", "p_fp", "p_fn", "p_mean"}
    assert float(rows[0]["p_mean"]) == pytest.approx(0.5)


def test_detect_not_reached(tmp_path):
    out = tmp_path / "o"
    assert main(["detect", "--target", "1e-30", "--source", "coherent", "--output-dir", str(out)]) == 4
    d = json.loads((out / "summary.json").read_text())["detection"]["coherent"]
    assert d["reached"] is False and d["time_h"] is None and d["final_error"] > 0
    assert (out / "manifest.json").exists()


def test_detect_out_of_window_is_numeric_failure(tmp_path):
    assert main(["detect", "--t-max", "4", "--output-dir", str(tmp_path)]) == 3


def test_discriminate_bundled(tmp_path):
    out = tmp_path / "o"
    assert main(["discriminate", "--t-max", "4.4", "--output-dir", str(out)]) == 0
    d = json.loads((out / "summary.json").read_text())["detection"]
    assert d["coherent"]["time_h"] - d["optimal"]["time_h"] == pytest.approx(0.5, abs=0.25)
    sq = next(v for k, v in d.items() if k.startswith("squeezed"))
    assert abs(sq["probes_N"] - 75113) <= 5


def test_discriminate_identical_flat(tmp_path):
    p = _params_file(tmp_path / "p.json", GompertzParams(0.309, 0.139, 2.634, 0.144))
    out = tmp_path / "o"
    code = main(["discriminate", "--ecoli", p, "--salmo", p, "--source", "optimal", "--output-dir", str(out)])
    assert code == 4
    rows = _read_csv(out / "sweep.csv")
    assert all(float(r["p_mean"]) == pytest.approx(0.5, abs=1e-12) for r in rows)


# -- simulate -----------------------------------------------------------------------

def test_simulate_bundled(tmp_path):
    out = tmp_path / "o"
    assert main(["simulate", "--trials", "200000", "--seed", "3", "--output-dir", str(out)]) == 0
    rep = json.loads((out / "simulation.json").read_text())
    assert rep["pass"] is True
    assert set(rep["reports"]) >= {"coherent", "optimal"}


def test_simulate_estimator_scenario(tmp_path):
    sc = tmp_path / "sc.json"
    sc.write_text(json.dumps({"kind": "estimator", "A": 0.3, "n_tot": 100, "sources": ["coherent"]}))
    out = tmp_path / "o"
    assert main(["simulate", "--input", str(sc), "--trials", "100000", "--output-dir", str(out)]) == 0
    rep = json.loads((out / "simulation.json").read_text())
    assert rep["reports"]["coherent"]["estimator"]["pass"] is True


# -- reproducibility -----------------------------------------------------------------

@pytest.mark.parametrize("argv", [
    ["detect", "--t-step", "0.25"],
    ["errorbars", "--source", "optimal", "--source", "squeezed:1"],
    ["simulate", "--trials", "70000", "--workers", "1"],
])
def test_byte_identical_reruns(tmp_path, argv):
    a, b = tmp_path / "a", tmp_path / "b"
    main(argv + ["--output-dir", str(a)])
    extra = ["--workers", "3"] if argv[0] == "simulate" else []
    main(argv + extra + ["--output-dir", str(b)])
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for name in names:
        if name == "manifest.json" and extra:
            continue  # the worker count is recorded as a parameter
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "qspectro", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("qspectro ")
