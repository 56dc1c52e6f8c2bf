import json

import pytest

from prlcsim.harness.cli import (EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_OK, EXIT_THEORY, EXIT_USAGE,
                                 run_cli)
from prlcsim.harness.io import (CSV_HEADER, RunManifest, atomic_write, export_series,
                                read_series_csv, series_to_csv)
from prlcsim.harness.presets import PRESETS, run_preset
from prlcsim.harness.sweep import SweepSpec, ratio_ordering, run_sweep
from prlcsim.policies import PullPolicy
from prlcsim.simulator import (ConfigError, EtaSchedule, ExperimentConfig, IterationRecord,
                               MetricsSeries, run)

QUAD = {"kind": "quadratic", "d": 3, "N": 30, "condition_number": 4.0}


def small_cfg(**kw):
    base = dict(objective=QUAD, policy=PullPolicy("PRLC", 0.4), P=4, T=40, B=2,
                eta_schedule=EtaSchedule("constant", eta0=0.1), seed=3)
    return ExperimentConfig(**(base | kw))


# --- io ------------------------------------------------------------------------

def test_empty_series_is_header_only(tmp_path):
    path, _ = export_series(MetricsSeries("d", 0, 1), tmp_path / "e.csv")
    assert path.read_text() == ",".join(CSV_HEADER) + "\n"


def test_three_records_four_lines(tmp_path):
    recs = [IterationRecord(t, 0.1, 1.0 / t, 2.0, t, 0.0) for t in (1, 2, 3)]
    path, _ = export_series(MetricsSeries("d", 3, 1, recs), tmp_path / "s.csv")
    assert len(path.read_text().splitlines()) == 4


def test_csv_round_trip_bit_identical(tmp_path):
    s = run(small_cfg())
    path, _ = export_series(s, tmp_path / "s.csv")
    assert read_series_csv(path) == s.records
    n = run(small_cfg(objective={"kind": "logistic", "d": 3, "N": 40}))
    path, _ = export_series(n, tmp_path / "n.csv")
    back = read_series_csv(path)
    assert back == n.records and back[0].optimality_gap is None


def test_json_export(tmp_path):
    s = run(small_cfg())
    path, _ = export_series(s, tmp_path / "s.json", fmt="json")
    doc = json.loads(path.read_text())
    assert doc["config_digest"] == s.config_digest and len(doc["records"]) == 40
    with pytest.raises(ValueError):
        export_series(s, tmp_path / "s.xml", fmt="xml")


def test_manifest_round_trip_and_rerun(tmp_path):
    c = small_cfg()
    s = run(c)
    path, mpath = export_series(s, tmp_path / "s.csv", c.to_dict())
    m = RunManifest.load(mpath)
    assert RunManifest.from_json(m.to_json()) == m
    assert m.config_digest == c.digest() and m.artifact_digests["s.csv"]
    again = run(ExperimentConfig.from_dict(m.config))
    assert series_to_csv(again) == path.read_text()


def test_export_io_error_names_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        export_series(run(small_cfg()), blocker / "sub" / "s.csv")


def test_atomic_write_leaves_no_temp(tmp_path):
    atomic_write(tmp_path / "a.txt", "hello")
    atomic_write(tmp_path / "a.txt", b"bytes")
    assert [p.name for p in tmp_path.iterdir()] == ["a.txt"]
    assert (tmp_path / "a.txt").read_bytes() == b"bytes"


# --- sweeps ----------------------------------------------------------------------

def sweep_spec():
    return SweepSpec(base=small_cfg().to_dict(), parameter="ratio", values=[0.1, 0.2, 0.4, 0.8],
                     seeds=[0, 1, 2])


def test_sweep_completeness(tmp_path):
    summary = run_sweep(sweep_spec(), tmp_path)
    csvs = sorted(p.name for p in tmp_path.glob("*.csv"))
    assert len(csvs) == 12 and len(set(csvs)) == 12
    assert (tmp_path / "summary.json").exists()
    assert len(summary["cells"]) == 12 and "ratio_ordering_holds" in summary


def test_sweep_parallel_matches_serial(tmp_path):
    run_sweep(sweep_spec(), tmp_path / "a", parallel=1)
    run_sweep(sweep_spec(), tmp_path / "b", parallel=3)
    for p in (tmp_path / "a").glob("*.csv"):
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_sweep_other_parameters():
    for param, values in (("P", [2, 4]), ("eta0", [0.05, 0.1]), ("policy", ["NSGD", {"kind": "PR", "ratio": 0.6}])):
        spec = SweepSpec(base=small_cfg().to_dict(), parameter=param, values=values, seeds=[0])
        assert len({c[0] for c in spec.cells()}) == 2


def test_sweep_spec_validation():
    with pytest.raises(ConfigError):
        SweepSpec(base=small_cfg().to_dict(), parameter="B", values=[1])
    with pytest.raises(ConfigError):
        SweepSpec.from_dict({"base": small_cfg().to_dict(), "parameter": "ratio", "values": [0.1], "oops": 1})
    with pytest.raises(ConfigError):
        SweepSpec(base=small_cfg().to_dict(), parameter="ratio", values=[])


def test_ratio_ordering_tolerance():
    rows = [{"plateau_mean": m, "plateau_std": 0.1} for m in (1.0, 0.9, 1.05)]
    assert ratio_ordering(rows)
    rows[-1]["plateau_mean"] = 1.15
    assert not ratio_ordering(rows)


# --- presets ---------------------------------------------------------------------

def test_unknown_preset_lists_names():
    with pytest.raises(KeyError) as exc:
        run_preset("nope")
    for name in PRESETS:
        assert name in str(exc.value)


def test_preset_reproducible_bytes(tmp_path):
    run_preset("sanity-nsgd", tmp_path / "a")
    run_preset("sanity-nsgd", tmp_path / "b")
    a = (tmp_path / "a" / "sanity-nsgd.csv").read_bytes()
    assert a == (tmp_path / "b" / "sanity-nsgd.csv").read_bytes()
    assert len(a.splitlines()) == 101


def test_fig2_preset_pull_accounting():
    s = run_preset("fig2-desk")
    assert s["runs"]["NSGD"]["pulls_per_iteration"] == 1.0
    assert abs(s["runs"]["PRLC"]["pulls_per_iteration"] - 0.4) <= 0.02
    assert s["final_loss_rel_diff"] <= 0.02


def test_fig3_preset():
    s = run_preset("fig3-desk")
    assert s["prlc_beats_pr"] and len(s["seeds"]) == 5


def test_strong_convex_preset():
    assert run_preset("strong-convex-bound")["bound_violations"] == 0


# --- CLI -------------------------------------------------------------------------

def test_cli_run_preset(tmp_path):
    assert run_cli(["run", "--preset", "sanity-nsgd", "--out", str(tmp_path)]) == EXIT_OK
    lines = (tmp_path / "sanity-nsgd.csv").read_text().splitlines()
    assert len(lines) == 101


def test_cli_out_dir_from_env(tmp_path, monkeypatch):
    monkeypatch.setenv("PRLC_OUT_DIR", str(tmp_path / "env"))
    assert run_cli(["run", "--preset", "sanity-nsgd"]) == EXIT_OK
    assert (tmp_path / "env" / "sanity-nsgd.csv").exists()


def test_cli_theory_eta_max(capsys):
    assert run_cli(["theory", "eta-max", "--alg", "prlc", "--L", "1", "--r", "0.5"]) == EXIT_OK
    assert "0.166667" in capsys.readouterr().out


def test_cli_theory_json_and_tables(capsys):
    assert run_cli(["theory", "min-T", "--L", "1", "--r", "0.5", "--sigma2", "1", "--P", "4",
                    "--f-gap", "1", "--json"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["T_min"] == pytest.approx(144)
    assert run_cli(["theory", "constants", "--eta", "0.1", "--r", "0.5", "--G", "1",
                    "--sigma2", "1", "--P", "4"]) == EXIT_OK
    assert "A=0.115" in capsys.readouterr().out
    assert run_cli(["theory", "scalability", "--C0", "1", "--C1", "1", "--r", "0.4"]) == EXIT_OK
    assert len(capsys.readouterr().out.splitlines()) == 7


def test_cli_config_not_found(capsys):
    assert run_cli(["run", "--config", "missing.json"]) == EXIT_CONFIG
    assert "config not found" in capsys.readouterr().err


def test_cli_exit_codes(tmp_path, capsys):
    assert run_cli(["run", "--bogus"]) == EXIT_USAGE
    assert run_cli(["frobnicate"]) == EXIT_USAGE
    assert run_cli(["run", "--preset", "nope"]) == EXIT_USAGE
    assert run_cli(["theory", "eta-max", "--alg", "pr", "--r", "0.4"]) == EXIT_THEORY
    assert run_cli(["theory", "bound", "--alg", "prlc", "--eta", "0.4", "--r", "0.5"]) == EXIT_THEORY
    assert run_cli(["theory", "scalability"]) == EXIT_USAGE
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(small_cfg().to_dict() | {"typo": 1}))
    assert run_cli(["run", "--config", str(bad)]) == EXIT_CONFIG
    bad.write_text("{not json")
    assert run_cli(["validate", "--config", str(bad)]) == EXIT_CONFIG
    div = tmp_path / "div.json"
    div.write_text(json.dumps(small_cfg(eta_schedule=EtaSchedule("constant", eta0=80.0), T=2000).to_dict()))
    assert run_cli(["run", "--config", str(div), "--out", str(tmp_path)]) == EXIT_DIVERGENCE
    assert "iteration" in capsys.readouterr().err


def test_cli_help_documents_exit_codes(capsys):
    assert run_cli(["--help"]) == 0
    out = capsys.readouterr().out
    for code in ("0", "2", "3", "4", "5", "6"):
        assert f"  {code}  " in out


def test_cli_run_config_manifest_and_seed(tmp_path, capsys):
    cfgp = tmp_path / "c.json"
    cfgp.write_text(json.dumps(small_cfg().to_dict()))
    assert run_cli(["validate", "--config", str(cfgp)]) == EXIT_OK
    assert run_cli(["run", "--config", str(cfgp), "--out", str(tmp_path / "o")]) == EXIT_OK
    (csv,) = (tmp_path / "o").glob("*.csv")
    (man,) = (tmp_path / "o").glob("*.manifest.json")
    assert run_cli(["run", "--manifest", str(man), "--out", str(tmp_path / "m")]) == EXIT_OK
    assert (tmp_path / "m" / csv.name).read_bytes() == csv.read_bytes()
    assert run_cli(["run", "--config", str(cfgp), "--seed", "9", "--format", "json",
                    "--out", str(tmp_path / "s")]) == EXIT_OK
    (js,) = [p for p in (tmp_path / "s").glob("*.json") if "manifest" not in p.name]
    assert json.loads(js.read_text())["config_digest"] == small_cfg(seed=9).digest()


def test_cli_sweep_and_presets(tmp_path, capsys):
    sp = tmp_path / "sweep.json"
    spec = sweep_spec()
    sp.write_text(json.dumps({"base": spec.base, "parameter": "ratio", "values": [0.2, 0.8], "seeds": [0]}))
    assert run_cli(["validate", "--config", str(sp)]) == EXIT_OK
    assert run_cli(["sweep", "--config", str(sp), "--out", str(tmp_path / "o"), "--parallel", "2"]) == EXIT_OK
    assert len(list((tmp_path / "o").glob("ratio-*.csv"))) == 2
    assert run_cli(["presets"]) == EXIT_OK
    out = capsys.readouterr().out
    assert all(name in out for name in PRESETS)
