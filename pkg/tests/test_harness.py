"""Scenario parsing, the verification harness, and the CLI."""

import json
import numpy as np
import pytest

from l2flow import harness, cli
from l2flow.harness import (
    CheckRecord,
    Scenario,
    ScenarioError,
    VerificationReport,
    parse_scenario,
)


def _write(tmp_path, text, name="scenario.txt"):
    p = tmp_path / name
    p.write_text(text)
    return p


GOOD = """
# quick flat run
n = 8
generator = flat
t_final = 1e-6
dt = 2e-7
snapshot_every = 2
deriv_norms = false
checks = energy_monotone, volume_invariance
"""


def test_parse_scenario(tmp_path):
    sc = parse_scenario(_write(tmp_path, GOOD))
    assert sc.n == 8
    assert sc.generator == "flat"
    assert sc.dt == 2e-7
    assert sc.deriv_norms is False
    assert sc.checks == ("energy_monotone", "volume_invariance")


def test_parse_defaults(tmp_path):
    sc = parse_scenario(_write(tmp_path, "n = 12\n"))
    assert sc.checks == harness.DEFAULT_CHECKS
    assert sc.dt is None
    assert sc.periods == (1.0, 1.0, 1.0, 1.0)


def test_parse_adaptive_dt(tmp_path):
    sc = parse_scenario(_write(tmp_path, "dt = adaptive\n"))
    assert sc.dt is None


def test_parse_rejects_unknown_key(tmp_path):
    with pytest.raises(ScenarioError, match="unknown key"):
        parse_scenario(_write(tmp_path, "volume = 3\n"))


def test_parse_rejects_bad_value(tmp_path):
    with pytest.raises(ScenarioError, match="bad value"):
        parse_scenario(_write(tmp_path, "n = twelve\n"))


def test_parse_rejects_bad_line(tmp_path):
    with pytest.raises(ScenarioError, match="key = value"):
        parse_scenario(_write(tmp_path, "just some words\n"))


def test_parse_rejects_unknown_check(tmp_path):
    with pytest.raises(ScenarioError, match="unknown checks"):
        parse_scenario(_write(tmp_path, "checks = perpetual_motion\n"))


def test_parse_rejects_big_eps(tmp_path):
    with pytest.raises(ScenarioError, match="eps"):
        parse_scenario(_write(tmp_path, "eps = 0.5\n"))


def test_parse_rejects_bad_periods(tmp_path):
    with pytest.raises(ScenarioError, match="periods"):
        parse_scenario(_write(tmp_path, "periods = 1 1 1\n"))


def test_parse_missing_file():
    with pytest.raises(ScenarioError, match="cannot read"):
        parse_scenario("/nonexistent/path.txt")


def test_initial_metric_generators():
    for gen in ("flat", "conformal", "random", "anisotropic"):
        sc = Scenario(n=8, generator=gen)
        m = sc.initial_metric()
        assert m.g.shape == (8, 8, 8, 8, 4, 4)
    with pytest.raises(ScenarioError, match="generator"):
        Scenario(n=8, generator="hyperbolic").initial_metric()


def test_report_duplicate_guard():
    rep = VerificationReport()
    rec = CheckRecord(name="x", anchor="a", mode="assert", value=0.0,
                      tolerance=None, passed=True, runtime=0.0)
    rep.add(rec)
    with pytest.raises(ValueError, match="duplicate"):
        rep.add(rec)
    assert rep.passed
    assert "PASS" in rep.summary()


def test_report_failure_propagates():
    rep = VerificationReport()
    rep.add(CheckRecord(name="bad", anchor="a", mode="assert", value=1.0,
                        tolerance=0.1, passed=False, runtime=0.0))
    rep.add(CheckRecord(name="info", anchor="b", mode="report", value=9.0,
                        tolerance=None, passed=True, runtime=0.0))
    assert not rep.passed
    text = rep.summary()
    assert "FAIL" in text and "REPORT" in text


def test_run_scenario_artifacts(tmp_path):
    sc = parse_scenario(_write(tmp_path, GOOD))
    out = tmp_path / "out"
    report = harness.run_scenario(sc, outdir=out)
    assert report.passed
    assert (out / "history.csv").exists()
    assert (out / "summary.txt").exists()
    payload = json.loads((out / "report.json").read_text())
    assert payload["passed"]
    names = {c["name"] for c in payload["checks"]}
    assert names == {"energy_monotone", "volume_invariance"}
    assert list((out).glob("snapshot_*.bin"))


def test_gradcheck():
    out = harness.gradcheck(Scenario(n=12, generator="random", seed=0))
    assert out["passed"]
    assert out["relative_error"] <= out["tolerance"]


# ---------------------------------------------------------------------------
# CLI

def test_cli_run_pass(tmp_path, monkeypatch, capsys):
    p = _write(tmp_path, GOOD)
    monkeypatch.setenv("L2FLOW_OUTPUT_DIR", str(tmp_path / "cliout"))
    code = cli.main(["run", str(p)])
    assert code == cli.EXIT_PASS
    assert (tmp_path / "cliout" / "history.csv").exists()
    assert "overall: PASS" in capsys.readouterr().out


def test_cli_run_config_error(tmp_path, capsys):
    p = _write(tmp_path, "generator = warp\n")
    # generator validity is discovered when the metric is built
    code = cli.main(["run", str(p)])
    assert code == cli.EXIT_CONFIG


def test_cli_run_missing_scenario(capsys):
    assert cli.main(["run", "/nope/missing.txt"]) == cli.EXIT_CONFIG


def test_cli_run_numerical_abort(tmp_path, capsys):
    p = _write(tmp_path, (
        "n = 8\ngenerator = random\nseed = 0\nt_final = 1.0\ndt = 1.0\n"
        "deriv_norms = false\nchecks = energy_monotone\n"
    ))
    code = cli.main(["run", str(p)])
    assert code == cli.EXIT_ABORT
    assert "abort" in capsys.readouterr().err


def test_cli_verify_and_report(tmp_path, monkeypatch, capsys):
    p = _write(tmp_path, GOOD)
    out = tmp_path / "vout"
    monkeypatch.setenv("L2FLOW_OUTPUT_DIR", str(out))
    assert cli.main(["run", str(p)]) == cli.EXIT_PASS
    capsys.readouterr()
    assert cli.main(["verify", str(out)]) == cli.EXIT_PASS
    text = capsys.readouterr().out
    assert "energy monotone" in text
    assert cli.main(["report", str(out)]) == cli.EXIT_PASS
    assert "overall: PASS" in capsys.readouterr().out


def test_cli_verify_missing_dir(tmp_path, capsys):
    assert cli.main(["verify", str(tmp_path)]) == cli.EXIT_CONFIG


def test_cli_report_missing(tmp_path, capsys):
    assert cli.main(["report", str(tmp_path)]) == cli.EXIT_CONFIG


def test_cli_oracle_gradcheck(tmp_path, capsys):
    p = _write(tmp_path, "n = 12\ngenerator = random\nseed = 0\n")
    assert cli.main(["oracle", "gradcheck", str(p)]) == cli.EXIT_PASS
    assert "PASS" in capsys.readouterr().out


def test_cli_usage_error():
    assert cli.main(["frobnicate"]) == cli.EXIT_CONFIG
