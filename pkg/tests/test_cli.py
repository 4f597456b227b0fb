import json
import os
import subprocess
import sys

import pytest

from fppopf import bundled_case
from fppopf.cli import main


def case(name):
    return str(bundled_case(name))


def test_solve_writes_report_and_csvs(tmp_path, capsys):
    out = tmp_path / "r.json"
    assert main(["solve", case("two_bus.json"), "--eps1", "1e-11", "--eps2", "1e-5", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "two_bus.json: optimal" in text
    report = json.loads(out.read_text())
    assert report["status"] == "optimal" and report["schema"] == "fppopf-report/1"
    assert (tmp_path / "r_voltages.csv").exists() and (tmp_path / "r_slacks.csv").exists()


def test_validate_round_trip(tmp_path, capsys):
    out = tmp_path / "r.json"
    main(["solve", case("two_bus.json"), "--out", str(out)])
    assert main(["validate", str(out), "--case", case("two_bus.json")]) == 0
    d = json.loads(out.read_text())
    d["magnitude"] = [1.2 * m for m in d["magnitude"]]
    out.write_text(json.dumps(d))
    assert main(["validate", str(out), "--case", case("two_bus.json")]) == 1
    assert "FAILED" in capsys.readouterr().out


def test_infeasible_exit_code(capsys):
    assert main(["solve", case("two_bus_infeasible.json")]) == 2
    assert "fppopf diagnose" in capsys.readouterr().out


def test_diagnose_ranks_slacks(capsys):
    assert main(["diagnose", case("wb5_mod.m"), "--top", "3"]) == 2
    rows = capsys.readouterr().out.splitlines()
    assert rows[1].split() == ["constraint", "slack"]
    assert rows[2].split()[0] == "voltage-lower/bus2/a"
    assert len(rows) == 5


def test_not_converged_exit_code():
    assert main(["solve", case("wb5.m"), "--max-iter", "1"]) == 3


@pytest.mark.parametrize("argv", [
    ["solve"],
    ["solve", "x.m", "--eps1", "-1"],
    ["frobnicate"],
    ["solve", "/nonexistent/case.m"],
    ["validate", "/nonexistent.json", "--case", "/nonexistent.m"],
    ["convert", "/nonexistent.m", "out.json"],
])
def test_input_errors(argv, capsys):
    assert main(argv) == 4


def test_warm_start_flag(tmp_path, capsys):
    out = tmp_path / "r.json"
    main(["solve", case("wb5.m"), "--out", str(out)])
    assert main(["solve", case("wb5.m"), "--warm-start", str(out), "--out", str(tmp_path / "w.json")]) == 0
    warm = json.loads((tmp_path / "w.json").read_text())
    assert warm["iterations"]["fpp"] + warm["iterations"]["sca"] <= 2
    assert main(["solve", case("two_bus.json"), "--warm-start", str(out)]) == 4


def test_convert(tmp_path, capsys):
    assert main(["convert", case("wb5.m"), str(tmp_path / "wb5.json")]) == 0
    assert main(["convert", str(tmp_path / "wb5.json"), str(tmp_path / "wb5.m")]) == 0
    assert main(["solve", str(tmp_path / "wb5.m"), "--max-iter", "5"]) in (0, 3)


def test_trace_to_stderr(capsys):
    main(["solve", case("two_bus.json"), "--trace"])
    err = capsys.readouterr().err.splitlines()
    assert err[0].split("\t") == ["phase", "iteration", "s", "cost", "dv", "ms"]
    assert err[1].startswith("fpp\t1\t")
    assert any(line.startswith("sca\t") for line in err)


def test_jobs_batch(tmp_path, capsys):
    code = main(["solve", case("two_bus.json"), case("two_bus_infeasible.json"), case("one_bus.json"),
                 "--jobs", "2", "--out", str(tmp_path)])
    assert code == 2
    assert {p.name for p in tmp_path.glob("*.json")} == {"two_bus.json", "two_bus_infeasible.json", "one_bus.json"}


def test_dump_conic(tmp_path, capsys):
    path = tmp_path / "fpp.txt"
    assert main(["solve", case("two_bus.json"), "--dump-conic", str(path)]) == 0
    assert path.read_text().startswith("# fppopf conic program v1")
    assert main(["solve", case("two_bus.json"), case("one_bus.json"), "--dump-conic", str(path)]) == 4


def test_figures(tmp_path, capsys):
    out = tmp_path / "r.json"
    assert main(["diagnose", case("wb5_mod.m"), "--out", str(out), "--figures"]) == 2
    assert (tmp_path / "r_voltages.png").exists() and (tmp_path / "r_slacks.png").exists()


def test_console_script_and_log_env(tmp_path):
    env = dict(os.environ, FPPOPF_LOG="DEBUG")
    proc = subprocess.run([sys.executable, "-m", "fppopf.cli", "solve", case("two_bus.json")],
                          capture_output=True, text=True, env=env, check=False)
    assert proc.returncode == 0
    assert "DEBUG fppopf" in proc.stderr
    quiet = subprocess.run([sys.executable, "-m", "fppopf.cli", "solve", case("two_bus.json")],
                           capture_output=True, text=True, check=False,
                           env={k: v for k, v in os.environ.items() if k != "FPPOPF_LOG"})
    assert quiet.stderr == ""
