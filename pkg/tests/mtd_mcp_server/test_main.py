import csv
import json

import pytest

from mtd_mcp_server.main import main
from mtd_mcp_server.utils.errors import InvariantViolation

from conftest import DIVERSIFIED, SERVICES, report_path

JAVA_FILES = [str(report_path(service, "java")) for service in SERVICES]
ALL_FILES = JAVA_FILES + [str(report_path(s, v)) for s, v in DIVERSIFIED.items()]


def _stdout_json(capsys):
    return json.loads(capsys.readouterr().out)


def test_throughput(capsys):
    assert main(["throughput", "azure", "--horizon", "86400"]) == 0
    assert _stdout_json(capsys)["regenerations"] == 144


def test_run_to_stdout(capsys):
    assert main(["run", "minimal"]) == 0
    report = _stdout_json(capsys)
    assert report["scenario"] == "minimal"
    assert report["regeneration"]["count"] == 1


def test_run_seed_override(capsys):
    assert main(["run", "minimal", "--seed", "9"]) == 0
    assert _stdout_json(capsys)["seed"] == 9


def test_run_csv_to_file(tmp_path):
    out = tmp_path / "minimal.csv"
    assert main(["run", "minimal", "--format", "csv", "--out", str(out)]) == 0
    with open(out, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["series", "at_s", "key", "value"]
    assert rows[1][:3] == ["regeneration", "81.0", "node-00001"]


def test_run_csv_to_stdout(capsys):
    assert main(["run", "minimal", "--format", "csv"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "series,at_s,key,value"
    assert len(lines) == 2


def test_risk(capsys):
    assert main(["risk", *JAVA_FILES, "--method", "all"]) == 0
    data = _stdout_json(capsys)
    assert data["ranking"] == SERVICES
    assert len(data["risks"]) == 12


def test_risk_mean_aggregation(capsys):
    assert main(["risk", *JAVA_FILES, "--method", "orrm_mean"]) == 0
    data = _stdout_json(capsys)
    assert {r["method"] for r in data["risks"]} == {"orrm_mean"}
    gateway = next(r for r in data["risks"] if r["service"] == "api-gateway")
    assert gateway["score"] == pytest.approx(431 / 94)


def test_risk_all_follows_aggregation_setting(monkeypatch, capsys):
    monkeypatch.setenv("MTD_ORRM_AGGREGATION", "mean")
    assert main(["risk", *JAVA_FILES, "--method", "all"]) == 0
    methods = {r["method"] for r in _stdout_json(capsys)["risks"]}
    assert methods == {"orrm_mean", "cvss_average", "cvss_shrinkage"}


def test_plan(capsys):
    assert main(["plan", *ALL_FILES, "--index", "3:4", "--seed", "5"]) == 0
    data = _stdout_json(capsys)
    assert data["assignments"] == DIVERSIFIED
    assert data["index"] == "3:4"


def test_vertical_matrix(capsys):
    assert main(["matrix", *JAVA_FILES, "--scope", "vertical"]) == 0
    data = _stdout_json(capsys)
    assert data["matrix"]["vuln_keys"] == [22, 79, 200]
    assert all(row == [1, 1, 1] for row in data["matrix"]["rows"])
    assert all(p["r"] is None for p in data["pearson"])


def test_missing_scenario(capsys):
    assert main(["run", "no-such-scenario"]) == 1
    assert "no-such-scenario" in capsys.readouterr().err


def test_invalid_index(capsys):
    assert main(["plan", *ALL_FILES, "--index", "5:4"]) == 1
    assert capsys.readouterr().err


def test_unwritable_output(tmp_path):
    out = tmp_path / "missing" / "report.json"
    assert main(["run", "minimal", "--out", str(out)]) == 1


def test_usage_error_exits_invalid():
    with pytest.raises(SystemExit) as exc_info:
        main(["throughput", "aws"])
    assert exc_info.value.code == 1


def test_invariant_violation_exit_code(monkeypatch, capsys):
    def broken(*args, **kwargs):
        raise InvariantViolation("node node-00001 joined before secgroup admission")

    monkeypatch.setattr("mtd_mcp_server.mtd_tool.run_summary", broken)
    assert main(["run", "minimal"]) == 2
    assert "secgroup" in capsys.readouterr().err


def test_bad_log_level_in_environment(monkeypatch, capsys):
    monkeypatch.setenv("MTD_LOG_LEVEL", "LOUD")
    assert main(["throughput", "aws", "--horizon", "81"]) == 1
    assert "MTD_LOG_LEVEL" in capsys.readouterr().err
