"""CLI exit codes, artifacts, overrides, and the bench report schema."""

import json
from pathlib import Path

import pytest

from oscbf.cli import EXIT_CONFIG, EXIT_OK, EXIT_SAFETY, main

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def test_run_writes_artifacts(tmp_path):
    code = main([
        "run", str(SCENARIOS / "fig3_boundary_push.json"),
        "--out", str(tmp_path), "--override", "duration=0.2",
    ])
    assert code == EXIT_OK
    assert (tmp_path / "log.csv").exists()
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["min_h"] >= -1e-3
    assert summary["steps"] == 200


def test_run_missing_file_is_config_error(tmp_path):
    code = main(["run", str(SCENARIOS / "does_not_exist.json"), "--out", str(tmp_path)])
    assert code == EXIT_CONFIG
    assert not (tmp_path / "summary.json").exists()


def test_run_bad_override_is_config_error(tmp_path):
    code = main([
        "run", str(SCENARIOS / "fig3_boundary_push.json"),
        "--out", str(tmp_path), "--override", "nonsense=1",
    ])
    assert code == EXIT_CONFIG


def test_run_mode_override(tmp_path):
    code = main([
        "run", str(SCENARIOS / "fig3_boundary_push.json"),
        "--out", str(tmp_path), "--mode", "torque", "--override", "duration=0.05",
    ])
    assert code == EXIT_OK
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["mode"] == "torque"


def test_run_safety_violation_exit_code(tmp_path):
    # negative control: disabling the high-order handling on the torque plant
    # must end in a safety violation, exit 3, with the summary still written
    code = main([
        "run", str(SCENARIOS / "fig5_dynamic.json"), "--out", str(tmp_path),
        "--override", "hocbf=false", "--override", "duration=2.5",
    ])
    assert code == EXIT_SAFETY
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["min_h"] < -1e-3


def test_determinism_across_invocations(tmp_path):
    for sub in ("a", "b"):
        code = main([
            "run", str(SCENARIOS / "clutter20.json"), "--out", str(tmp_path / sub),
            "--seed", "9", "--override", "duration=0.1",
        ])
        assert code == EXIT_OK
    sa = json.loads((tmp_path / "a" / "summary.json").read_text())
    sb = json.loads((tmp_path / "b" / "summary.json").read_text())
    assert sa["min_h"] == sb["min_h"] and sa["rms_pos_err"] == sb["rms_pos_err"]

    def strip_timing(path):
        # timing columns are environmental; everything else must match
        lines = (path / "log.csv").read_text().splitlines()
        header = lines[0].split(",")
        drop = {header.index("latency"), header.index("qp_iterations")}
        return [",".join(v for i, v in enumerate(l.split(",")) if i not in drop)
                for l in lines[1:]]

    assert strip_timing(tmp_path / "a") == strip_timing(tmp_path / "b")


@pytest.fixture(scope="module")
def bench_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    code = main(["bench", "--out", str(out), "--trials", "1", "--duration", "0.15"])
    assert code == EXIT_OK
    return out


def test_bench_table_rows(bench_dir):
    report = json.loads((bench_dir / "bench.json").read_text())
    rows = [r["rows"] for r in report["experiments"]]
    assert rows == [1, 6, 14, 21, 126, 168]
    names = [r["experiment"] for r in report["experiments"]]
    assert names == ["singularity", "ee_containment", "joint_limits",
                     "collision", "wb_containment", "all"]
    scaling_rows = [r["rows"] for r in report["scaling"]]
    assert scaling_rows == [1, 21, 168, 420, 1050]
    assert (bench_dir / "bench.md").exists()


def test_bench_report_parses_via_validate(bench_dir):
    assert main(["validate", "--bench-report", str(bench_dir / "bench.json")]) == EXIT_OK


def test_validate_rejects_broken_report(tmp_path):
    bad = tmp_path / "bench.json"
    bad.write_text("{not json")
    assert main(["validate", "--bench-report", str(bad)]) != EXIT_OK


def test_validate_quick(tmp_path):
    # the full suite runs in the acceptance tests; a reduced gradient batch here
    out = tmp_path / "report.json"
    code = main(["validate", "--gradient-states", "3", "--out", str(out)])
    assert code == EXIT_OK
    report = json.loads(out.read_text())
    assert all(c["passed"] for c in report["checks"])
    assert len(report["checks"]) >= 15
