import json

import pytest

from sdedge.cli import main
from sdedge.scenario import bundled_scenario_path


def test_run_emits_csv(tmp_path, capsys):
    out = tmp_path / "fig6.csv"
    code = main(["run", "fig6", "--set", "mode=None", "--out", str(out), "--format", "csv"])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# schema=sdedge.metrics/1")
    assert lines[1] == "t,stream_id,mbps"
    # 0.1 s cadence over [0, 40]: 401 sample rows
    assert len(lines) == 2 + 401
    assert "wrote csv report" in capsys.readouterr().out


def test_json_and_csv_agree_numerically(tmp_path):
    csv_path = tmp_path / "r.csv"
    json_path = tmp_path / "r.json"
    assert main(["run", "fig6", "--seed", "5", "--out", str(csv_path), "--format", "csv"]) == 0
    assert main(["run", "fig6", "--seed", "5", "--out", str(json_path), "--format", "json"]) == 0
    doc = json.loads(json_path.read_text())
    csv_rows = [
        line.split(",") for line in csv_path.read_text().splitlines()[2:]
    ]
    assert len(csv_rows) == len(doc["throughput"])
    for (t_csv, sid_csv, v_csv), (t_js, sid_js, v_js) in zip(csv_rows, doc["throughput"]):
        assert float(t_csv) == t_js and sid_csv == sid_js and float(v_csv) == v_js


def test_reports_are_reproducible_bytes(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    main(["run", "fig2", "--seed", "9", "--out", str(a), "--format", "json"])
    main(["run", "fig2", "--seed", "9", "--out", str(b), "--format", "json"])
    assert a.read_bytes() == b.read_bytes()


def test_validate_ok(capsys):
    assert main(["validate", "fig5"]) == 0
    assert "ok" in capsys.readouterr().out


def test_validate_reports_all_errors(tmp_path, capsys):
    bad = tmp_path / "broken.scenario"
    bad.write_text(
        "[topology]\ncontroller C1\n"
        "ap AP9 pos=0,0 radius=5 capacity=11 techs=wifi partition=GHOST\n"
        "[flows]\nflow F1 md=NOBODY dst=C1 type=t demand=1 tech=wifi start=0\n"
    )
    assert main(["validate", str(bad)]) == 1
    err = capsys.readouterr().err
    assert "GHOST" in err and "NOBODY" in err


def test_unknown_override_key_is_usage_error(capsys):
    assert main(["run", "fig2", "--set", "bogus=1"]) == 2
    assert "bogus" in capsys.readouterr().err


def test_missing_scenario(capsys):
    assert main(["validate", "no-such-scenario"]) == 1


def test_batch_runs_directory(tmp_path, capsys):
    src = bundled_scenario_path("fig2").read_text()
    (tmp_path / "one.scenario").write_text(src)
    (tmp_path / "two.scenario").write_text(src)
    out_dir = tmp_path / "results"
    code = main(["batch", str(tmp_path), "--out-dir", str(out_dir), "--format", "json"])
    assert code == 0
    assert sorted(p.name for p in out_dir.iterdir()) == ["one.json", "two.json"]
