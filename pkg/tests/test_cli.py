import csv
import io
import json

import pytest
from click.testing import CliRunner

from gridstorm.cli import main
from gridstorm.grid_model import bundled_case_path
from gridstorm.scenario import MARGIN_COLUMNS, SUMMARY_COLUMNS


def _run(tmp_path, config, *extra):
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps(config))
    out = tmp_path / "out"
    res = CliRunner().invoke(main, ["run", "--config", str(cfg), "--out", str(out), *extra])
    return res, out


def _rows(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


@pytest.fixture(scope="module")
def default_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("default")
    res, out = _run(tmp, {})
    assert res.exit_code == 0, res.output
    return out


def test_default_sweep_shape(default_run):
    rows = _rows(default_run / "summary.csv")
    assert (default_run / "summary.csv").read_text().splitlines()[0] == ",".join(SUMMARY_COLUMNS)
    assert [(r["strategy"], r["penetration"]) for r in rows] == [
        (s, p) for s in ("naive", "insidious") for p in ("0.1", "0.25", "0.5")
    ]
    for r in rows:
        # ens_mw is printed to 3 decimals, the cost from full precision
        assert abs(int(r["ens_cost_usd"]) - float(r["ens_mw"]) * 10_000) <= 5.0 + 0.5
    margins = _rows(default_run / "margins.csv")
    assert list(margins[0]) == MARGIN_COLUMNS
    assert all("102" in (m["from_bus"], m["to_bus"]) for m in margins)
    assert len(list(default_run.glob("plan_*.json"))) == 6
    assert len(list(default_run.glob("cascade_*.json"))) == 6


def test_zero_penetration_rows(tmp_path):
    res, out = _run(tmp_path, {"penetrations": [0.0]})
    assert res.exit_code == 0, res.output
    rows = _rows(out / "summary.csv")
    assert len(rows) == 2
    assert all(r["ens_mw"] == "0.000" and r["ens_cost_usd"] == "0" for r in rows)


def test_outputs_byte_identical(tmp_path, default_run):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    again, out = _run(tmp_path / "a", {})
    assert again.exit_code == 0
    par, out_par = _run(tmp_path / "b", {}, "--jobs", "3")
    assert par.exit_code == 0
    for name in ("summary.csv", "margins.csv"):
        ref = (default_run / name).read_bytes()
        assert (out / name).read_bytes() == ref
        assert (out_par / name).read_bytes() == ref


def test_dump_programs(tmp_path):
    res, out = _run(tmp_path, {"penetrations": [0.1], "strategies": ["naive"]}, "--dump-programs")
    assert res.exit_code == 0
    assert any((out / "programs").glob("*.lp"))


@pytest.mark.parametrize(
    "config",
    [{"penetrations": []}, {"penetrations": [1.5]}, {"gammas": [-0.1]}, {"strategies": ["greedy"]}, {"colour": "red"}],
)
def test_bad_config_exit_2(tmp_path, config):
    res, _ = _run(tmp_path, config)
    assert res.exit_code == 2


def test_missing_case_exit_2(tmp_path):
    res, _ = _run(tmp_path, {"case": "nowhere.json"})
    assert res.exit_code == 2


def test_validate_bundled_ok():
    res = CliRunner().invoke(main, ["validate", str(bundled_case_path())])
    assert res.exit_code == 0
    assert res.output.strip() == "ok"


def test_validate_reports_each_violation(tmp_path, doc):
    doc["transmission"]["lines"][0]["reactance"] = -1.0
    doc["feeders"][0]["buses"][3]["v_min"] = 2.0
    fd = doc["feeders"][0]
    fd["lines"].append(dict(fd["lines"][-1], id="12-5", from_bus=12, to_bus=5))
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    res = CliRunner().invoke(main, ["validate", str(path)])
    assert res.exit_code == 2
    lines = res.output.strip().splitlines()
    assert len(lines) == 3
    assert any("radial" in line for line in lines)


def test_validate_schema_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"transmission": {}}')
    res = CliRunner().invoke(main, ["validate", str(path)])
    assert res.exit_code == 2
    assert res.output.strip()


def test_attack_prints_plan():
    res = CliRunner().invoke(main, ["attack", "--strategy", "naive", "--rho", "0.5", "--gamma", "0", str(bundled_case_path())])
    assert res.exit_code == 0, res.output
    plan = json.loads(res.output)
    assert plan["strategy"] == "naive"
    assert plan["rho"] == 0.5
    assert set(plan["dist_delta_p"]) >= {"0-3", "3-2"}


def test_attack_bad_rho():
    res = CliRunner().invoke(main, ["attack", "--strategy", "naive", "--rho", "2", str(bundled_case_path())])
    assert res.exit_code == 2
