import csv
import json

import pytest
from click.testing import CliRunner

from debiaslab.cli import main
from debiaslab.config import load_config, parse_config_text
from debiaslab.data import ConfigError

SMALL = """
queries = 24
docs_per_query = 12
feature_dim = 5
title_feature_index = 4   # title length column
ranker_fraction = 0.2
click_budget = 3000
steps = 60
eval_every = 30
batch_size = 64
"""


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(SMALL)
    return path


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)


def test_parse_config_text():
    raw = parse_config_text("queries = 3\nscenario = s1, s2  # two\n")
    assert raw == {"queries": "3", "scenario": "s1, s2"}


def test_load_config_types_and_overrides(cfg_file):
    cfg = load_config(cfg_file, {"steps": 5, "scenario": ["s3"], "seed": None})
    assert cfg.queries == 24 and cfg.title_feature_index == 4
    assert cfg.steps == 5 and cfg.scenario == ["s3"] and cfg.seed == 0
    assert cfg.click_budget == 3000


def test_unknown_key(tmp_path):
    path = tmp_path / "x.cfg"
    path.write_text("queries = 3\nbogus = 1\n")
    with pytest.raises(ConfigError, match="bogus"):
        load_config(path)


def test_bad_value(tmp_path):
    path = tmp_path / "x.cfg"
    path.write_text("queries = many\n")
    with pytest.raises(ConfigError, match="queries"):
        load_config(path)


def test_gen_data_is_idempotent(cfg_file, tmp_path):
    out = tmp_path / "nested" / "data"
    assert invoke("gen-data", "--config", cfg_file, "--out", out, "--seed", 4).exit_code == 0
    first = (out / "dataset.letor").read_bytes()
    assert invoke("gen-data", "--config", cfg_file, "--out", out, "--seed", 4).exit_code == 0
    assert (out / "dataset.letor").read_bytes() == first


def test_gen_data_missing_feature_dim(tmp_path):
    path = tmp_path / "x.cfg"
    path.write_text("queries = 3\ndocs_per_query = 4\n")
    result = CliRunner().invoke(main, ["gen-data", "--config", str(path), "--out", str(tmp_path)])
    assert result.exit_code == 1
    assert "feature_dim" in result.output


def test_s5_without_title_feature(tmp_path):
    path = tmp_path / "x.cfg"
    path.write_text("queries = 3\ndocs_per_query = 4\nfeature_dim = 3\n")
    result = CliRunner().invoke(main, ["run", "--config", str(path), "--scenario", "s5", "--out", str(tmp_path)])
    assert result.exit_code == 1
    assert "title_feature_index" in result.output


def test_stage_commands_chain(cfg_file, tmp_path):
    out = tmp_path / "stages"
    assert invoke("gen-data", "--config", cfg_file, "--out", out).exit_code == 0
    data = out / "dataset.letor"
    assert invoke("train-ranker", "--config", cfg_file, "--data", data, "--out", out).exit_code == 0
    r = invoke("simulate", "--config", cfg_file, "--data", data, "--ranker", out / "ranker.json",
               "--scenario", "s5", "--out", out)
    assert r.exit_code == 0
    clicks = out / "clicks_s5.csv"
    r = invoke("train", "--config", cfg_file, "--model", "iin", "--clicks", clicks, "--test", data,
               "--out", out, "--steps", 40)
    assert r.exit_code == 0 and "final AUC" in r.output
    curve = list(csv.reader((out / "curve_clicks_s5_iin.csv").open()))
    assert curve[0] == ["step", "auc"] and curve[-1][0] == "40"
    r = invoke("evaluate", "--checkpoint", out / "clicks_s5_iin.json", "--data", data)
    assert r.exit_code == 0 and 0 <= float(r.output) <= 1


def test_run_and_report(cfg_file, tmp_path):
    out = tmp_path / "run"
    r = invoke("run", "--config", cfg_file, "--out", out, "--scenario", "s1", "--scenario", "s4",
               "--model", "iin", "--model", "mmoe")
    assert r.exit_code == 0
    rows = list(csv.reader((out / "summary.csv").open()))
    assert rows[0] == ["method", "s1", "s2", "s3", "s4", "s5"]
    assert [row[0] for row in rows[1:]] == ["iin", "mmoe"]
    assert rows[1][2] == "" and rows[1][1] != ""
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "complete"
    assert manifest["config"]["scenario"] == ["s1", "s4"]
    assert (out / "rep0" / "bias_surface_s4.csv").exists()

    r = invoke("report", out)
    assert r.exit_code == 0
    lines = r.output.splitlines()
    assert lines[0].split() == ["method", "s1", "s2", "s3", "s4", "s5"]
    merged = list(csv.DictReader((out / "curves_long.csv").open()))
    assert {row["method"] for row in merged} == {"iin", "mmoe"}
    assert {row["scenario"] for row in merged} == {"s1", "s4"}


def test_zero_steps_summary(cfg_file, tmp_path):
    out = tmp_path / "zero"
    assert invoke("run", "--config", cfg_file, "--out", out, "--steps", 0, "--model", "pal").exit_code == 0
    curve = list(csv.reader((out / "rep0" / "curves" / "curve_s1_pal.csv").open()))
    assert curve[1:] == [["0", curve[1][1]]]
    summary = list(csv.reader((out / "summary.csv").open()))
    assert float(summary[1][1]) == pytest.approx(float(curve[1][1]), abs=1e-6)


def test_rerun_from_manifest(cfg_file, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert invoke("run", "--config", cfg_file, "--out", a, "--seed", 11).exit_code == 0
    assert invoke("run", "--config", a / "manifest.json", "--out", b).exit_code == 0
    assert (a / "summary.csv").read_bytes() == (b / "summary.csv").read_bytes()
    assert json.loads((b / "manifest.json").read_text())["seed"] == 11


def test_report_errors(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    r = CliRunner().invoke(main, ["report", str(empty)])
    assert r.exit_code == 2 and "curve_<scenario>_<model>.csv" in r.output
    bad = tmp_path / "bad" / "rep0" / "curves"
    bad.mkdir(parents=True)
    (bad / "curve_s1_iin.csv").write_text("step,auc\n0,0.5\n")
    (bad / "curve_s1_pal.csv").write_text("garbage\n")
    r = CliRunner().invoke(main, ["report", str(tmp_path / "bad")])
    assert r.exit_code == 2
    assert "curve_s1_pal.csv" in r.output and "curve_s1_iin.csv" not in r.output


def test_failed_stage_marks_manifest(tmp_path):
    path = tmp_path / "x.cfg"
    path.write_text(f"data_path = {tmp_path / 'missing.letor'}\nfeature_dim = 3\n")
    r = CliRunner().invoke(main, ["run", "--config", str(path), "--out", str(tmp_path / "o")])
    assert r.exit_code == 2 and "rep0/data" in r.output
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["status"] == "incomplete" and manifest["failed_stage"] == "rep0/data"
