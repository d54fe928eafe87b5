import json

import pandas as pd
import pytest
import yaml

from faircompose.cli import main

CONFIG = """dataset: {synth: {n: 800, d: 3, gap: -0.3, seed: 2}}
models: [gnb]
pipeline: {pre: Rew, in: {name: GridSearch, constraint: DemographicParity}, post: ROC}
explain: {count: 2, samples: 300}
seed: 1
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(CONFIG)
    return path


def test_run_writes_reports_quietly(config, tmp_path, capsys):
    assert main(["run", "--config", str(config), "--out", str(tmp_path / "out"), "--jobs", "1"]) == 0
    out = capsys.readouterr()
    assert out.out == ""
    assert (tmp_path / "out" / "report.json").exists()
    assert (tmp_path / "out" / "report.csv").exists()


def test_run_format_json_only(config, tmp_path):
    assert main(["run", "--config", str(config), "--out", str(tmp_path / "o"), "--format", "json"]) == 0
    assert not (tmp_path / "o" / "report.csv").exists()


def test_run_malformed_config_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(CONFIG + "pipelines: {}\n")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "pipelines" in capsys.readouterr().err


def test_run_stage_failure_exit_3_with_partial_reports(tmp_path):
    path = tmp_path / "ceo.yaml"
    path.write_text(CONFIG.replace(
        "pipeline: {pre: Rew, in: {name: GridSearch, constraint: DemographicParity}, post: ROC}",
        "pipeline: {pre: Rew, post: {name: CEOdds, params: {tol: 0.0, cost_mode: fpr}}}",
    ))
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == 3
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert [r["stage"] for r in report["reports"]] == ["base", "pre"]
    assert report["reports"][-1]["flags"][-1].startswith("aborted_at_pre+post")


def test_seed_env_override(config, tmp_path, monkeypatch):
    monkeypatch.setenv("FAIRCOMPOSE_SEED", "42")
    assert main(["run", "--config", str(config), "--out", str(tmp_path / "o"), "--format", "json"]) == 0
    echo = json.loads((tmp_path / "o" / "report.json").read_text())["config_echo"]
    assert echo["seed"] == 42 and echo["seed_source"] == "env:FAIRCOMPOSE_SEED"
    monkeypatch.setenv("FAIRCOMPOSE_SEED", "abc")
    assert main(["run", "--config", str(config), "--out", str(tmp_path / "o")]) == 2


def test_validate(config, tmp_path, capsys):
    assert main(["validate", "--config", str(config)]) == 0
    echo = yaml.safe_load(capsys.readouterr().out)
    assert echo["pipeline"]["post"]["params"]["metric"] == "DI"
    incompatible = tmp_path / "eo.yaml"
    incompatible.write_text(CONFIG.replace("DemographicParity", "EqualizedOdds"))
    assert main(["validate", "--config", str(incompatible)]) == 2
    assert "incompatible" in capsys.readouterr().err
    dup = tmp_path / "dup.yaml"
    dup.write_text(CONFIG.replace("pipeline: {pre: Rew,", "pipeline: {pre: LFR, pre: Rew,"))
    assert main(["validate", "--config", str(dup)]) == 2


def test_compare(config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", "--config", str(config), "--out", str(a)])
    main(["run", "--config", str(config), "--out", str(b)])
    assert main(["compare", "--a", str(a), "--b", str(b), "--out", str(tmp_path / "d.csv")]) == 0
    deltas = pd.read_csv(tmp_path / "d.csv")
    assert (deltas["delta"].dropna() == 0).all()
    assert set(deltas["status"]) == {"ok"}
    assert main(["compare", "--a", str(a), "--b", str(tmp_path / "nope"), "--out", str(tmp_path / "x.csv")]) == 2


def test_synth(tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert main(["synth", "--n", "1000", "--gap", "-0.3", "--seed", "3", "--out", str(out)]) == 0
    stanza = yaml.safe_load(capsys.readouterr().out)
    assert stanza["dataset"]["schema"]["protected"] == "group"
    assert len(pd.read_csv(out)) == 1000
    first = out.read_bytes()
    main(["synth", "--n", "1000", "--gap", "-0.3", "--seed", "3", "--out", str(out)])
    assert out.read_bytes() == first
    assert main(["synth", "--gap", "-1.5", "--out", str(tmp_path / "t.csv")]) == 2


def test_synth_output_runs_end_to_end(tmp_path, capsys):
    data = tmp_path / "s.csv"
    main(["synth", "--n", "800", "--d", "3", "--out", str(data)])
    stanza = yaml.safe_load(capsys.readouterr().out)
    stanza["models"] = ["logistic"]
    stanza["explain"] = {"count": 2, "samples": 200}
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump(stanza))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
