import csv
import json
import subprocess
import sys

import jsonschema
import pytest

from tupleinfonce.config import parse_config
from tupleinfonce.encoder import CheckpointError, init_encoder, load_checkpoint
from tupleinfonce.expcli import CSV_COLUMNS, csv_header, main, run_experiment, summary_schema

TINY = """\
scene: {train_size: 128}
encoder: {hidden: 8, mod_dim: 4, embed_dim: 6}
train: {batch_size: 16, steps_per_epoch: 2}
M: 16
epochs: 4
candidates: 2
alpha_sweep: {epochs: 1}
beta_sweep: {epochs: 1, points: 3}
naive: {epochs: 1}
bound: {targets: [1.0], alphas: [[1.0, 0.0, 0.0]], seeds: 1, N: 16, max_steps: 100}
"""
KINDS = ["train", "alpha-sweep", "beta-sweep", "naive-vs-tuple", "bound-grid"]


def _run(tmp_path, kind, name="out", seed=0):
    cfg = parse_config(TINY, {"kind": kind, "seed": seed})
    out = tmp_path / name
    return run_experiment(cfg, out), out


def _rows(out):
    with open(out / "metrics.csv", newline="") as fh:
        return list(csv.reader(fh))


def test_header_matches_documented_columns():
    assert csv_header(2) == ["epoch", "target", "candidate_id", "candidate_values", "reward", "chosen", "loss", "A_1", "A_2"]
    assert tuple(csv_header(3)[: len(CSV_COLUMNS)]) == CSV_COLUMNS


def test_train_kind_trace(tmp_path):
    summary, out = _run(tmp_path, "train")
    rows = _rows(out)
    assert rows[0] == csv_header(2)
    body = rows[1:]
    assert len(body) == 8 == summary["rows"]
    for epoch in range(1, 5):
        chosen = [r[5] for r in body if r[0] == str(epoch)]
        assert chosen.count("true") == 1 and len(chosen) == 2
    assert [r[1] for r in body[::2]] == ["beta", "alpha", "beta", "alpha"]
    assert all(len(r[3].split(";")) == (6 if r[1] == "beta" else 3) for r in body)
    assert {p.name for p in out.iterdir()} == {"config.yaml", "metrics.csv", "summary.json", "encoder.ckpt"}


def test_alpha_sweep_emits_six_rows(tmp_path):
    summary, out = _run(tmp_path, "alpha-sweep")
    body = _rows(out)[1:]
    assert len(body) == 6
    assert [float(r[3].split(";")[2]) for r in body] == [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
    assert all(float(r[4]) == pytest.approx(float(r[7]) + float(r[8])) for r in body)


@pytest.mark.parametrize("kind", KINDS)
def test_summary_validates_and_reruns_are_byte_identical(tmp_path, kind):
    summary, a = _run(tmp_path, kind, "a")
    _, b = _run(tmp_path, kind, "b")
    jsonschema.validate(json.loads((a / "summary.json").read_text()), summary_schema())
    for name in ("metrics.csv", "summary.json", "config.yaml"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert summary["kind"] == kind and summary["schema_version"] == 1


def test_schema_rejects_malformed_summary():
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate({"schema_version": 1, "kind": "train"}, summary_schema())


def test_resolved_config_round_trips(tmp_path):
    _, out = _run(tmp_path, "alpha-sweep")
    assert parse_config((out / "config.yaml").read_text()) == parse_config(TINY, {"kind": "alpha-sweep", "seed": 0})


def test_checkpoint_round_trip_and_corruption(tmp_path):
    _, out = _run(tmp_path, "train")
    ckpt = out / "encoder.ckpt"
    expect = init_encoder((12, 4), hidden=8, mod_dim=4, embed_dim=6)
    enc = load_checkpoint(ckpt, expect=expect)
    assert enc.to_bytes() == ckpt.read_bytes()
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(ckpt.read_bytes()[:100])
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
    with pytest.raises(CheckpointError, match="mismatch"):
        load_checkpoint(ckpt, expect=init_encoder((12, 4), hidden=9, mod_dim=4, embed_dim=6))


def test_runs_stay_inside_output_directory(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    _run(tmp_path, "beta-sweep", "only")
    assert [p.name for p in tmp_path.iterdir()] == ["only"]


def test_cli_exit_codes(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(TINY)
    assert main(["--config", str(cfg), "--kind", "alpha-sweep", "--out", str(tmp_path / "o"), "--quiet"]) == 0
    assert capsys.readouterr().out == ""
    bad = tmp_path / "bad.yaml"
    bad.write_text("tua: 1\n")
    assert main(["--config", str(bad)]) == 2
    assert "tua" in capsys.readouterr().err
    assert main(["--config", str(tmp_path / "missing.yaml")]) == 2
    assert main(["--config", str(cfg), "--out", "/proc/forbidden/x", "--quiet"]) == 3


def test_cli_seed_override_changes_outputs(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(TINY)
    for s in (1, 2):
        assert main(["--config", str(cfg), "--kind", "alpha-sweep", "--seed", str(s), "--out", str(tmp_path / f"s{s}"), "--quiet"]) == 0
    assert (tmp_path / "s1" / "metrics.csv").read_bytes() != (tmp_path / "s2" / "metrics.csv").read_bytes()
    assert json.loads((tmp_path / "s2" / "summary.json").read_text())["seed"] == 2


def test_divergence_exits_with_runtime_code(tmp_path, monkeypatch):
    import tupleinfonce.expcli as ex

    monkeypatch.setattr(ex, "train_epoch", lambda *a, **k: float("nan"))
    cfg = tmp_path / "c.yaml"
    cfg.write_text(TINY)
    assert main(["--config", str(cfg), "--kind", "alpha-sweep", "--out", str(tmp_path / "o"), "--quiet"]) == 3


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "tupleinfonce", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "--kind" in res.stdout
