import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from discluster import cli
from discluster.centroids import CentroidBank
from discluster.checkpoint import load_checkpoint, save_checkpoint
from discluster.config import ExperimentConfig, config_from_dict, dump_config, load_config
from discluster.errors import ConfigError, ParseError

ROOT = Path(__file__).resolve().parents[1]
PROFILES = ROOT / "profiles"


def tiny_config(tmp_path, **schedule):
    cfg = (ExperimentConfig()
           .updated("data", task="blobs", n_per_class=15)
           .updated("model", extractor_dims=(6,), classifier_hidden=4)
           .updated("schedule", epochs=2, batch_size=16, **schedule))
    path = tmp_path / "cfg.json"
    dump_config(cfg, path)
    return path


def test_profiles_load():
    for p in PROFILES.glob("*.json"):
        load_config(p)
    defaults = load_config(PROFILES / "paper-defaults.json")
    assert defaults == ExperimentConfig()
    s = defaults.schedule
    assert (s.gamma, s.eta0, s.mu, s.nu, s.momentum, s.classifier_lr_multiplier) == (10, 0.01, 10, 0.75, 0.9, 10)
    assert defaults.loss.alpha == 0.7


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig().with_seed(4).with_variant("em")
    dump_config(cfg, tmp_path / "c.json")
    assert load_config(tmp_path / "c.json") == cfg


@pytest.mark.parametrize("raw", [
    {"bogus": 1},
    {"data": {"task": "mnist"}},
    {"loss": {"variant": "nope"}},
    {"loss": {"flags": {"wat": True}}},
    {"loss": {"temperatures": {"within": -1}}},
    {"schedule": {"eta0": 0}},
    {"version": 2},
    {"loss": {"variant": "no_distilling", "flags": {"clustering": False}}},
])
def test_bad_configs(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_checkpoint_round_trip(tmp_path):
    params = {"F0.weight": np.arange(6.0).reshape(2, 3), "F0.bias": np.ones((1, 3))}
    banks = {("target", "F"): CentroidBank(np.eye(2, 3), np.array([True, False]), 0.7)}
    save_checkpoint(tmp_path / "c.bin", params, banks, {"seed": 3})
    p, b, meta = load_checkpoint(tmp_path / "c.bin")
    np.testing.assert_array_equal(p["F0.weight"], params["F0.weight"])
    np.testing.assert_array_equal(b[("target", "F")].centroids, np.eye(2, 3))
    assert b[("target", "F")].initialized.tolist() == [True, False]
    assert meta["seed"] == 3


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"garbage-garbage-garbage")
    with pytest.raises(ParseError):
        load_checkpoint(tmp_path / "x.bin")


def test_train_writes_artifacts(tmp_path, capsys):
    cfg = tiny_config(tmp_path)
    out = tmp_path / "run"
    assert cli.main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    lines = (out / "metrics.jsonl").read_text().splitlines()
    assert [json.loads(l)["epoch"] for l in lines] == [1, 2]
    assert (out / "checkpoint.bin").exists()
    assert "target accuracy" in capsys.readouterr().out


def test_resolved_config_reproduces_run(tmp_path):
    cfg = tiny_config(tmp_path)
    cli.main(["train", "--config", str(cfg), "--seed", "5", "--out", str(tmp_path / "a")])
    cli.main(["train", "--config", str(tmp_path / "a" / "config.resolved.json"),
              "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (tmp_path / "b" / "metrics.jsonl").read_bytes()
    assert (tmp_path / "a" / "checkpoint.bin").read_bytes() == (tmp_path / "b" / "checkpoint.bin").read_bytes()


def test_out_dir_from_environment(tmp_path, monkeypatch):
    cfg = tiny_config(tmp_path)
    monkeypatch.setenv("DISCLUSTER_OUT", str(tmp_path / "env"))
    assert cli.main(["train", "--config", str(cfg)]) == 0
    assert (tmp_path / "env" / "metrics.jsonl").exists()


def test_ablate_subset(tmp_path, capsys):
    cfg = tiny_config(tmp_path)
    out = tmp_path / "ab"
    code = cli.main(["ablate", "--config", str(cfg), "--trials", "2",
                     "--variants", "source_only,full", "--out", str(out)])
    assert code == 0
    with (out / "ablation.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert [r["variant"] for r in rows] == ["source_only", "full"]
    assert set(rows[0]) == {"variant", "mean", "sd", "trials", "trial_0", "trial_1"}
    assert (out / "full" / "trial_1" / "metrics.jsonl").exists()


def test_synth_with_checkpoint(tmp_path):
    cfg = tiny_config(tmp_path)
    cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "run")])
    out = tmp_path / "syn"
    assert cli.main(["synth", "--task", "blobs", "--config", str(cfg), "--out", str(out),
                     "--checkpoint", str(tmp_path / "run" / "checkpoint.bin")]) == 0
    header = (out / "scatter.tsv").read_text().splitlines()[0].split("\t")
    assert header == ["x", "y", "label", "domain", "predicted"]
    assert (out / "source.csv").exists() and (out / "target.csv").exists()


def test_gradcheck_fault_injection_fails(capsys):
    assert cli.main(["gradcheck", "--inject-fault"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_missing_config_is_config_error(tmp_path, capsys):
    assert cli.main(["train", "--config", str(tmp_path / "none.json")]) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("discluster: config-error:")


def test_unknown_ablation_variant(tmp_path, capsys):
    cfg = tiny_config(tmp_path)
    assert cli.main(["ablate", "--config", str(cfg), "--variants", "full,nope",
                     "--out", str(tmp_path / "x")]) == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_runtime_error_exit_code(tmp_path, capsys):
    cfg = tiny_config(tmp_path, eta0=1e6)
    code = cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "r")])
    assert code == 2
    assert capsys.readouterr().err.startswith("discluster: runtime-error:")


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "discluster", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "gradcheck" in proc.stdout
