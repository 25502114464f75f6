import json
import subprocess
import sys

import numpy as np
import pytest

from geofuse.cli import main
from geofuse.data import read_jsonl
from geofuse.synthworld import make_world, save_world_spec


@pytest.fixture(scope="module")
def world_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("world") / "world.json"
    spec = make_world(4, 3, seed=71, n_confusion_pairs=1, paired_habitat_separation=120.0, appearance_sigma=0.8)
    save_world_spec(spec, path)
    return path


@pytest.fixture(scope="module")
def data_dir(world_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    rc = main(["synth", "--spec", str(world_file), "--n-train", "600", "--n-eval", "300", "--out", str(out)])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def base_checkpoint(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("ckpt") / "base.json"
    cfg = tmp_path_factory.mktemp("cfg") / "train_base.json"
    cfg.write_text(
        json.dumps(
            {
                "seed": 3,
                "model": "image_only",
                "train_data": str(data_dir / "train.jsonl"),
                "hidden_sizes": [16, 16],
                "epochs": 10,
            }
        )
    )
    rc = main(["train", "--config", str(cfg), "--out", str(out)])
    assert rc == 0
    return out


class TestSynth:
    def test_files_written_and_parse(self, data_dir):
        train = read_jsonl(data_dir / "train.jsonl")
        evald = read_jsonl(data_dir / "eval.jsonl")
        assert len(train) == 600 and len(evald) == 300
        assert train.split == "train" and evald.split == "eval"
        assert train.n_labels == 4 and train.n_features == 3

    def test_rerun_byte_identical(self, world_file, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            rc = main(["synth", "--spec", str(world_file), "--n-train", "50", "--n-eval", "20", "--out", str(out)])
            assert rc == 0
        assert (a / "train.jsonl").read_bytes() == (b / "train.jsonl").read_bytes()
        assert (a / "eval.jsonl").read_bytes() == (b / "eval.jsonl").read_bytes()

    def test_roundtrip_through_writer(self, data_dir, tmp_path):
        from geofuse.data import write_jsonl

        ds = read_jsonl(data_dir / "eval.jsonl")
        copy = tmp_path / "copy.jsonl"
        write_jsonl(ds, copy)
        assert copy.read_bytes() == (data_dir / "eval.jsonl").read_bytes()

    def test_zero_count_is_config_error(self, world_file, tmp_path):
        rc = main(["synth", "--spec", str(world_file), "--n-train", "0", "--n-eval", "5", "--out", str(tmp_path)])
        assert rc == 2

    def test_missing_spec_is_config_error(self, tmp_path):
        rc = main(["synth", "--spec", str(tmp_path / "nope.json"), "--n-train", "5", "--n-eval", "5", "--out", str(tmp_path)])
        assert rc == 2


class TestTrain:
    def test_checkpoint_and_loss_log(self, base_checkpoint):
        doc = json.loads(base_checkpoint.read_text())
        assert doc["kind"] == "image_only" and doc["format_version"] == 1
        assert doc["seed"] == 3 and "network" in doc
        loss_log = base_checkpoint.with_suffix(".loss.txt")
        lines = loss_log.read_text().strip().splitlines()
        assert len(lines) == 10
        losses = [float(line.split("\t")[1]) for line in lines]
        # loss is non-increasing within per-epoch noise tolerance
        for prev, cur in zip(losses, losses[1:]):
            assert cur <= prev * 1.05

    def test_rerun_byte_identical(self, data_dir, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            json.dumps(
                {
                    "seed": 5,
                    "model": "image_only",
                    "train_data": str(data_dir / "train.jsonl"),
                    "hidden_sizes": [8],
                    "epochs": 3,
                }
            )
        )
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert main(["train", "--config", str(cfg), "--out", str(a)]) == 0
        assert main(["train", "--config", str(cfg), "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_postproc_without_base_is_config_error(self, data_dir, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            json.dumps({"seed": 1, "model": "postproc", "train_data": str(data_dir / "train.jsonl")})
        )
        rc = main(["train", "--config", str(cfg), "--out", str(tmp_path / "pp.json")])
        assert rc == 2
        assert "base" in capsys.readouterr().err

    def test_postproc_trains_with_base(self, data_dir, base_checkpoint, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            json.dumps(
                {
                    "seed": 2,
                    "model": "postproc",
                    "train_data": str(data_dir / "train.jsonl"),
                    "geo_hidden": [16, 8],
                    "epochs": 4,
                }
            )
        )
        out = tmp_path / "pp.json"
        rc = main(["train", "--config", str(cfg), "--base", str(base_checkpoint), "--out", str(out)])
        assert rc == 0
        assert json.loads(out.read_text())["kind"] == "postproc"

    def test_featmod_variant_flag(self, data_dir, base_checkpoint, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            json.dumps(
                {
                    "seed": 2,
                    "train_data": str(data_dir / "train.jsonl"),
                    "geo_hidden": [8, 8],
                    "epochs": 2,
                }
            )
        )
        out = tmp_path / "fm.json"
        rc = main(
            ["train", "--config", str(cfg), "--variant", "film", "--base", str(base_checkpoint), "--out", str(out)]
        )
        assert rc == 0
        doc = json.loads(out.read_text())
        assert doc["kind"] == "featmod" and doc["variant"] == "film"

    def test_prior_kind_rejected_for_training(self, data_dir, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"seed": 1, "model": "whitelist", "train_data": str(data_dir / "train.jsonl")}))
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "x.json")]) == 2

    def test_missing_config_seed_rejected(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"model": "image_only"}))
        assert main(["train", "--config", str(cfg)]) == 2


class TestEval:
    def test_eval_image_only(self, data_dir, base_checkpoint, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            json.dumps(
                {
                    "seed": 1,
                    "model": "image_only",
                    "train_data": str(data_dir / "train.jsonl"),
                    "eval_data": str(data_dir / "eval.jsonl"),
                    "base_checkpoint": str(base_checkpoint),
                    "head_threshold": 50,
                }
            )
        )
        out = tmp_path / "report.json"
        rc = main(["eval", "--config", str(cfg), "--out", str(out)])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert doc["rows"][0]["name"] == "image_only"
        assert 0.0 <= doc["rows"][0]["top1"] <= 1.0
        assert out.with_suffix(".txt").exists()

    def test_eval_whitelist_rerun_identical(self, data_dir, base_checkpoint, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            json.dumps(
                {
                    "seed": 1,
                    "model": "whitelist",
                    "radius_miles": 400.0,
                    "train_data": str(data_dir / "train.jsonl"),
                    "eval_data": str(data_dir / "eval.jsonl"),
                    "base_checkpoint": str(base_checkpoint),
                }
            )
        )
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert main(["eval", "--config", str(cfg), "--out", str(a)]) == 0
        assert main(["eval", "--config", str(cfg), "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_missing_checkpoint_errors(self, data_dir, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            json.dumps(
                {
                    "seed": 1,
                    "model": "postproc",
                    "train_data": str(data_dir / "train.jsonl"),
                    "eval_data": str(data_dir / "eval.jsonl"),
                }
            )
        )
        assert main(["eval", "--config", str(cfg), "--out", str(tmp_path / "r.json")]) == 2


class TestSweep:
    def test_sweep_writes_report(self, data_dir, base_checkpoint, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            json.dumps(
                {
                    "seed": 1,
                    "train_data": str(data_dir / "train.jsonl"),
                    "eval_data": str(data_dir / "eval.jsonl"),
                    "base_checkpoint": str(base_checkpoint),
                    "prior_mode": "whitelist",
                }
            )
        )
        out = tmp_path / "sweep.json"
        rc = main(["sweep", "--config", str(cfg), "--radius-list", "50,400,13000", "--out", str(out)])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert [row["radius_miles"] for row in doc["results"]] == [50.0, 400.0, 13000.0]
        assert all(0.0 <= row["top1"] <= 1.0 for row in doc["results"])

    def test_no_radii_is_config_error(self, data_dir, base_checkpoint, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            json.dumps(
                {
                    "seed": 1,
                    "train_data": str(data_dir / "train.jsonl"),
                    "eval_data": str(data_dir / "eval.jsonl"),
                    "base_checkpoint": str(base_checkpoint),
                }
            )
        )
        assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "s.json")]) == 2


class TestCompare:
    def test_compare_table(self, data_dir, base_checkpoint, tmp_path):
        pp_cfg = tmp_path / "pp_cfg.json"
        pp_cfg.write_text(
            json.dumps(
                {
                    "seed": 2,
                    "model": "postproc",
                    "train_data": str(data_dir / "train.jsonl"),
                    "geo_hidden": [16, 8],
                    "epochs": 4,
                    "base_checkpoint": str(base_checkpoint),
                }
            )
        )
        pp_ckpt = tmp_path / "pp.json"
        assert main(["train", "--config", str(pp_cfg), "--out", str(pp_ckpt)]) == 0

        cfg = tmp_path / "cmp.json"
        cfg.write_text(
            json.dumps(
                {
                    "seed": 1,
                    "train_data": str(data_dir / "train.jsonl"),
                    "eval_data": str(data_dir / "eval.jsonl"),
                    "base_checkpoint": str(base_checkpoint),
                    "head_threshold": 50,
                    "models": [
                        {"name": "image_only", "kind": "image_only"},
                        {"name": "whitelist", "kind": "whitelist", "radius_miles": 400.0},
                        {"name": "postproc", "kind": "postproc", "checkpoint": str(pp_ckpt)},
                    ],
                }
            )
        )
        out = tmp_path / "cmp_report.json"
        rc = main(["compare", "--config", str(cfg), "--out", str(out)])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert [r["name"] for r in doc["rows"]] == ["image_only", "whitelist", "postproc"]
        table = out.with_suffix(".txt").read_text()
        assert "image_only" in table and "whitelist" in table


class TestEntryPoint:
    def test_module_invocation(self, world_file, tmp_path):
        proc = subprocess.run(
            [
                sys.executable,
                "-m",
                "geofuse.cli",
                "synth",
                "--spec",
                str(world_file),
                "--n-train",
                "10",
                "--n-eval",
                "5",
                "--out",
                str(tmp_path),
            ],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert (tmp_path / "train.jsonl").exists()

    def test_bad_log_level(self, world_file, tmp_path, monkeypatch):
        monkeypatch.setenv("GEOFUSE_LOG", "chatty")
        rc = main(["synth", "--spec", str(world_file), "--n-train", "5", "--n-eval", "5", "--out", str(tmp_path)])
        assert rc == 2

    def test_log_levels_accepted(self, world_file, tmp_path, monkeypatch):
        for level in ("error", "info", "debug"):
            monkeypatch.setenv("GEOFUSE_LOG", level)
            rc = main(["synth", "--spec", str(world_file), "--n-train", "5", "--n-eval", "5", "--out", str(tmp_path / level)])
            assert rc == 0
