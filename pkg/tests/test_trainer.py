import json

import numpy as np
import pytest
import torch

from tadkd.config import (
    ConfigError,
    ExperimentConfig,
    PreconditionError,
    TrainingDiverged,
    load_config,
    parse_config,
)
from tadkd import cli
from tadkd.train import (
    _check_finite,
    build_split,
    evaluate_checkpoint,
    run_ablation,
    train_student,
    train_teacher,
)

TINY = {
    "data": {
        "duration_range": [8, 8], "instances_range": [1, 2], "num_classes": 2,
        "height": 12, "width": 12, "fps": 2.0,
        "n_train": 2, "n_val": 1, "n_test": 2,
    },
    "model": {
        "feat_dim": 6, "temporal_stride": 4, "depth": 1, "width": 4,
        "proj_dim": 4, "head_hidden": 8, "preset": "rgb_baseline",
    },
    "optim": {"epochs": 1, "batch_size": 2, "learning_rate": 1e-3},
    "seeds": [1, 2, 3],
}


@pytest.fixture()
def tiny_cfg():
    return parse_config(json.loads(json.dumps(TINY)))


def write_config(tmp_path, payload, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return path


class TestConfigParsing:
    def test_defaults(self):
        cfg = parse_config({})
        assert cfg.model.preset == "decomposed_local_attn"
        assert cfg.seeds == (1, 2, 3)

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError, match="unknown top-level"):
            parse_config({"trainer": {}})

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match=r"unknown keys in \[optim\]"):
            parse_config({"optim": {"lr": 0.1}})

    def test_unknown_preset_rejected(self):
        with pytest.raises(ConfigError, match="unknown preset"):
            parse_config({"model": {"preset": "two_stream"}})

    def test_bad_value_becomes_config_error(self):
        with pytest.raises(ConfigError):
            parse_config({"loss": {"focal_gamma": -1.0}})

    def test_empty_seeds_rejected(self):
        with pytest.raises(ConfigError, match="seeds"):
            parse_config({"seeds": []})

    def test_load_toml(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text("seeds = [5]\n[optim]\nepochs = 2\n")
        cfg = load_config(path)
        assert cfg.seeds == (5,)
        assert cfg.optim.epochs == 2

    def test_load_json(self, tmp_path):
        cfg = load_config(write_config(tmp_path, TINY))
        assert cfg.data.n_train == 2
        assert cfg.model.feat_dim == 6

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="not found"):
            load_config("/nonexistent/cfg.toml")

    def test_bad_extension(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text("a: 1")
        with pytest.raises(ConfigError, match="toml or .json"):
            load_config(path)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{nope")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_config(path)

    def test_teacher_backbone_matches_proj_dim(self, tiny_cfg):
        bb = tiny_cfg.teacher_backbone_config()
        assert bb.feat_dim == tiny_cfg.model.proj_dim
        assert bb.temporal_stride == tiny_cfg.model.temporal_stride


class TestSplits:
    def test_deterministic(self, tiny_cfg):
        a = build_split(tiny_cfg, "train", run_seed=1, with_motion=False)
        b = build_split(tiny_cfg, "train", run_seed=1, with_motion=False)
        assert np.array_equal(a[0].sample.frames, b[0].sample.frames)

    def test_run_seed_changes_train_split(self, tiny_cfg):
        a = build_split(tiny_cfg, "train", run_seed=1, with_motion=False)
        b = build_split(tiny_cfg, "train", run_seed=2, with_motion=False)
        assert not np.array_equal(a[0].sample.frames, b[0].sample.frames)

    def test_test_split_independent_of_run_seed(self, tiny_cfg):
        a = build_split(tiny_cfg, "test", run_seed=1, with_motion=False)
        b = build_split(tiny_cfg, "test", run_seed=7, with_motion=False)
        assert np.array_equal(a[0].sample.frames, b[0].sample.frames)

    def test_splits_disjoint(self, tiny_cfg):
        train = build_split(tiny_cfg, "train", 1, False)
        val = build_split(tiny_cfg, "val", 1, False)
        test = build_split(tiny_cfg, "test", 1, False)
        ids = [ex.sample.annotation.video_id for split in (train, val, test) for ex in split]
        assert len(ids) == len(set(ids))

    def test_unknown_split(self, tiny_cfg):
        with pytest.raises(ValueError, match="unknown split"):
            build_split(tiny_cfg, "dev", 1, False)

    def test_motion_attached_when_requested(self, tiny_cfg):
        with_m = build_split(tiny_cfg, "val", 1, True)
        without = build_split(tiny_cfg, "val", 1, False)
        assert with_m[0].motion is not None
        assert without[0].motion is None


class TestDivergenceGuard:
    def test_nan_raises(self):
        with pytest.raises(TrainingDiverged, match="epoch 3"):
            _check_finite(torch.tensor(float("nan")), "teacher epoch 3", {"epoch": 3})

    def test_inf_raises(self):
        with pytest.raises(TrainingDiverged):
            _check_finite(torch.tensor(float("inf")), "x", {})

    def test_finite_passes(self):
        _check_finite(torch.tensor(1.0), "x", {})


class TestTrainingRuns:
    def test_teacher_deterministic(self, tiny_cfg, tmp_path):
        p1 = train_teacher(tiny_cfg, 1, tmp_path / "a")
        p2 = train_teacher(tiny_cfg, 1, tmp_path / "b")
        assert p1.read_bytes() == p2.read_bytes()
        report = json.loads((tmp_path / "a" / "teacher_seed1_report.json").read_text())
        assert len(report["history"]) == tiny_cfg.optim.epochs

    def test_student_baseline_run_and_artifacts(self, tiny_cfg, tmp_path):
        ckpt = train_student(tiny_cfg, 1, tmp_path, preset="rgb_baseline")
        assert ckpt.exists()
        log = json.loads((tmp_path / "student_rgb_baseline_seed1_log.json").read_text())
        assert log["preset"] == "rgb_baseline"
        assert "components" in log["history"][0]

    def test_student_distill_requires_teacher(self, tiny_cfg, tmp_path):
        with pytest.raises(PreconditionError, match="teacher"):
            train_student(tiny_cfg, 1, tmp_path, teacher_path=None, preset="decomposed_concat")

    def test_student_distill_end_to_end(self, tiny_cfg, tmp_path):
        teacher = train_teacher(tiny_cfg, 1, tmp_path)
        ckpt = train_student(tiny_cfg, 1, tmp_path, teacher_path=teacher, preset="decomposed_local_attn")
        log = json.loads((tmp_path / "student_decomposed_local_attn_seed1_log.json").read_text())
        comps = log["history"][0]["components"]
        assert {"app_cls", "respon_cls", "feat", "joint_cls"} <= set(comps)
        report = evaluate_checkpoint(tiny_cfg, ckpt, "test", 1, tmp_path)
        assert 0.0 <= report["avg"] <= 1.0
        assert report["preset"] == "decomposed_local_attn"

    def test_ablation_needs_three_seeds(self, tiny_cfg, tmp_path):
        from dataclasses import replace
        cfg = replace(tiny_cfg, seeds=(1, 2))
        with pytest.raises(PreconditionError, match="3 seeds"):
            run_ablation(cfg, tmp_path)


class TestCli:
    def test_gen_data(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path, TINY)
        out = tmp_path / "data"
        rc = cli.main(["gen-data", "--config", str(cfg_path), "--out", str(out), "--count", "2"])
        assert rc == 0
        assert (out / "annotations.json").exists()
        assert len(list(out.glob("*.f32"))) == 2

    def test_config_error_exit_code(self, tmp_path, capsys):
        bad = write_config(tmp_path, {"nope": {}})
        rc = cli.main(["train-teacher", "--config", str(bad), "--out", str(tmp_path)])
        assert rc == 2
        assert "config error" in capsys.readouterr().err

    def test_precondition_exit_code(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path, TINY)
        rc = cli.main(["train-student", "--config", str(cfg_path), "--out", str(tmp_path),
                       "--preset", "conventional_distill"])
        assert rc == 4
        assert "precondition" in capsys.readouterr().err

    def test_divergence_exit_code(self, tmp_path, capsys, monkeypatch):
        cfg_path = write_config(tmp_path, TINY)

        def boom(*a, **k):
            raise TrainingDiverged("synthetic")

        monkeypatch.setattr(cli, "train_teacher", boom)
        rc = cli.main(["train-teacher", "--config", str(cfg_path), "--out", str(tmp_path)])
        assert rc == 3

    def test_train_and_evaluate_round_trip(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path, TINY)
        rc = cli.main(["train-student", "--config", str(cfg_path), "--out", str(tmp_path),
                       "--preset", "rgb_baseline", "--seed", "1"])
        assert rc == 0
        ckpt = tmp_path / "student_rgb_baseline_seed1.ckpt"
        assert ckpt.exists()
        rc = cli.main(["evaluate", "--config", str(cfg_path), "--out", str(tmp_path),
                       "--checkpoint", str(ckpt), "--split", "test"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "map_at_tiou" in out
