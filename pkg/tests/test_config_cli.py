"""Run config schema and command line behavior.

CLI tests call main(argv) in-process and assert on exit codes and artifacts,
using a deliberately tiny config (a few training steps) so every verb can
actually run end to end.
"""

import copy
import json
import os

import numpy as np
import pytest
import yaml

from streamhoi import data_io, runs
from streamhoi.cli import main
from streamhoi.config import (
    GenerationDataConfig,
    PerceptionDataConfig,
    RunConfig,
    config_from_json,
    config_to_json,
)
from streamhoi.exceptions import ConfigurationError

GEN_MAPPING = {
    "task": "generation",
    "name": "tiny-gen",
    "seeds": [0],
    "data": {
        "n_train": 4,
        "n_val": 3,
        "seq_len": 10,
        "pose_dim": 3,
        "actor_dim": 3,
        "n_classes": 2,
        "n_object_points": 12,
        "long_range_start": 5,
        "data_seed": 0,
    },
    "arch": {"model_dim": 16, "depth": 1, "state_dim": 4, "conv_width": 3},
    "train": {"steps": 4, "batch_size": 2, "diffusion_steps": 6},
    "eval": {"extractor_steps": 30},
}

PCD_MAPPING = {
    "task": "perception",
    "name": "tiny-pcd",
    "seeds": [0],
    "data": {
        "n_train": 3,
        "n_val": 2,
        "seq_len": 12,
        "n_points": 16,
        "n_classes": 3,
        "segment_min": 4,
        "segment_max": 6,
        "context_mode": "plain",
        "data_seed": 0,
    },
    "arch": {
        "model_dim": 16,
        "depth": 1,
        "state_dim": 4,
        "conv_width": 3,
        "channels": [6, 8, 12, 16],
        "out_channels": 12,
    },
    "train": {"steps": 3, "batch_size": 2},
}


def _write_yaml(directory, mapping, filename="run.yaml"):
    path = directory / filename
    path.write_text(yaml.safe_dump(mapping))
    return str(path)


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


class TestRunConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert cfg.task == "generation"
        assert cfg.mode == "online"
        assert cfg.model == "mamba"
        assert cfg.memory == "me"
        assert cfg.seeds == (0, 1, 2)
        assert isinstance(cfg.data, GenerationDataConfig)
        assert cfg.train.steps == 400
        assert cfg.eval.causality_probe is True

    def test_from_yaml_reads_repo_config(self):
        cfg = RunConfig.from_yaml("configs/gen_smoke.yaml")
        assert cfg.name == "gen-smoke"
        assert cfg.seeds == (0,)
        assert cfg.train.steps == 40
        assert cfg.data.n_train == 6
        assert cfg.arch.model_dim == 24

    def test_from_yaml_empty_file_gives_defaults(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("")
        cfg = RunConfig.from_yaml(str(path))
        assert cfg.to_mapping() == RunConfig().to_mapping()

    def test_from_yaml_parse_error(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("task: [unclosed\n")
        with pytest.raises(ConfigurationError):
            RunConfig.from_yaml(str(path))

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(ConfigurationError, match="tusk"):
            RunConfig.from_mapping({"tusk": "generation"})

    @pytest.mark.parametrize(
        "section, key",
        [
            ("train", "stepz"),
            ("arch", "model_dims"),
            ("eval", "probe"),
            ("data", "n_trains"),
        ],
    )
    def test_unknown_section_key_rejected(self, section, key):
        with pytest.raises(ConfigurationError, match=key):
            RunConfig.from_mapping({section: {key: 3}})

    @pytest.mark.parametrize(
        "field, value",
        [
            ("task", "segmentation"),
            ("mode", "batch"),
            ("model", "lstm"),
            ("memory", "both"),
            ("fusion", "gate"),
            ("memory_mode", "replay"),
        ],
    )
    def test_invalid_enum_values(self, field, value):
        with pytest.raises(ConfigurationError):
            RunConfig.from_mapping({field: value})

    def test_seeds_rules(self):
        assert RunConfig.from_mapping({"seeds": [0, 1]}).seeds == (0, 1)
        with pytest.raises(ConfigurationError):
            RunConfig.from_mapping({"seeds": []})
        with pytest.raises(ConfigurationError):
            RunConfig.from_mapping({"seeds": ["a"]})

    def test_capacity_rules(self):
        with pytest.raises(ConfigurationError):
            RunConfig.from_mapping({"short_capacity": 0})
        with pytest.raises(ConfigurationError):
            RunConfig.from_mapping({"long_capacity": -1})

    def test_data_section_follows_task(self):
        cfg = RunConfig.from_mapping(
            {"task": "perception", "data": {"n_points": 8}}
        )
        assert isinstance(cfg.data, PerceptionDataConfig)
        assert cfg.data.n_points == 8
        with pytest.raises(ConfigurationError, match="n_points"):
            RunConfig.from_mapping(
                {"task": "generation", "data": {"n_points": 8}}
            )

    def test_yaml_lists_become_tuples(self):
        cfg = RunConfig.from_mapping({"arch": {"channels": [4, 8]}})
        assert cfg.arch.channels == (4, 8)

    def test_with_overrides_is_nondestructive(self):
        base = RunConfig.from_mapping(copy.deepcopy(GEN_MAPPING))
        swapped = base.with_overrides(memory="off", model="causal_transformer")
        assert base.memory == "me" and base.model == "mamba"
        assert swapped.memory == "off"
        assert swapped.model == "causal_transformer"
        assert swapped.train.steps == base.train.steps
        assert swapped.data.n_train == base.data.n_train

    def test_set_dotted_coerces_yaml_scalars(self):
        base = RunConfig()
        assert base.set_dotted("train.steps", "200").train.steps == 200
        noisy = base.set_dotted("data.noise_scale", "0.05")
        assert noisy.data.noise_scale == pytest.approx(0.05)
        assert isinstance(noisy.data.noise_scale, float)
        quiet = base.set_dotted("eval.causality_probe", "false")
        assert quiet.eval.causality_probe is False
        hot = base.set_dotted("train.learning_rate", "1e14")
        assert hot.train.learning_rate == 1e14
        assert base.set_dotted("memory", "off").memory == "off"

    def test_set_dotted_rejects_type_mismatch(self):
        base = RunConfig()
        with pytest.raises(ConfigurationError):
            base.set_dotted("train.steps", "fast")
        with pytest.raises(ConfigurationError):
            base.set_dotted("train.learning_rate", "warm")
        with pytest.raises(ConfigurationError):
            base.set_dotted("eval.causality_probe", "maybe")
        with pytest.raises(ConfigurationError):
            base.set_dotted("seeds", "7")

    def test_set_dotted_rejects_unknown_keys(self):
        base = RunConfig()
        with pytest.raises(ConfigurationError):
            base.set_dotted("train.stepz", "3")
        with pytest.raises(ConfigurationError):
            base.set_dotted("nosection.steps", "3")
        with pytest.raises(ConfigurationError):
            base.set_dotted("bogus", "3")

    def test_config_hash_stable_and_sensitive(self):
        a = RunConfig.from_mapping(copy.deepcopy(GEN_MAPPING))
        b = RunConfig.from_mapping(copy.deepcopy(GEN_MAPPING))
        assert a.config_hash() == b.config_hash()
        assert a.config_hash() != a.with_overrides(memory="off").config_hash()
        rebuilt = RunConfig.from_mapping(a.to_mapping())
        assert rebuilt.config_hash() == a.config_hash()

    def test_run_name(self):
        assert RunConfig().run_name(3) == "generation-online-mamba-me-seed3"
        named = RunConfig.from_mapping({"name": "trial"})
        assert named.run_name(0) == "trial-seed0"

    def test_json_roundtrip(self):
        cfg = RunConfig.from_mapping(copy.deepcopy(PCD_MAPPING))
        text = config_to_json(cfg)
        again = config_from_json(text)
        assert again.to_mapping() == cfg.to_mapping()
        keys = list(json.loads(text))
        assert keys == sorted(keys)


class TestTrainVerb:
    def test_train_writes_run_artifacts(self, tmp_path, capsys):
        config = _write_yaml(tmp_path, GEN_MAPPING)
        out = tmp_path / "out"
        assert main(["train", "--config", config, "--out", str(out)]) == 0
        assert "trained 1 seed(s)" in capsys.readouterr().out
        cell = out / "tiny-gen-seed0"
        assert (out / "config.json").exists()
        assert (out / "summary.json").exists()
        assert (cell / "checkpoint.npz").exists()
        metrics = _read_json(cell / "metrics.json")
        for key in ("recon", "fid", "div", "ra", "loss_final"):
            assert isinstance(metrics[key], float)
        assert metrics["causality_ok"] is True
        summary = _read_json(out / "summary.json")
        assert summary["aggregate"]["recon"]["mean"] == metrics["recon"]

    def test_train_perception_artifacts(self, tmp_path):
        config = _write_yaml(tmp_path, PCD_MAPPING)
        out = tmp_path / "out"
        assert main(["train", "--config", config, "--out", str(out)]) == 0
        metrics = _read_json(out / "tiny-pcd-seed0" / "metrics.json")
        for key in ("acc", "edit", "f1", "train_acc"):
            assert isinstance(metrics[key], float)
        assert metrics["causality_ok"] is True

    def test_flag_overrides_reach_the_run(self, tmp_path):
        config = _write_yaml(tmp_path, GEN_MAPPING)
        out = tmp_path / "out"
        rc = main(
            [
                "train",
                "--config",
                config,
                "--out",
                str(out),
                "--memory",
                "off",
                "--set",
                "train.steps=1",
            ]
        )
        assert rc == 0
        written = _read_json(out / "config.json")
        assert written["memory"] == "off"
        assert written["train"]["steps"] == 1
        metrics = _read_json(out / "tiny-gen-seed0" / "metrics.json")
        assert metrics["memory"] == "off"

    def test_resume_continues_to_configured_steps(self, tmp_path, capsys):
        config = _write_yaml(tmp_path, GEN_MAPPING)
        short_out = tmp_path / "short"
        full_out = tmp_path / "full"
        resumed_out = tmp_path / "resumed"
        assert (
            main(
                [
                    "train",
                    "--config",
                    config,
                    "--out",
                    str(short_out),
                    "--set",
                    "train.steps=2",
                ]
            )
            == 0
        )
        assert main(["train", "--config", config, "--out", str(full_out)]) == 0
        checkpoint = short_out / "tiny-gen-seed0" / "checkpoint.npz"
        capsys.readouterr()
        rc = main(
            [
                "train",
                "--config",
                config,
                "--out",
                str(resumed_out),
                "--resume",
                str(checkpoint),
            ]
        )
        assert rc == 0
        assert "resumed to step 4" in capsys.readouterr().out
        resumed = _read_json(resumed_out / "tiny-gen-seed0" / "metrics.json")
        straight = _read_json(full_out / "tiny-gen-seed0" / "metrics.json")
        assert resumed["loss_final"] == straight["loss_final"]
        assert resumed["recon"] == straight["recon"]
        assert resumed["fid"] == straight["fid"]

    def test_resume_with_nothing_left_is_a_noop(self, tmp_path, capsys):
        config = _write_yaml(tmp_path, GEN_MAPPING)
        out = tmp_path / "out"
        assert main(["train", "--config", config, "--out", str(out)]) == 0
        checkpoint = out / "tiny-gen-seed0" / "checkpoint.npz"
        capsys.readouterr()
        rc = main(
            [
                "train",
                "--config",
                config,
                "--out",
                str(tmp_path / "again"),
                "--resume",
                str(checkpoint),
            ]
        )
        assert rc == 0
        assert "nothing to do" in capsys.readouterr().out


class TestEvalVerb:
    def test_eval_reproduces_training_metrics(self, tmp_path, capsys):
        config = _write_yaml(tmp_path, GEN_MAPPING)
        out = tmp_path / "out"
        assert main(["train", "--config", config, "--out", str(out)]) == 0
        trained = _read_json(out / "tiny-gen-seed0" / "metrics.json")
        eval_out = tmp_path / "eval"
        capsys.readouterr()
        rc = main(
            [
                "eval",
                "--checkpoint",
                str(out / "tiny-gen-seed0" / "checkpoint.npz"),
                "--out",
                str(eval_out),
            ]
        )
        assert rc == 0
        assert "evaluated" in capsys.readouterr().out
        scored = _read_json(eval_out / "metrics.json")
        for key in ("recon", "fid", "div", "ra"):
            assert scored[key] == trained[key]

    def test_eval_rejects_task_mismatch(self, tmp_path, capsys):
        gen_config = _write_yaml(tmp_path, GEN_MAPPING, "gen.yaml")
        pcd_config = _write_yaml(tmp_path, PCD_MAPPING, "pcd.yaml")
        out = tmp_path / "out"
        assert main(["train", "--config", gen_config, "--out", str(out)]) == 0
        rc = main(
            [
                "eval",
                "--checkpoint",
                str(out / "tiny-gen-seed0" / "checkpoint.npz"),
                "--config",
                pcd_config,
            ]
        )
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_eval_on_junk_npz_exits_2(self, tmp_path):
        junk = tmp_path / "junk.npz"
        np.savez(junk, foo=np.arange(3))
        assert main(["eval", "--checkpoint", str(junk)]) == 2


class TestExitCodes:
    def test_missing_config_file_exits_2(self, tmp_path, capsys):
        rc = main(["train", "--config", str(tmp_path / "absent.yaml")])
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_unknown_yaml_key_exits_2(self, tmp_path):
        mapping = copy.deepcopy(GEN_MAPPING)
        mapping["surprise"] = 1
        config = _write_yaml(tmp_path, mapping)
        assert main(["train", "--config", config]) == 2

    def test_bad_set_override_exits_2(self, tmp_path):
        config = _write_yaml(tmp_path, GEN_MAPPING)
        assert main(["train", "--config", config, "--set", "train.stepz=3"]) == 2
        assert main(["train", "--config", config, "--set", "noequals"]) == 2

    def test_bad_seeds_exit_2(self, tmp_path):
        config = _write_yaml(tmp_path, GEN_MAPPING)
        assert main(["train", "--config", config, "--seeds", "0,x"]) == 2

    def test_divergent_training_exits_3(self, tmp_path, capsys):
        config = _write_yaml(tmp_path, GEN_MAPPING)
        rc = main(
            [
                "train",
                "--config",
                config,
                "--out",
                str(tmp_path / "out"),
                "--set",
                "train.learning_rate=1e14",
            ]
        )
        assert rc == 3
        assert "numerical failure" in capsys.readouterr().err


class TestAblateVerb:
    def test_memory_axis_sweep(self, tmp_path, capsys):
        config = _write_yaml(tmp_path, GEN_MAPPING)
        out = tmp_path / "ablation"
        rc = main(
            [
                "ablate",
                "--config",
                config,
                "--out",
                str(out),
                "--axis",
                "memory=off,me",
            ]
        )
        assert rc == 0
        stdout = capsys.readouterr().out
        assert "memory=off" in stdout and "memory=me" in stdout
        result = _read_json(out / "ablation.json")
        assert set(result["groups"]) == {"memory=off", "memory=me"}
        assert len(result["rows"]) == 2
        for agg in result["groups"].values():
            assert set(agg["recon"]) == {"mean", "min", "max"}
        for metric in ("recon", "fid", "div", "ra"):
            assert (out / f"ablation_{metric}.png").exists()

    def test_ablate_without_axis_exits_2(self, tmp_path):
        config = _write_yaml(tmp_path, GEN_MAPPING)
        assert main(["ablate", "--config", config]) == 2

    def test_axis_without_values_exits_2(self, tmp_path):
        config = _write_yaml(tmp_path, GEN_MAPPING)
        assert main(["ablate", "--config", config, "--axis", "memory="]) == 2


class TestPlotVerb:
    def test_plot_run_directory(self, tmp_path, capsys):
        config = _write_yaml(tmp_path, GEN_MAPPING)
        out = tmp_path / "out"
        assert main(["train", "--config", config, "--out", str(out)]) == 0
        cell = out / "tiny-gen-seed0"
        capsys.readouterr()
        assert main(["plot", "--run", str(cell)]) == 0
        assert "wrote" in capsys.readouterr().out
        assert (cell / "loss.png").exists()
        assert (cell / "overlay.png").exists()

    def test_plot_ablation_directory(self, tmp_path):
        run_dir = tmp_path / "sweep"
        runs.write_json(
            run_dir / "ablation.json",
            {
                "groups": {
                    "memory=off": {"acc": {"mean": 40.0, "min": 35.0, "max": 45.0}},
                    "memory=me": {"acc": {"mean": 60.0, "min": 55.0, "max": 65.0}},
                }
            },
        )
        assert main(["plot", "--run", str(run_dir)]) == 0
        assert (run_dir / "ablation_acc.png").exists()

    def test_plot_empty_directory_exits_2(self, tmp_path):
        assert main(["plot", "--run", str(tmp_path)]) == 2


class TestDatagenVerb:
    def test_generation_roundtrip_is_bit_exact(self, tmp_path):
        config = _write_yaml(tmp_path, GEN_MAPPING)
        out = tmp_path / "data"
        assert main(["datagen", "--config", config, "--out", str(out)]) == 0
        cfg = RunConfig.from_yaml(config)
        manifest = data_io.read_manifest(out / "train")
        assert manifest["n_sequences"] == cfg.data.n_train
        assert manifest["config_hash"] == cfg.config_hash()
        expected_train, expected_val = runs.make_generation_data(cfg)
        loaded = data_io.read_motion_pairs(out / "train")
        assert len(loaded) == len(expected_train)
        for got, want in zip(loaded, expected_train):
            assert np.array_equal(got.actor.frames, want.actor.frames)
            assert np.array_equal(got.reactor.frames, want.reactor.frames)
            assert np.array_equal(got.object_pose, want.object_pose)
            assert np.array_equal(got.object_points, want.object_points)
            assert got.action_class == want.action_class
            assert got.latent == want.latent
        assert len(data_io.read_motion_pairs(out / "val")) == len(expected_val)

    def test_perception_roundtrip_is_bit_exact(self, tmp_path):
        config = _write_yaml(tmp_path, PCD_MAPPING)
        out = tmp_path / "data"
        assert main(["datagen", "--config", config, "--out", str(out)]) == 0
        cfg = RunConfig.from_yaml(config)
        expected_train, _ = runs.make_perception_data(cfg)
        loaded = data_io.read_clips(out / "train")
        assert len(loaded) == len(expected_train)
        for got, want in zip(loaded, expected_train):
            assert np.array_equal(got.points, want.points)
            assert np.array_equal(got.normals, want.normals)
            assert np.array_equal(got.labels, want.labels)
            assert got.n_classes == want.n_classes

    def test_set_override_changes_exported_data(self, tmp_path):
        config = _write_yaml(tmp_path, GEN_MAPPING)
        out = tmp_path / "data"
        rc = main(
            [
                "datagen",
                "--config",
                config,
                "--out",
                str(out),
                "--set",
                "data.n_train=2",
            ]
        )
        assert rc == 0
        assert data_io.read_manifest(out / "train")["n_sequences"] == 2

    def test_out_root_env_fallback(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        root = tmp_path / "exports"
        monkeypatch.setenv("STREAMHOI_OUT_ROOT", str(root))
        config = _write_yaml(tmp_path, GEN_MAPPING)
        assert main(["datagen", "--config", config]) == 0
        cfg = RunConfig.from_yaml(config)
        label = f"tiny-gen-{cfg.config_hash()[:8]}"
        assert (root / label / "train" / "manifest.json").exists()
