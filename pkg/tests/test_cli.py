from __future__ import annotations

import json

import numpy as np
import pytest

from radassist.cli import main
from radassist.config import load_config
from radassist.errors import InvalidInputError
from radassist.model import ModelConfig, ModelWeights
from radassist.registry import ModelRegistry


class TestConfig:
    def test_defaults(self):
        config = load_config()
        assert config.n_batch == 4
        assert config.model_config().labels == ("lesion-a", "lesion-b", "lesion-c")

    def test_file_then_env_then_overrides(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"n_batch": 8, "port": 9000, "data_dir": "from-file"}))
        config = load_config(
            path,
            env={"RADASSIST_PORT": "9100"},
            overrides={"data_dir": "from-cli"},
        )
        assert config.n_batch == 8
        assert config.port == 9100
        assert config.data_dir == "from-cli"

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"nonsense": 1}))
        with pytest.raises(InvalidInputError):
            load_config(path)

    def test_sim_mode_disables_age_trigger(self):
        config = load_config(env={"RADASSIST_SIM_MODE": "true"})
        assert config.effective_t_max() == 0.0

    def test_labels_from_env_csv(self):
        config = load_config(env={"RADASSIST_LABELS": "a,b"})
        assert config.labels == ("a", "b")


class TestSimulateCommand:
    def test_writes_all_artifacts(self, tmp_path, capsys):
        config_path = tmp_path / "exp.json"
        config_path.write_text(json.dumps({
            "nodes": 1, "studies_per_node": 8, "test_studies": 16,
            "master_seed": 5, "blind_spots": [], "arms": ["isolated"],
        }))
        out_dir = tmp_path / "run"
        code = main([
            "simulate", "--config", str(config_path), "--out", str(out_dir),
        ])
        assert code == 0
        for name in ("report.json", "summary.txt", "metrics.csv",
                     "figures/auc_by_arm.png", "figures/blind_spot_matrix.png"):
            assert (out_dir / name).exists(), name
        assert "isolated" in capsys.readouterr().out

    def test_seed_flag_overrides_config(self, tmp_path):
        config_path = tmp_path / "exp.json"
        config_path.write_text(json.dumps({
            "nodes": 1, "studies_per_node": 6, "test_studies": 12,
            "master_seed": 5, "blind_spots": [], "arms": ["isolated"],
        }))
        main(["simulate", "--config", str(config_path), "--out", str(tmp_path / "a")])
        main(["simulate", "--config", str(config_path), "--seed", "6",
              "--out", str(tmp_path / "b")])
        first = (tmp_path / "a" / "report.json").read_text()
        second = (tmp_path / "b" / "report.json").read_text()
        assert json.loads(first)["config"]["master_seed"] == 5
        assert json.loads(second)["config"]["master_seed"] == 6
        assert first != second


class TestReportCommand:
    def test_rerenders_from_report_json(self, tmp_path, capsys):
        config_path = tmp_path / "exp.json"
        config_path.write_text(json.dumps({
            "nodes": 1, "studies_per_node": 8, "test_studies": 16,
            "master_seed": 5, "blind_spots": [], "arms": ["isolated"],
        }))
        out_dir = tmp_path / "run"
        main(["simulate", "--config", str(config_path), "--out", str(out_dir)])
        capsys.readouterr()
        code = main(["report", "--run", str(out_dir)])
        assert code == 0
        out = capsys.readouterr().out
        assert "blind-spot matrix" in out

    def test_missing_run_dir_fails(self, tmp_path, capsys):
        assert main(["report", "--run", str(tmp_path / "nope")]) == 2


class TestMergeCommand:
    def test_merges_all_owners(self, tmp_path, capsys):
        cfg = ModelConfig()
        registry = ModelRegistry(tmp_path, cfg)
        registry.seed_base("lesion-detector")
        rng = np.random.default_rng(3)
        for owner in ("alice", "bob"):
            w = ModelWeights.zeros(cfg)
            for label in cfg.labels:
                w.planes[label] = rng.normal(0, 0.1, cfg.shape)
            registry.publish("lesion-detector", owner, w)
        code = main([
            "merge", "--model", "lesion-detector", "--data-dir", str(tmp_path),
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "alice" in out and "bob" in out and "swarm-learned" in out
        reloaded = ModelRegistry(tmp_path, cfg)
        a = reloaded.resolve("lesion-detector", "alice")[1]
        b = reloaded.resolve("lesion-detector", "bob")[1]
        assert a.equals(b)

    def test_no_nodes_fails(self, tmp_path, capsys):
        cfg = ModelConfig()
        ModelRegistry(tmp_path, cfg).seed_base("lesion-detector")
        assert main(["merge", "--model", "lesion-detector",
                     "--data-dir", str(tmp_path)]) == 2
