import json

import pytest

from rbsl.config import (
    CsvMetricsWriter,
    RunConfig,
    RunConfigError,
    load_run_config,
    read_metrics_csv,
    resolve_run_config,
    write_manifest,
    load_manifest,
)


class TestResolve:
    def test_empty_document_gives_defaults(self):
        config = resolve_run_config({})
        assert config.limit == 1.5
        assert config.goal["gamma"] == 0.98
        assert config.recovery["lam"] == 10.0
        assert config.env.variant == "reach2d"

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(RunConfigError, match="unknown config keys"):
            resolve_run_config({"lr": 1e-3})

    def test_unknown_section_key_rejected(self):
        with pytest.raises(RunConfigError, match="unknown goal config keys"):
            resolve_run_config({"goal": {"learning_rate": 1e-3}})

    def test_seed_fans_out_to_trainers(self):
        config = resolve_run_config({"seed": 7})
        assert config.goal["seed"] == 7
        assert config.recovery["seed"] == 8

    def test_explicit_trainer_seeds_win(self):
        config = resolve_run_config({"seed": 7, "goal": {"seed": 100}})
        assert config.goal["seed"] == 100
        assert config.recovery["seed"] == 8

    def test_seed_override_beats_document(self):
        config = resolve_run_config({"seed": 7}, seed_override=99)
        assert config.seed == 99
        assert config.goal["seed"] == 99

    def test_round_trip_is_identity(self):
        raw = {
            "seed": 3,
            "limit": 0.4,
            "env": {"variant": "push2d", "p_block": 0.5},
            "goal": {"epochs": 5, "hidden": [32, 32]},
            "recovery": {"lam": 2.0},
            "eval_episodes": 10,
            "eval_seeds": [1, 2],
        }
        once = resolve_run_config(raw)
        twice = resolve_run_config(once.to_dict())
        assert once.to_dict() == twice.to_dict()

    def test_invalid_limit_rejected(self):
        with pytest.raises(RunConfigError):
            resolve_run_config({"limit": -1.0})

    def test_config_file_loading(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"seed": 5}))
        assert load_run_config(path).seed == 5
        with pytest.raises(RunConfigError, match="not found"):
            load_run_config(tmp_path / "absent.json")
        path.write_text("{not json")
        with pytest.raises(RunConfigError, match="not valid JSON"):
            load_run_config(path)


class TestMetricsCsv:
    def test_floats_round_trip_exactly(self, tmp_path):
        path = tmp_path / "metrics.csv"
        rows = [
            {"epoch": 1, "q_loss": 0.1234567890123456789, "policy_loss": -2.5},
            {"epoch": 2, "q_loss": 1e-17, "policy_loss": float(1 / 3)},
        ]
        with CsvMetricsWriter(path, ["epoch", "q_loss", "policy_loss"]) as writer:
            for row in rows:
                writer.write(row)
        loaded = read_metrics_csv(path)
        for orig, back in zip(rows, loaded):
            assert back["q_loss"] == orig["q_loss"]
            assert back["policy_loss"] == orig["policy_loss"]

    def test_manifest_round_trip(self, tmp_path):
        manifest = {"seed": 1, "config": RunConfig().to_dict()}
        write_manifest(tmp_path, manifest)
        assert load_manifest(tmp_path) == manifest
