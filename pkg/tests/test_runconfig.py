"""Run-config loading: TOML/JSON equivalence, unknown-key rejection,
persistence of the resolved document."""

import json

import pytest

from voxalign.encoder import ConfigError
from voxalign.runconfig import (
    EvalConfig,
    RunConfig,
    TrainConfig,
    config_from_dict,
    load_config,
    persist_config,
)

TOML_DOC = """
seed = 9
out_dir = "runs/demo"
synth_count = 12
optimizer = "adamw_only"

[encoder]
channels = 16
heads = 2
layers = 1
embed_dim = 16
in_plane_size = 32
patch_xy = 8
patch_z = 8

[optim]
lr = 0.002
weight_decay = 0.0001

[synth]
depth_range = [32, 40]
in_plane_size = 32
organs_range = [1, 3]

[train]
steps = 5
batch_size = 2

[eval]
slice_counts = [16, 32]
b_multipliers = [0.5, 1.0, 2.0]
pairs = 4
"""


def test_toml_and_json_equivalence(tmp_path):
    toml_path = tmp_path / "cfg.toml"
    toml_path.write_text(TOML_DOC)
    cfg_toml = load_config(toml_path)

    doc = {
        "seed": 9, "out_dir": "runs/demo", "synth_count": 12,
        "optimizer": "adamw_only",
        "encoder": {"channels": 16, "heads": 2, "layers": 1, "embed_dim": 16,
                    "in_plane_size": 32, "patch_xy": 8, "patch_z": 8},
        "optim": {"lr": 0.002, "weight_decay": 0.0001},
        "synth": {"depth_range": [32, 40], "in_plane_size": 32, "organs_range": [1, 3]},
        "train": {"steps": 5, "batch_size": 2},
        "eval": {"slice_counts": [16, 32], "b_multipliers": [0.5, 1.0, 2.0], "pairs": 4},
    }
    json_path = tmp_path / "cfg.json"
    json_path.write_text(json.dumps(doc))
    cfg_json = load_config(json_path)
    assert cfg_toml == cfg_json
    assert cfg_toml.encoder.channels == 16
    assert cfg_toml.synth.depth_range == (32, 40)
    assert cfg_toml.eval.slice_counts == (16, 32)


def test_unknown_top_level_key_rejected():
    with pytest.raises(ConfigError, match="typo_key"):
        config_from_dict({"typo_key": 1})


def test_unknown_section_key_rejected():
    with pytest.raises(ConfigError, match="chanels"):
        config_from_dict({"encoder": {"chanels": 16}})


def test_unknown_nested_key_names_section():
    with pytest.raises(ConfigError, match=r"\[train\]"):
        config_from_dict({"train": {"step": 10}})


def test_invalid_values_rejected():
    with pytest.raises(ConfigError):
        config_from_dict({"optimizer": "sgd"})
    with pytest.raises(ConfigError):
        config_from_dict({"train": {"dtype": "float16"}})
    with pytest.raises(ConfigError):
        config_from_dict({"eval": {"b_multipliers": [0.5, 2.0]}})  # must include 1.0


def test_defaults_round_trip():
    cfg = RunConfig()
    doc = cfg.to_json_dict()
    assert config_from_dict(doc) == cfg


def test_persist_config_writes_resolved_json(tmp_path):
    cfg = RunConfig(seed=3)
    persist_config(cfg, tmp_path)
    path = tmp_path / "resolved_config.json"
    assert path.exists()
    doc = json.loads(path.read_text())
    assert doc["seed"] == 3
    assert config_from_dict(doc) == cfg


def test_section_defaults():
    assert TrainConfig().pad_mode == "repeat"
    assert EvalConfig().slice_counts == (32, 64, 128)
    assert EvalConfig().b_multipliers == (0.5, 1.0, 2.0)
    assert RunConfig().optim.lr == 1e-3
    assert RunConfig().optim.weight_decay == 1e-4
