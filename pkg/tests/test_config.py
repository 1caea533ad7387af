"""Run-config parsing: strict keys, dotted overrides, JSON round trips."""

from __future__ import annotations

import json

import pytest

from cycledepth.config import (ConfigError, RunConfig, apply_overrides,
                               config_from_dict, config_to_dict, load_config)


def test_defaults_validate_and_round_trip():
    cfg = RunConfig()
    cfg.validate()
    again = config_from_dict(config_to_dict(cfg))
    assert again == cfg


def test_dict_round_trip_preserves_every_field():
    cfg = config_from_dict({
        "scene": {"surface": "incline", "height": 48, "width": 40,
                  "seed": 7, "baseline_twist": [0, 0, 0, 2.0, 0, 0]},
        "train": {"warmup_steps": 50, "followup_steps": 20,
                  "warmup_chunks": 5, "followup_chunks": 2},
        "variant": "global",
        "depth_cap": 120.0,
        "seed": 3,
    })
    assert cfg.scene.surface == "incline"
    assert cfg.scene.baseline_twist == (0, 0, 0, 2.0, 0, 0)  # list to tuple
    assert cfg.train.warmup_steps == 50
    assert cfg.variant == "global" and cfg.seed == 3
    echoed = config_to_dict(cfg)
    assert echoed["scene"]["baseline_twist"] == [0, 0, 0, 2.0, 0, 0]
    assert config_from_dict(echoed) == cfg
    json.dumps(echoed)  # must be plain-JSON serializable


def test_unknown_keys_rejected_at_every_level():
    with pytest.raises(ConfigError, match="unknown key"):
        config_from_dict({"sceen": {}})
    with pytest.raises(ConfigError, match="scene"):
        config_from_dict({"scene": {"surfaces": "plane"}})
    with pytest.raises(ConfigError, match="train"):
        config_from_dict({"train": {"warmup_step": 10}})
    with pytest.raises(ConfigError):
        config_from_dict("not a dict")


def test_validation_failures():
    with pytest.raises(ConfigError, match="variant"):
        config_from_dict({"variant": "sepia"})
    with pytest.raises(ConfigError, match="surface"):
        config_from_dict({"scene": {"surface": "torus"}})
    with pytest.raises(ConfigError, match="depth_cap"):
        config_from_dict({"depth_cap": 0.0})
    with pytest.raises(ConfigError, match="spot_count"):
        config_from_dict({"spot_count": -2})
    with pytest.raises(ConfigError):
        config_from_dict({"train": {"warmup_chunks": 0}})


def test_overrides_walk_dotted_paths():
    cfg = apply_overrides(RunConfig(), [
        "train.warmup_steps=40",
        "scene.surface=bumps",
        "variant=global_local",
        "spot_sigma=[4.0, 9.0]",
        "train.use_stm=false",
    ])
    assert cfg.train.warmup_steps == 40
    assert cfg.scene.surface == "bumps"
    assert cfg.variant == "global_local"
    assert cfg.spot_sigma == (4.0, 9.0)
    assert cfg.train.use_stm is False


def test_override_values_fall_back_to_strings():
    cfg = apply_overrides(RunConfig(), ["scene.texture_kind=stripes"])
    assert cfg.scene.texture_kind == "stripes"


def test_override_errors():
    with pytest.raises(ConfigError, match="key=value"):
        apply_overrides(RunConfig(), ["train.warmup_steps"])
    with pytest.raises(ConfigError, match="unknown config key"):
        apply_overrides(RunConfig(), ["train.warmup=10"])
    with pytest.raises(ConfigError, match="unknown config section"):
        apply_overrides(RunConfig(), ["nosuch.warmup=10"])
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), ["variant=purple"])  # fails validation


def test_load_config_file_overrides_seed(tmp_path):
    p = tmp_path / "run.json"
    p.write_text(json.dumps({"scene": {"surface": "incline"},
                             "variant": "global"}))
    cfg = load_config(str(p), ["train.followup_steps=30"], seed=11)
    assert cfg.scene.surface == "incline"
    assert cfg.variant == "global"
    assert cfg.train.followup_steps == 30
    assert cfg.seed == 11
    assert load_config(None).seed == 0  # defaults path


def test_load_config_rejects_invalid_json(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(str(p))
