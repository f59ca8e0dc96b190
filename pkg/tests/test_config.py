import copy
import json

import pytest

from components.codec import DEFAULT_TAU_STREAM, LLAMA_TAU_WEIGHTS, CodecConfig
from components.errors import InvalidConfig
from components.model import ModelDims
from utils.config import (
    DEFAULT_CONFIG,
    apply_overrides,
    apply_preset,
    codec_config,
    load_config,
    model_dims,
)
from utils.logger import LogLevel, get_level_from_env
from utils.validation import validate_config_values


def test_defaults_build_the_reference_objects():
    config = load_config()
    assert model_dims(config) == ModelDims()
    assert codec_config(config) == CodecConfig()
    assert config["codec"]["tau_stream"] == DEFAULT_TAU_STREAM
    assert validate_config_values(config)


def test_file_overrides_defaults(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"model": {"hidden": 16}, "verify": {"batches": 4}}))
    config = load_config(path)
    assert config["model"]["hidden"] == 16
    assert config["model"]["layers"] == DEFAULT_CONFIG["model"]["layers"]
    assert config["verify"] == {"tokens_seed": 0, "batches": 4}


def test_loading_does_not_touch_defaults(tmp_path):
    before = copy.deepcopy(DEFAULT_CONFIG)
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"model": {"hidden": 99}}))
    load_config(path)
    assert DEFAULT_CONFIG == before


def test_flag_overrides_skip_none():
    config = apply_overrides(load_config(), "codec", tau_weights=0.02, tau_stream=None)
    assert config["codec"]["tau_weights"] == 0.02
    assert config["codec"]["tau_stream"] == DEFAULT_TAU_STREAM


def test_presets():
    assert apply_preset(load_config(), "llama")["codec"]["tau_weights"] == LLAMA_TAU_WEIGHTS
    assert apply_preset(load_config(), None) == load_config()
    with pytest.raises(InvalidConfig):
        apply_preset(load_config(), "gpt")


def test_invalid_json(tmp_path):
    path = tmp_path / "config.json"
    path.write_text("{")
    with pytest.raises(InvalidConfig):
        load_config(path)


@pytest.mark.parametrize(
    "section, key, value",
    [
        ("model", "hidden", 1),
        ("model", "layers", 0),
        ("model", "vocab", 2.5),
        ("model", "has_biases", "yes"),
        ("model", "seed", -1),
        ("codec", "lambda_width", 24),
        ("codec", "tau_weights", -0.1),
        ("codec", "tau_stream", "small"),
        ("verify", "batches", 0),
        ("stats", "bins", True),
        ("stats", "thresholds", []),
    ],
)
def test_validation_rejects(section, key, value):
    config = load_config()
    config[section][key] = value
    assert not validate_config_values(config)


def test_validation_accepts_zero_seeds():
    config = apply_overrides(load_config(), "model", seed=0)
    config = apply_overrides(config, "verify", tokens_seed=0)
    assert validate_config_values(config)


def test_validation_accepts_infinite_thresholds():
    config = apply_overrides(load_config(), "codec", tau_weights=float("inf"))
    assert validate_config_values(config)


def test_validation_needs_every_section():
    config = load_config()
    del config["stats"]
    assert not validate_config_values(config)


def test_log_level_from_env(monkeypatch):
    monkeypatch.setenv("LOG_LEVEL", "debug")
    assert get_level_from_env() is LogLevel.DEBUG
    monkeypatch.setenv("LOG_LEVEL", "LOUD")
    with pytest.raises(ValueError):
        get_level_from_env()
