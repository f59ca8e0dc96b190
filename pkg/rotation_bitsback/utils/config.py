"""Configuration loading.

Values come from three layers, lowest priority first: the built-in defaults
below, an optional JSON file, and command-line flags.
"""

import copy
import json
from pathlib import Path

from components.codec import (
    DEFAULT_TAU_STREAM,
    LLAMA_TAU_WEIGHTS,
    OPT_TAU_WEIGHTS,
    CodecConfig,
)
from components.errors import InvalidConfig
from components.model import ModelDims
from components.stats import SWEEP_THRESHOLDS
from utils.logger import Logger, get_level_from_env

logger = Logger(__name__, level=get_level_from_env())

PRESETS = {
    "opt": {"tau_weights": OPT_TAU_WEIGHTS},
    "llama": {"tau_weights": LLAMA_TAU_WEIGHTS},
}

DEFAULT_CONFIG = {
    "model": {
        "layers": 4,
        "hidden": 32,
        "ffn": 64,
        "vocab": 256,
        "has_biases": True,
        "seq": 16,
        "seed": 3,
    },
    "codec": {
        "lambda_width": 32,
        "tau_weights": OPT_TAU_WEIGHTS,
        "tau_stream": DEFAULT_TAU_STREAM,
    },
    "verify": {"tokens_seed": 0, "batches": 16},
    "stats": {"bins": 20, "thresholds": list(SWEEP_THRESHOLDS)},
}


def _merge(base: dict, update: dict) -> dict:
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


def load_config(path: str | Path | None = None) -> dict:
    """Defaults merged with the JSON file at ``path``, if given.

    Raises:
        FileNotFoundError: ``path`` does not exist.
        InvalidConfig: The file is not a JSON object.
    """
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path is None:
        return config
    logger.info(f"Loading configuration from {path}")
    try:
        with open(path) as f:
            loaded = json.load(f)
    except json.JSONDecodeError as e:
        raise InvalidConfig(f"invalid JSON in {path}: {e}") from e
    if not isinstance(loaded, dict):
        raise InvalidConfig(f"{path} must contain a JSON object")
    logger.debug(f"Configuration loaded: {loaded}")
    return _merge(config, loaded)


def apply_overrides(config: dict, section: str, **overrides) -> dict:
    """Copy of ``config`` with non-None flag values written into ``section``."""
    merged = copy.deepcopy(config)
    merged.setdefault(section, {}).update({k: v for k, v in overrides.items() if v is not None})
    return merged


def apply_preset(config: dict, preset: str | None) -> dict:
    """Copy of ``config`` with the thresholds of ``preset`` applied.

    Raises:
        InvalidConfig: ``preset`` is not a known preset name.
    """
    if preset is None:
        return config
    if preset not in PRESETS:
        raise InvalidConfig(f"unknown preset {preset!r}, choose from {', '.join(PRESETS)}")
    logger.debug(f"Applying preset {preset}: {PRESETS[preset]}")
    return apply_overrides(config, "codec", **PRESETS[preset])


def codec_config(config: dict) -> CodecConfig:
    """Builds the codec parameters from the ``codec`` section."""
    section = config["codec"]
    return CodecConfig(
        lambda_width=int(section["lambda_width"]),
        tau_weights=float(section["tau_weights"]),
        tau_stream=float(section["tau_stream"]),
    )


def model_dims(config: dict) -> ModelDims:
    """Builds the model dimensions from the ``model`` section."""
    section = config["model"]
    return ModelDims(
        layers=int(section["layers"]),
        hidden=int(section["hidden"]),
        ffn=int(section["ffn"]),
        vocab=int(section["vocab"]),
        has_biases=bool(section["has_biases"]),
        seq=int(section["seq"]),
    )
