"""Validation module."""

import math

from utils.logger import Logger, get_level_from_env

logger = Logger("validation", level=get_level_from_env())

DIM_KEYS = ("layers", "hidden", "ffn", "vocab", "seq")


def is_int_at_least(value, name: str, minimum: int = 1) -> bool:
    """Checks that ``value`` is an integer of at least ``minimum``."""
    if isinstance(value, bool) or not isinstance(value, int):
        logger.error(f"{name} must be an integer, got {value!r}.")
        return False
    if value < minimum:
        logger.error(f"{name} must be at least {minimum}, got {value}.")
        return False
    return True


def is_positive_threshold(value, name: str) -> bool:
    """Checks that ``value`` is a number greater than zero."""
    if isinstance(value, bool) or not isinstance(value, int | float) or math.isnan(value):
        logger.error(f"{name} must be a number, got {value!r}.")
        return False
    if value <= 0:
        logger.error(f"{name} must be positive, got {value}.")
        return False
    return True


def validate_model_section(section: dict) -> bool:
    """Validates the model dimensions and seed."""
    for key in DIM_KEYS:
        if key not in section:
            logger.error(f"Missing model.{key} in config.")
            return False
        minimum = 2 if key == "hidden" else 1
        if not is_int_at_least(section[key], f"model.{key}", minimum):
            return False
    if not isinstance(section.get("has_biases", True), bool):
        logger.error("model.has_biases must be true or false.")
        return False
    if not is_int_at_least(section.get("seed", 0), "model.seed", minimum=0):
        return False
    return True


def validate_codec_section(section: dict) -> bool:
    """Validates the eigenvalue width and both thresholds."""
    if section.get("lambda_width") not in (16, 32):
        logger.error(f"codec.lambda_width must be 16 or 32, got {section.get('lambda_width')!r}.")
        return False
    for key in ("tau_weights", "tau_stream"):
        if key not in section:
            logger.error(f"Missing codec.{key} in config.")
            return False
        if not is_positive_threshold(section[key], f"codec.{key}"):
            return False
    return True


def validate_config_values(config: dict) -> bool:
    """Validates the configuration values."""
    for name in ("model", "codec", "verify", "stats"):
        if not isinstance(config.get(name), dict):
            logger.error(f"Missing {name} section in config.")
            return False

    if not validate_model_section(config["model"]):
        return False
    if not validate_codec_section(config["codec"]):
        return False

    verify = config["verify"]
    if not is_int_at_least(verify.get("tokens_seed"), "verify.tokens_seed", minimum=0):
        return False
    if not is_int_at_least(verify.get("batches"), "verify.batches"):
        return False

    stats = config["stats"]
    if not is_int_at_least(stats.get("bins"), "stats.bins"):
        return False
    thresholds = stats.get("thresholds")
    if not isinstance(thresholds, list) or not thresholds:
        logger.error("stats.thresholds must be a non-empty list.")
        return False
    for threshold in thresholds:
        if not is_positive_threshold(threshold, "stats.thresholds"):
            return False

    logger.debug("Configuration is valid.")
    return True
