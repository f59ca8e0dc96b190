"""Ambient helpers: logging, configuration, validation."""
