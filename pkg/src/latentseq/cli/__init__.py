"""Command-line entry point and experiment configuration."""

from .config import ConfigError, ExperimentConfig, config_from_dict, load_config
from .main import cli, main

__all__ = ["ConfigError", "ExperimentConfig", "cli", "config_from_dict", "load_config", "main"]
