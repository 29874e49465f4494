"""Configuration-driven benchmark harness."""

from .config import SCHEMA, ConfigError, load_config, validate
from .methods import REGISTRY
from .runner import compare_methods, demo_ranging_ambiguity, execute, ranging_error, run

__all__ = ["SCHEMA", "ConfigError", "load_config", "validate", "REGISTRY", "compare_methods",
           "demo_ranging_ambiguity", "execute", "ranging_error", "run"]
