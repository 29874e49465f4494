"""Run configuration: JSON schema, validation and defaults."""

from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

SCENARIO_TYPES = ("los_dynamic", "walker", "sync", "network")

_range2 = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_point = _range2

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "asyncisac benchmark run",
    "type": "object",
    "additionalProperties": False,
    "required": ["scenario", "methods"],
    "properties": {
        "scenario": {
            "type": "object",
            "required": ["type"],
            "additionalProperties": False,
            "properties": {
                "type": {"enum": list(SCENARIO_TYPES)},
                "num_blocks": {"type": "integer", "minimum": 8},
                "snr_db": {"type": ["number", "null"]},
                "los_delay": {"type": "number", "minimum": 0},
                "dynamic_delay": {"type": "number", "minimum": 0},
                "doppler": {"type": "number"},
                "dynamic_power_db": {"type": "number"},
                "los_aoa": _range2,
                "dynamic_aoa": _range2,
                "sweep_amplitude": {"type": "number", "minimum": 0},
                "sweep_period": {"type": "number", "exclusiveMinimum": 0},
                "pps_sigma": {"type": "number", "minimum": 0},
                "counter_jitter": {"type": "integer", "minimum": 0},
                "counter_rate": {"type": "number", "exclusiveMinimum": 0},
                "skew_ppm": {"type": "number"},
                "records": {"type": "integer", "minimum": 2},
                "rru_positions": {"type": "array", "items": _point, "minItems": 2},
                "tx_position": _point,
                "target_box": {"type": "array", "items": _range2, "minItems": 2, "maxItems": 2},
                "slots": {"type": "integer", "minimum": 1},
                "walk_sigma": {"type": "number", "minimum": 0},
                "toa_sigma": {"type": "number", "exclusiveMinimum": 0},
                "init_error": {"type": "number", "minimum": 0},
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "num_subcarriers": {"type": "integer", "minimum": 1},
                "subcarrier_spacing": {"type": "number", "exclusiveMinimum": 0},
                "block_period": {"type": "number", "exclusiveMinimum": 0},
                "num_rx": {"type": "integer", "minimum": 2},
                "num_tx": {"type": "integer", "minimum": 1},
                "carrier_frequency": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "clock": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "stability_ppm": {"type": "number", "minimum": 0},
                "phase_mode": {"enum": ["perBlockUniform", "frozen"]},
                "cfo_walk_scale": {"type": "number", "minimum": 0},
                "max_tmo": {"type": "number", "minimum": 0},
            },
        },
        "methods": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["name"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string"},
                    "label": {"type": "string"},
                    "params": {"type": "object"},
                },
            },
        },
        "trials": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "workers": {"type": "integer", "minimum": 1},
        "output": {"type": "string"},
    },
}

SCENARIO_DEFAULTS = {
    "los_dynamic": {
        "num_blocks": 250, "snr_db": 20.0, "los_delay": 30e-9, "dynamic_delay": 80e-9,
        "doppler": 12.0, "dynamic_power_db": -20.0, "los_aoa": [-1.0, 1.0], "dynamic_aoa": [-1.0, 1.0],
    },
    "walker": {
        "num_blocks": 800, "snr_db": 15.0, "los_delay": 30e-9, "dynamic_delay": 80e-9,
        "dynamic_power_db": -20.0, "sweep_amplitude": 40.0, "sweep_period": 8.0,
        "los_aoa": [0.0, 0.0], "dynamic_aoa": [0.5, 1.2],
    },
    "sync": {
        "pps_sigma": 30e-9, "counter_jitter": 0, "counter_rate": 1e8, "skew_ppm": 10.0, "records": 2,
    },
    "network": {
        "rru_positions": [[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]],
        "tx_position": [-2.0, 5.0], "target_box": [[2.0, 8.0], [2.0, 8.0]],
        "slots": 50, "walk_sigma": 2e-9, "toa_sigma": 1e-9, "init_error": 1.0,
    },
}

GRID_DEFAULTS = {
    "los_dynamic": {"num_subcarriers": 64, "block_period": 10e-3, "num_rx": 2},
    "walker": {"num_subcarriers": 16, "block_period": 10e-3, "num_rx": 2},
}

CLOCK_DEFAULTS = {"stability_ppm": 20.0, "phase_mode": "perBlockUniform", "cfo_walk_scale": 1.0, "max_tmo": 1e-6}


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key path."""

    def __init__(self, message: str, field: str = ""):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


def _path(err: jsonschema.ValidationError) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def validate(cfg: dict) -> dict:
    """Validate ``cfg`` and return a copy with defaults filled in."""
    from .methods import REGISTRY

    v = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(v.iter_errors(cfg), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        e = errors[0]
        raise ConfigError(e.message, _path(e))
    out = copy.deepcopy(cfg)
    kind = out["scenario"]["type"]
    out["scenario"] = {**SCENARIO_DEFAULTS[kind], **out["scenario"]}
    out["grid"] = {**GRID_DEFAULTS.get(kind, {}), **out.get("grid", {})}
    out["clock"] = {**CLOCK_DEFAULTS, **out.get("clock", {})}
    out.setdefault("trials", 1)
    out.setdefault("seed", 0)
    out.setdefault("workers", 1)
    out.setdefault("output", "bench_out")
    labels = set()
    for i, m in enumerate(out["methods"]):
        spec = REGISTRY.get(m["name"])
        if spec is None:
            raise ConfigError(f"unknown method {m['name']!r}", f"methods.{i}.name")
        if kind not in spec.scenarios:
            raise ConfigError(f"method {m['name']!r} does not apply to scenario {kind!r}", f"methods.{i}.name")
        m.setdefault("params", {})
        unknown = set(m["params"]) - set(spec.params)
        if unknown:
            raise ConfigError(f"unknown parameter {sorted(unknown)[0]!r} for {m['name']}", f"methods.{i}.params")
        m.setdefault("label", m["name"])
        if m["label"] in labels:
            raise ConfigError(f"duplicate method label {m['label']!r}", f"methods.{i}.label")
        labels.add(m["label"])
    return out


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON ({e.msg} at line {e.lineno})") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object", "<root>")
    return validate(cfg)


def write_schema(path) -> None:
    Path(path).write_text(json.dumps(SCHEMA, indent=2) + "\n")
