"""Experiment config files: flat `key.path = value` lines with # comments.

Values are numbers, booleans, strings or [bracketed, lists]. Keys address
ExperimentConfig fields by dotted path (`node.n_nodes = 24`); the reserved
prefix `sweep.` declares a swept parameter with a list of values, and sweeps
grid in declaration order. Errors carry the offending line number.
"""

from __future__ import annotations

import math
from dataclasses import fields

import numpy as np

from photonrc.experiment import ExperimentConfig
from photonrc.node import EncodingMethod


class ConfigError(ValueError):
    """Config file problem, anchored to a line number."""

    def __init__(self, path: str, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.line_no = line_no


def _parse_scalar(token: str):
    token = token.strip()
    low = token.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("inf", "+inf", "infinity"):
        return math.inf
    if low == "none":
        return None
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        pass
    if len(token) >= 2 and token[0] == token[-1] and token[0] in "'\"":
        return token[1:-1]
    return token


def _parse_value(token: str):
    token = token.strip()
    if token.startswith("["):
        if not token.endswith("]"):
            raise ValueError("unterminated list")
        inner = token[1:-1].strip()
        if not inner:
            return []
        return [_parse_scalar(part) for part in inner.split(",")]
    return _parse_scalar(token)


def _coerce(value, current):
    """Nudge parsed scalars toward the type of the field they replace."""
    if isinstance(current, bool):
        if isinstance(value, bool):
            return value
        raise TypeError(f"expected a boolean, got {value!r}")
    if isinstance(current, float) and isinstance(value, int):
        return float(value)
    if isinstance(current, EncodingMethod) and isinstance(value, str):
        return EncodingMethod(value.lower())
    if current is not None and not isinstance(value, type(current)) \
            and not isinstance(current, type(value)):
        raise TypeError(f"expected {type(current).__name__}, got {value!r}")
    return value


def parse_config(path: str) -> ExperimentConfig:
    """Parse and validate a config file into an ExperimentConfig."""
    cfg = ExperimentConfig()
    sweep: list[tuple[str, list]] = []
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()

    for line_no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(path, line_no, f"expected 'key = value', got {line!r}")
        key, _, rhs = line.partition("=")
        key = key.strip()
        try:
            value = _parse_value(rhs)
        except ValueError as exc:
            raise ConfigError(path, line_no, str(exc)) from None

        if key == "seeds":
            if not isinstance(value, list) or not all(isinstance(v, int) for v in value):
                raise ConfigError(path, line_no, "seeds must be a list of integers")
            cfg.seeds = value
            continue
        if key.startswith("sweep."):
            target = key[len("sweep."):]
            if not isinstance(value, list) or not value:
                raise ConfigError(path, line_no, "sweep values must be a non-empty list")
            try:
                owner, leaf = cfg.resolve_path(target)
                current = getattr(owner, leaf)
                value = [_coerce(v, current) for v in value]
            except (KeyError, TypeError) as exc:
                raise ConfigError(path, line_no, str(exc)) from None
            sweep.append((target, value))
            continue

        try:
            owner, leaf = cfg.resolve_path(key)
            setattr(owner, leaf, _coerce(value, getattr(owner, leaf)))
        except (KeyError, TypeError) as exc:
            raise ConfigError(path, line_no, str(exc)) from None

    cfg.sweep = sweep
    # Re-run field validation on every touched dataclass.
    try:
        for f in fields(cfg):
            section = getattr(cfg, f.name)
            if hasattr(section, "__post_init__"):
                section.__post_init__()
        cfg.__post_init__()
    except ValueError as exc:
        raise ConfigError(path, 0, str(exc)) from None
    return cfg


def schema_lines() -> list[str]:
    """Human-readable key listing with defaults (the `validate --schema` output)."""
    out = ["mode = elm | tdrc | kk | raw_lr", "seeds = [0]",
           "sweep.<key> = [v1, v2, ...]   # repeatable; grid in declaration order"]
    cfg = ExperimentConfig()
    for f in fields(cfg):
        section = getattr(cfg, f.name)
        if hasattr(section, "__dataclass_fields__"):
            for sub in fields(section):
                default = getattr(section, sub.name)
                if isinstance(default, EncodingMethod):
                    default = default.value
                if isinstance(default, np.ndarray):
                    continue
                out.append(f"{f.name}.{sub.name} = {default}")
        elif f.name not in ("sweep", "seeds", "mode"):
            out.append(f"{f.name} = {section}")
    return out
