"""Run settings: built-in defaults, overridden by a ``key = value`` file, overridden by flags."""
from __future__ import annotations

from pathlib import Path

from .audio_io import DEFAULT_NAME_PATTERN
from .errors import ConfigInvalid

DEFAULTS: dict[str, object] = {
    "seed": 0,
    "jobs": 1,
    "test_fraction": 0.2,
    "folds": 5,
    "repeats": 3,
    "learning_rate": 1e-3,
    "epochs": 30,
    "batch_size": 8,
    "clip_norm": 5.0,
    "conv_channels": "64,64",
    "kernel": 5,
    "hidden": 64,
    "threshold": 0.5,
    "merge_gap": 2,
    "min_duration": 3,
    "name_pattern": DEFAULT_NAME_PATTERN,
    "n_subjects": 25,
    "wheeze_rate": 0.3,
    "crackle_rate": 0.3,
}


def _coerce(key: str, raw):
    default = DEFAULTS[key]
    if isinstance(raw, type(default)) and not isinstance(raw, bool):
        return raw
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigInvalid(f"{key}: cannot parse {raw!r}") from None
    return str(raw)


def read_config_file(path) -> dict:
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigInvalid(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigInvalid(f"{path}:{n}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def resolve(file_values: dict | None, flag_values: dict) -> dict:
    cfg = dict(DEFAULTS)
    cfg.update(file_values or {})
    for k, v in flag_values.items():
        if v is None:
            continue
        if k not in DEFAULTS:
            raise ConfigInvalid(f"unknown setting {k!r}")
        cfg[k] = _coerce(k, v)
    return cfg


def format_config(cfg: dict) -> str:
    return "".join(f"{k} = {cfg[k]}\n" for k in sorted(cfg))


def conv_channels(cfg: dict) -> tuple[int, ...]:
    try:
        return tuple(int(c) for c in str(cfg["conv_channels"]).split(",") if c.strip())
    except ValueError:
        raise ConfigInvalid(f"conv_channels: {cfg['conv_channels']!r}") from None
