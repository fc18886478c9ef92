"""Config layering — config.yml defaults, then a key=value file, then CLI flags."""

from __future__ import annotations

from pathlib import Path

from engine.context import load_defaults
from intake.schema import ExperimentConfig

_NULLS = {"", "none", "null"}


def normalize_key(key: str) -> str:
    return key.strip().replace("-", "_")


def parse_key_value(text: str) -> dict[str, str | None]:
    """Parse ``key=value`` lines; '#' starts a comment, blank lines are ignored."""
    values: dict[str, str | None] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"config line {number}: expected key=value, got {raw!r}")
        value = value.strip()
        values[normalize_key(key)] = None if value.lower() in _NULLS else value
    return values


def load_key_value_file(path: str | Path) -> dict[str, str | None]:
    return parse_key_value(Path(path).read_text())


def merge_config(
    defaults: dict | None = None,
    file_values: dict | None = None,
    flags: dict | None = None,
) -> ExperimentConfig:
    """Later layers win; flags left as ``None`` do not override anything."""
    merged: dict = {}
    for layer in (defaults or {}, file_values or {}):
        merged.update({normalize_key(k): v for k, v in layer.items()})
    merged.update({normalize_key(k): v for k, v in (flags or {}).items() if v is not None})
    return ExperimentConfig(**merged)


def build_config(
    config_file: str | Path | None = None,
    flags: dict | None = None,
    defaults_path: str | Path | None = None,
) -> ExperimentConfig:
    """Resolve the full layered configuration for one run."""
    file_values = load_key_value_file(config_file) if config_file else None
    return merge_config(load_defaults(defaults_path), file_values, flags)
