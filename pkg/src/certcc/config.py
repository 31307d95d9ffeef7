"""Flat key-value configuration files and dataclass coercion."""

from __future__ import annotations

import dataclasses
from typing import Any, Mapping

__all__ = ["parse_config_file", "parse_overrides", "coerce_into", "format_config"]


def parse_config_file(path) -> dict[str, str]:
    """Parse `key = value` lines; '#' starts a comment."""
    out: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def parse_overrides(pairs) -> dict[str, str]:
    """Parse repeated 'key=value' command-line overrides."""
    out: dict[str, str] = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ValueError(f"override {pair!r} is not of the form key=value")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _coerce_value(raw: str, target_type) -> Any:
    if target_type is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"cannot read {raw!r} as a boolean")
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    return raw


def coerce_into(instance, mapping: Mapping[str, str], aliases: Mapping[str, str] | None = None):
    """Return a dataclass copy with string values coerced onto its fields."""
    aliases = aliases or {}
    fields = {f.name: f for f in dataclasses.fields(instance)}
    updates = {}
    for key, raw in mapping.items():
        name = aliases.get(key, key)
        if name not in fields:
            raise ValueError(f"unknown configuration key {key!r}")
        current = getattr(instance, name)
        updates[name] = _coerce_value(raw, type(current))
    return dataclasses.replace(instance, **updates)


def format_config(instance) -> str:
    """Render a dataclass as a flat key-value file body."""
    lines = []
    for f in dataclasses.fields(instance):
        lines.append(f"{f.name} = {getattr(instance, f.name)}")
    return "\n".join(lines) + "\n"
