"""INI-style run configuration.

A config file holds a ``[synth]`` section (keys of :class:`SynthConfig`)
and/or a ``[train]`` section (keys of :class:`TrainConfig`, with ``lambda``
accepted as the spelling of ``lam``). Unknown sections or keys are errors.
"""
from __future__ import annotations

import configparser
import dataclasses
import os
from pathlib import Path
from typing import Any, Optional

from .synthgen import SynthConfig
from .trainer import TrainConfig

SEED_ENV = "STFALL_SEED"
SECTIONS = {"synth": SynthConfig, "train": TrainConfig}
ALIASES = {"lambda": "lam"}


class ConfigError(ValueError):
    pass


def _convert(raw: str, typ: Any, key: str):
    typ = {"int": int, "float": float, "str": str, "bool": bool}.get(typ, typ)
    try:
        if typ is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def parse_section(cls, items: dict[str, str], section: str, seed_override: Optional[int] = None):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in items.items():
        name = ALIASES.get(key, key)
        if name not in fields:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        kwargs[name] = _convert(raw, fields[name].type, key)
    if seed_override is not None:
        kwargs["seed"] = seed_override
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def env_seed() -> Optional[int]:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc


def load_config(path, section: str):
    """Parse one section of ``path``; a missing section yields the defaults."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case
    try:
        parser.read_string(path.read_text(), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    unknown = set(parser.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s) {sorted(unknown)} in {path}")
    items = dict(parser.items(section)) if parser.has_section(section) else {}
    return parse_section(SECTIONS[section], items, section, env_seed())


def dump_config(obj) -> dict:
    d = dataclasses.asdict(obj)
    if "lam" in d:
        d["lambda"] = d.pop("lam")
    return d
