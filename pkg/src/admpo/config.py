"""INI-style run configuration: shipped defaults, optional user file, then flag overrides."""
from __future__ import annotations

import configparser
import dataclasses
from importlib import resources

from .exceptions import ConfigurationError
from .loops import ModelConfig, OfflineLoopConfig, OnlineLoopConfig, SacConfig

EVAL_FIELDS = {
    "horizon": 50,
    "starts": 100,
    "points": 500,
    "scatter_horizon": 5,
    "m_values": (2, 3, 5),
    "seeds": (0, 1, 2),
    "learned_checkpoint": None,
}
DATASET_FIELDS = {"behavior": "random", "episodes": 200}

SECTIONS = {
    "online": OnlineLoopConfig,
    "offline": OfflineLoopConfig,
    "model": ModelConfig,
    "sac": SacConfig,
    "dataset": DATASET_FIELDS,
    "eval": EVAL_FIELDS,
}


def _field_defaults(section: str) -> dict:
    spec = SECTIONS[section]
    if isinstance(spec, dict):
        return dict(spec)
    out = {}
    for f in dataclasses.fields(spec):
        out[f.name] = f.default if f.default is not dataclasses.MISSING else f.default_factory()
    return out


def _field_kinds(section: str) -> dict:
    spec = SECTIONS[section]
    if isinstance(spec, dict):
        return {k: _kind_of(v, "") for k, v in spec.items()}
    return {f.name: _kind_of(f.default, str(f.type)) for f in dataclasses.fields(spec)}


def _kind_of(default, annotation: str) -> str:
    if isinstance(default, bool) or annotation == "bool":
        return "bool"
    if isinstance(default, tuple) or annotation.startswith("tuple"):
        return "tuple"
    if isinstance(default, int) or annotation.startswith("int"):
        return "int"
    if isinstance(default, float) or annotation.startswith("float"):
        return "float"
    return "str"


def _number(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


def coerce(section: str, key: str, raw):
    """Convert a raw (string) value to the type the named field expects."""
    kinds = _field_kinds(section)
    if key not in kinds:
        raise ConfigurationError(f"unknown key {section}.{key}", key=f"{section}.{key}")
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if text.lower() in ("none", ""):
        return None
    kind = kinds[key]
    try:
        if kind == "bool":
            low = text.lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError(text)
            return low in ("true", "yes", "1", "on")
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "tuple":
            return tuple(_number(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise ConfigurationError(f"bad value {raw!r} for {section}.{key} (expected {kind})",
                                 key=f"{section}.{key}") from None
    return text


def _read_ini(text_or_path, is_path: bool) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        if is_path:
            with open(text_or_path) as fh:
                cp.read_file(fh)
        else:
            cp.read_string(text_or_path)
    except FileNotFoundError:
        raise ConfigurationError(f"config file {text_or_path} not found", key="config") from None
    except configparser.Error as exc:
        raise ConfigurationError(f"cannot parse config: {exc}", key="config") from None
    return cp


def _apply(resolved: dict, cp: configparser.ConfigParser, env: str) -> None:
    for name in cp.sections():
        base, _, env_tag = name.partition(".")
        if env_tag and env_tag != env:
            continue
        if base == "run":
            continue
        if base not in SECTIONS:
            raise ConfigurationError(f"unknown config section [{name}]", key=name)
    # generic sections first, then the env-specific ones on top
    for name in cp.sections():
        if name in SECTIONS:
            for key, raw in cp.items(name):
                resolved[name][key] = coerce(name, key, raw)
    for name in cp.sections():
        base, _, env_tag = name.partition(".")
        if env_tag == env and base in SECTIONS:
            for key, raw in cp.items(name):
                resolved[base][key] = coerce(base, key, raw)


def default_text() -> str:
    return resources.files("admpo").joinpath("defaults.ini").read_text()


def file_env(path) -> str | None:
    """The ``[run] env`` value of a config file, if any."""
    if path is None:
        return None
    cp = _read_ini(path, True)
    return cp.get("run", "env", fallback=None)


def resolve(env: str = "pendulum", config_path=None, overrides: dict | None = None) -> dict:
    """Materialize every section.  Precedence: overrides > config file > shipped defaults."""
    resolved = {name: _field_defaults(name) for name in SECTIONS}
    _apply(resolved, _read_ini(default_text(), False), env)
    if config_path is not None:
        _apply(resolved, _read_ini(config_path, True), env)
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if section not in SECTIONS:
            raise ConfigurationError(f"unknown config section {section}", key=dotted)
        resolved[section][key] = coerce(section, key, value)
    resolved["online"]["env"] = env
    resolved["run"] = {"env": env}
    return resolved


def build(resolved: dict, section: str):
    """Instantiate the dataclass behind ``section`` from resolved values."""
    cls = SECTIONS[section]
    try:
        return cls(**resolved[section])
    except TypeError as exc:
        raise ConfigurationError(str(exc), key=section) from None


def to_jsonable(resolved: dict) -> dict:
    return {s: {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(vals.items())}
            for s, vals in sorted(resolved.items())}
