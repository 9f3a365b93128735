"""Configuration assembly and the key = value config-file format.

All tunables live in defaulted dataclasses (EnvConfig and friends); this
module flattens them to dotted keys for hashing, episode manifests and the
plain-text config file, and rebuilds them from any of those forms.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .cloth import Corner
from .env import EnvConfig
from .episodes import config_hash
from .replay import BufferConfig


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 7788
    demo_dir: str = ""  # preload episode files from here at startup, if set
    log_level: str = "INFO"


@dataclass
class AppConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    buffer: BufferConfig = field(default_factory=BufferConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)


def _jsonable(v):
    if isinstance(v, Corner):
        return v.value
    if isinstance(v, (tuple, list)):
        return [_jsonable(x) for x in v]
    return v


def _flatten(obj, prefix="") -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(v):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = _jsonable(v)
    return out


def _coerce(value, template):
    """Interpret a text or JSON value using a template default's type."""
    if isinstance(template, Corner):
        return Corner(str(value).strip())
    if isinstance(template, bool):
        if isinstance(value, str):
            return value.strip().lower() in ("1", "true", "yes", "on")
        return bool(value)
    if isinstance(template, int):
        return int(float(value)) if isinstance(value, str) else int(value)
    if isinstance(template, float):
        return float(value)
    if isinstance(template, str):
        return str(value)
    if isinstance(template, tuple):
        if isinstance(value, str):
            parts = [p.strip() for p in value.split(",") if p.strip()]
        else:
            parts = list(value)
        elem = template[0] if template else 0.0
        if len(template) == len(parts):
            return tuple(_coerce(p, t) for p, t in zip(parts, template))
        return tuple(_coerce(p, elem) for p in parts)
    raise TypeError(f"cannot coerce config value {value!r} against {template!r}")


def _build(cls, flat: dict, prefix=""):
    defaults = cls()
    kwargs = {}
    for f in dataclasses.fields(cls):
        key = f"{prefix}{f.name}"
        dv = getattr(defaults, f.name)
        if dataclasses.is_dataclass(dv):
            kwargs[f.name] = _build(type(dv), flat, key + ".")
        elif key in flat:
            kwargs[f.name] = _coerce(flat[key], dv)
    return cls(**kwargs)


def resolved_config_dict(env_config: EnvConfig) -> dict:
    """Flat dotted-key view of an environment config, JSON-compatible."""
    return _flatten(env_config, "env.")


def env_config_hash(env_config: EnvConfig) -> str:
    return config_hash(resolved_config_dict(env_config))


def env_config_from_dict(flat: dict) -> EnvConfig:
    return _build(EnvConfig, flat, "env.")


def app_config_to_dict(cfg: AppConfig) -> dict:
    return _flatten(cfg)


def app_config_from_dict(flat: dict) -> AppConfig:
    return _build(AppConfig, flat)


def parse_config_text(text: str) -> AppConfig:
    """Parse the key = value format; '#' starts a comment, blanks ignored."""
    flat = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        flat[key.strip()] = value.strip()
    known = set(_flatten(AppConfig()))
    unknown = set(flat) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return app_config_from_dict(flat)


def load_config(path) -> AppConfig:
    return parse_config_text(Path(path).read_text())


def _text_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ", ".join(_text_value(x) for x in v)
    return str(v)


def config_to_text(cfg: AppConfig) -> str:
    lines = [
        "# unfoldsim configuration: key = value, '#' comments.",
        "# Every default is listed; delete or edit freely.",
        "",
    ]
    section = None
    for key, value in _flatten(cfg).items():
        head = key.split(".", 1)[0]
        if head != section:
            if section is not None:
                lines.append("")
            section = head
        lines.append(f"{key} = {_text_value(value)}")
    lines.append("")
    return "\n".join(lines)


def write_default_config(path) -> None:
    Path(path).write_text(config_to_text(AppConfig()))
