"""Line-oriented ``key = value`` config files mapped onto dataclasses."""
from __future__ import annotations

import dataclasses
import typing
from pathlib import Path

from .dataio import ConfigurationError

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_kv(text: str, source: str = "<config>") -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{n}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"{source}:{n}: empty key")
        if key in out:
            raise ConfigurationError(f"{source}:{n}: duplicate key {key!r}")
        out[key] = value
    return out


def load_kv(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_kv(path.read_text(), str(path))


def parse_overrides(items) -> dict:
    return parse_kv("\n".join(items or []), "<--set>")


def _coerce(value: str, tp, key: str):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value.lower() in ("none", ""):
            return None
        return _coerce(value, args[0], key)
    try:
        if tp is bool:
            low = value.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(value)
        if tp is int:
            return int(value)
        if tp is float:
            return float(value)
        return value
    except ValueError:
        raise ConfigurationError(f"{key}: cannot parse {value!r} as {getattr(tp, '__name__', tp)}") from None


def build(cls, values: dict, prefix: str = "", base=None):
    """Instantiate dataclass ``cls`` from string values whose keys start with ``prefix``."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = dataclasses.asdict(base) if base is not None else {}
    for key, value in values.items():
        if not key.startswith(prefix):
            continue
        name = key[len(prefix) :]
        if name not in names:
            raise ConfigurationError(f"unknown config key {key!r}; valid keys: {sorted(prefix + n for n in names)}")
        kwargs[name] = _coerce(value, hints[name], key)
    return cls(**kwargs)


def check_known(values: dict, prefixes) -> None:
    bad = [k for k in values if not any(k.startswith(p) for p in prefixes)]
    if bad:
        raise ConfigurationError(f"unknown config keys {bad}; expected prefixes {list(prefixes)}")
