"""Flat ``key = value`` configuration files.

Keys are namespaced with dotted prefixes: ``device.*`` for
:class:`~amcsim.device.DeviceParams`, ``wv.*`` for
:class:`~amcsim.write_verify.WriteVerifyConfig` and ``conv.*`` for
:class:`~amcsim.system.ConverterSpec`.  The loader rejects unknown keys so
typos fail loudly instead of silently keeping defaults.
"""

from __future__ import annotations

import dataclasses

from .device import DeviceParams
from .system import ConverterSpec
from .write_verify import WriteVerifyConfig

_BOOL_WORDS = {"true": True, "false": False, "on": True, "off": False}


def _parse_value(raw: str):
    raw = raw.strip()
    low = raw.lower()
    if low in _BOOL_WORDS:
        return _BOOL_WORDS[low]
    if low in ("none", "null"):
        return None
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def parse_config(text: str) -> dict:
    """Parse flat key = value lines; '#' starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        if key in out:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        out[key] = _parse_value(raw)
    return out


def load_config(path) -> dict:
    with open(path) as fh:
        return parse_config(fh.read())


def format_config(values: dict) -> str:
    """Deterministic text form (sorted keys) used when embedding configs in reports."""
    return "\n".join(f"{k} = {values[k]}" for k in sorted(values))


def _build(cls, base, prefix: str, cfg: dict):
    fields = {f.name for f in dataclasses.fields(cls)}
    updates = {}
    for key, value in cfg.items():
        if not key.startswith(prefix):
            continue
        name = key[len(prefix):]
        if name not in fields:
            raise ValueError(f"unknown config key {key!r}")
        updates[name] = value
    return dataclasses.replace(base, **updates) if updates else base


def device_params_from(cfg: dict, base: DeviceParams | None = None) -> DeviceParams:
    return _build(DeviceParams, base or DeviceParams(), "device.", cfg)


def write_verify_from(cfg: dict, base: WriteVerifyConfig | None = None) -> WriteVerifyConfig:
    return _build(WriteVerifyConfig, base or WriteVerifyConfig(), "wv.", cfg)


def converters_from(cfg: dict, base: ConverterSpec | None = None) -> ConverterSpec:
    return _build(ConverterSpec, base or ConverterSpec(), "conv.", cfg)


def validate_keys(cfg: dict) -> None:
    """Reject any key that does not belong to a known namespace."""
    dev = {f.name for f in dataclasses.fields(DeviceParams)}
    wv = {f.name for f in dataclasses.fields(WriteVerifyConfig)}
    conv = {f.name for f in dataclasses.fields(ConverterSpec)}
    for key in cfg:
        if key.startswith("device.") and key[len("device."):] in dev:
            continue
        if key.startswith("wv.") and key[len("wv."):] in wv:
            continue
        if key.startswith("conv.") and key[len("conv."):] in conv:
            continue
        raise ValueError(f"unknown config key {key!r}")


def load_settings(path):
    """Load and validate a config file into the three parameter bundles."""
    cfg = load_config(path)
    validate_keys(cfg)
    return device_params_from(cfg), write_verify_from(cfg), converters_from(cfg)
