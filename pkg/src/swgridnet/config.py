"""Flat ``key = value`` configuration files.

A run file mixes network keys (``dims``, ``side``, ...), training keys
(``lr_max``, ``seed``, ...), and prefixed data keys (``data.variant``,
``synth.samples_per_class``). Blank lines and ``#`` comments are ignored;
unknown keys are errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .data import SynthSpec
from .errors import ConfigurationError
from .model import NetworkConfig
from .train import TrainConfig

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


@dataclass
class DataConfig:
    variant: int = 10
    train_subset: int = 0  # 0 keeps every record
    test_subset: int = 0


@dataclass
class RunConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)


def _coerce(key, raw, default):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_pairs(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigurationError(f"line {lineno}: duplicate key {key}")
        out[key] = value
    return out


def _build(cls, pairs, prefix=""):
    kwargs = {}
    for f in fields(cls):
        key = prefix + f.name
        if key in pairs:
            kwargs[f.name] = _coerce(key, pairs.pop(key), f.default)
    return cls(**kwargs)


def load_fields(cls, text: str):
    """Build dataclass ``cls`` from a flat file holding only its own keys."""
    pairs = parse_pairs(text)
    obj = _build(cls, pairs)
    if pairs:
        raise ConfigurationError(f"unknown keys: {', '.join(sorted(pairs))}")
    return obj


def dump_fields(obj, prefix="") -> str:
    return "".join(f"{prefix}{f.name} = {_fmt(getattr(obj, f.name))}\n" for f in fields(obj))


def _fmt(v):
    return str(v).lower() if isinstance(v, bool) else repr(v) if isinstance(v, float) else str(v)


def parse_run_config(text: str) -> RunConfig:
    pairs = parse_pairs(text)
    cfg = RunConfig(
        network=_build(NetworkConfig, pairs),
        train=_build(TrainConfig, pairs),
        data=_build(DataConfig, pairs, "data."),
        synth=_build(SynthSpec, pairs, "synth."),
    )
    if pairs:
        raise ConfigurationError(f"unknown keys: {', '.join(sorted(pairs))}")
    return cfg


def load_run_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_run_config(text)


def dump_run_config(cfg: RunConfig) -> str:
    return (dump_fields(cfg.network) + dump_fields(cfg.train)
            + dump_fields(cfg.data, "data.") + dump_fields(cfg.synth, "synth."))
