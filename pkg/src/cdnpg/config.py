"""Flat ``key = value`` run configuration.

Grammar: one ``key = value`` per line; ``#`` starts a comment; blank lines
are ignored.  Values are typed by the key (int, float, bool, str).  ``none``
clears an optional value.  Keys mirror :class:`ModelConfig`,
:class:`TrainConfig` and the data options below.
"""

from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .model import ModelConfig
from .training import TrainConfig


@dataclass
class DataOptions:
    train_path: str | None = None
    valid_path: str | None = None
    format: str | None = None
    vocab_path: str | None = None
    wordpiece_vocab: str | None = None
    vocab_max_size: int | None = None
    min_freq: int = 1
    output_dir: str = "runs/cdnpg"
    model_seed: int = 0


_MODEL_KEYS = [f.name for f in dataclasses.fields(ModelConfig) if f.name not in ("vocab_size", "identity_mask")]
_TRAIN_KEYS = [f.name for f in dataclasses.fields(TrainConfig)]
_DATA_KEYS = [f.name for f in dataclasses.fields(DataOptions)]
VALID_KEYS = tuple(_DATA_KEYS + _MODEL_KEYS + _TRAIN_KEYS)


class ConfigError(ValueError):
    pass


def _field_types() -> dict[str, type]:
    out = {}
    for cls in (DataOptions, ModelConfig, TrainConfig):
        hints = typing.get_type_hints(cls)
        for f in dataclasses.fields(cls):
            out.setdefault(f.name, hints[f.name])
    return out


def _coerce(key: str, raw: str, hint) -> object:
    text = raw.strip()
    args = typing.get_args(hint)
    optional = type(None) in args
    if optional and text.lower() in ("none", "null", ""):
        return None
    base = next((a for a in args if a is not type(None)), hint) if args else hint
    if key == "mask_mode":
        return None if text.lower() in ("none", "vanilla") else text
    try:
        if base is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if base is int:
            return int(float(text)) if "e" in text.lower() else int(text)
        if base is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return text


def parse_config_text(text: str) -> dict:
    types = _field_types()
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in VALID_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}; valid keys: {', '.join(VALID_KEYS)}")
        out[key] = _coerce(key, value, types[key])
    return out


def load_config(path: str | os.PathLike | None, overrides: dict | None = None) -> dict:
    """Read a config file (optional) and apply overrides; overrides win."""
    values: dict = {}
    if path is not None:
        try:
            values = parse_config_text(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    types = _field_types()
    for key, value in (overrides or {}).items():
        if key not in VALID_KEYS:
            raise ConfigError(f"unknown key {key!r}; valid keys: {', '.join(VALID_KEYS)}")
        values[key] = _coerce(key, value, types[key]) if isinstance(value, str) else value
    return values


@dataclass
class RunConfig:
    data: DataOptions = field(default_factory=DataOptions)
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)

    @classmethod
    def from_values(cls, values: dict) -> "RunConfig":
        data = DataOptions(**{k: v for k, v in values.items() if k in _DATA_KEYS})
        model = {k: v for k, v in values.items() if k in _MODEL_KEYS}
        try:
            train = TrainConfig(**{k: v for k, v in values.items() if k in _TRAIN_KEYS})
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return cls(data, model, train)

    def model_config(self, vocab_size: int) -> ModelConfig:
        try:
            return ModelConfig(vocab_size=vocab_size, **self.model)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
