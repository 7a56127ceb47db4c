"""Training configuration: dataclass defaults, the ``key = value`` config
file format, and ``--set key=value`` override handling.

Precedence: command-line overrides beat the config file, which beats the
built-in defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .backbone import BackboneKind

# keys accepted in config files and --set overrides
CONFIG_KEYS = (
    "dim",
    "lr",
    "batch_size",
    "epochs",
    "seed",
    "lambda1",
    "lambda2",
    "lambda3",
    "tau",
    "backbone",
    "lightgcn_layers",
    "no_text_init",
    "no_user_cl",
    "no_item_cl",
    "full_normalization",
    "patience",
)


class ConfigError(ValueError):
    """Invalid config file, key, or value."""


@dataclass(frozen=True)
class TrainConfig:
    dim: int = 64
    lr: float = 0.01
    batch_size: int = 1024
    epochs: int = 100
    seed: int = 0
    lambda1: float = 10.0
    lambda2: float = 0.4
    lambda3: float = 0.1
    tau: float = 0.2
    backbone: str = "mf"
    lightgcn_layers: int = 2
    no_text_init: bool = False
    no_user_cl: bool = False
    no_item_cl: bool = False
    full_normalization: bool = False
    patience: int = 10
    # optimizer constants, not exposed as config keys
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ConfigError("lambda weights must be non-negative")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        self.backbone_kind()  # validates backbone / layers

    def backbone_kind(self) -> BackboneKind:
        try:
            return BackboneKind(self.backbone, self.lightgcn_layers)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in CONFIG_KEYS}


_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(key: str, text: str):
    if key not in CONFIG_KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    ftype = _FIELD_TYPES[key]
    text = text.strip()
    if ftype == "bool":
        low = text.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    if ftype == "int":
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {text!r}") from None
    if ftype == "float":
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {text!r}") from None
    return text


def parse_config_file(path: str | Path) -> dict:
    """Parse a ``key = value`` config file; blank lines and # comments allowed."""
    values: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}: line {lineno}: expected 'key = value'")
            key, _, value = stripped.partition("=")
            key = key.strip()
            values[key] = _coerce(key, value)
    return values


def parse_overrides(pairs: list[str]) -> dict:
    """Parse repeatable ``--set key=value`` arguments."""
    values: dict = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} must look like key=value")
        key, _, value = pair.partition("=")
        key = key.strip()
        values[key] = _coerce(key, value)
    return values


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> TrainConfig:
    """Resolve a TrainConfig from defaults, an optional file, and overrides."""
    values: dict = {}
    if path is not None:
        values.update(parse_config_file(path))
    if overrides:
        values.update(parse_overrides(overrides))
    try:
        return TrainConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
