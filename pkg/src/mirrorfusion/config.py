"""Run configuration: dataclasses, flat key=value config files, CLI overrides."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .errors import ConfigError


@dataclass
class EncoderConfig:
    """Five-stage strided encoder plus the dilated pyramid on the last stage."""

    base_channels: int = 16
    stage_channels: tuple = ()        # derived from base_channels when empty
    aspp_rates: tuple = (1, 2, 4)
    aspp_out_channels: int = 0        # derived (2 * base_channels) when 0

    def __post_init__(self):
        if self.base_channels < 1:
            raise ConfigError("base_channels must be >= 1")
        if not self.stage_channels:
            b = self.base_channels
            self.stage_channels = (b, 2 * b, 4 * b, 8 * b, 8 * b)
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        if len(self.stage_channels) != 5:
            raise ConfigError("stage_channels must list exactly 5 stages")
        if any(c < 1 for c in self.stage_channels):
            raise ConfigError("all stage channel counts must be >= 1")
        self.aspp_rates = tuple(int(r) for r in self.aspp_rates)
        if not self.aspp_rates:
            raise ConfigError("aspp_rates must not be empty")
        if any(r < 1 for r in self.aspp_rates):
            raise ConfigError("aspp_rates must be positive")
        if not self.aspp_out_channels:
            self.aspp_out_channels = 2 * self.base_channels
        if self.aspp_out_channels < 1:
            raise ConfigError("aspp_out_channels must be >= 1")

    @property
    def low_channels(self) -> int:
        return self.stage_channels[1]

    @property
    def high_channels(self) -> int:
        return self.aspp_out_channels


@dataclass
class TrainConfig:
    """Training hyperparameters and module toggles.

    lr / batch_size / epochs / weight_decay default to the full-scale recipe
    (1e-5, 5, 15, 5e-4); image_size defaults to the 64px desk scale (512 is
    the full-scale setting).  The toggles map 1:1 to the ablation rows:
    baseline = no attention; +CA = attention without gates; +DGSA = gates on;
    +DGSA+SLF = everything.
    """

    lr: float = 1e-5
    batch_size: int = 5
    epochs: int = 15
    weight_decay: float = 5e-4
    image_size: int = 64
    seed: int = 0
    use_attention: bool = True
    use_dgsa_gates: bool = True
    use_slf: bool = True
    slf_levels: str = "both"          # "both" or "high"
    attention_passes: int = 1
    max_steps: int = 0                # 0 = no cap beyond epochs
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("lr, batch_size and epochs must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.image_size < 32 or self.image_size % 32:
            raise ConfigError(f"image_size must be a positive multiple of 32, got {self.image_size}")
        if self.slf_levels not in ("both", "high"):
            raise ConfigError(f"slf_levels must be 'both' or 'high', got {self.slf_levels!r}")
        if self.attention_passes not in (1, 2):
            raise ConfigError("attention_passes must be 1 or 2")
        if self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")


_BOOL_KEYS = {"use_attention", "use_dgsa_gates", "use_slf"}
_INT_KEYS = {"batch_size", "epochs", "image_size", "seed", "attention_passes",
             "max_steps", "base_channels", "aspp_out_channels"}
_FLOAT_KEYS = {"lr", "weight_decay"}
_TUPLE_KEYS = {"stage_channels", "aspp_rates"}
_STR_KEYS = {"slf_levels"}
_ALL_KEYS = _BOOL_KEYS | _INT_KEYS | _FLOAT_KEYS | _TUPLE_KEYS | _STR_KEYS


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines; '#' starts a comment."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _ALL_KEYS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        values[key] = val
    return values


def _coerce(key: str, val):
    if not isinstance(val, str):
        return val
    if key in _BOOL_KEYS:
        return _parse_bool(val)
    if key in _INT_KEYS:
        return int(val)
    if key in _FLOAT_KEYS:
        return float(val)
    if key in _TUPLE_KEYS:
        return tuple(int(v) for v in val.replace(",", " ").split())
    return val


def build_train_config(file_text: str | None = None, overrides: dict | None = None) -> TrainConfig:
    """Merge defaults <- config file <- explicit overrides into a TrainConfig."""
    merged: dict = {}
    if file_text is not None:
        merged.update(parse_config_text(file_text))
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _ALL_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        merged[key] = val

    enc_keys = {"base_channels", "stage_channels", "aspp_rates", "aspp_out_channels"}
    enc_kwargs = {k: _coerce(k, v) for k, v in merged.items() if k in enc_keys}
    train_kwargs = {k: _coerce(k, v) for k, v in merged.items() if k not in enc_keys}
    try:
        return TrainConfig(encoder=EncoderConfig(**enc_kwargs), **train_kwargs)
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e)) from e


def config_to_text(cfg: TrainConfig) -> str:
    """Serialize to the same flat format the parser accepts (stable key order)."""
    lines = []
    for f in fields(cfg):
        if f.name == "encoder":
            continue
        lines.append(f"{f.name} = {getattr(cfg, f.name)}")
    enc = cfg.encoder
    lines.append(f"base_channels = {enc.base_channels}")
    lines.append("stage_channels = " + ",".join(str(c) for c in enc.stage_channels))
    lines.append("aspp_rates = " + ",".join(str(r) for r in enc.aspp_rates))
    lines.append(f"aspp_out_channels = {enc.aspp_out_channels}")
    return "\n".join(lines) + "\n"
