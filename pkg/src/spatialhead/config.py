"""Experiment configuration files.

Grammar: INI as read by :mod:`configparser`: ``[section]`` headers followed by
``key = value`` lines, ``#`` or ``;`` comments. Every key belongs to exactly
one section; unknown sections or keys are rejected. Booleans accept
true/false/yes/no/on/off/1/0. Missing keys take the defaults below.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .backbone import SmallBackboneSpec
from .data import AugmentConfig
from .errors import ConfigError
from .heads import HeadKind
from .optim import LrSchedule


def _section(name: str, **kw):
    return field(metadata={"section": name}, **kw)


@dataclass
class TrainConfig:
    # [data]
    train_dir: str = _section("data", default="")
    val_dir: str = _section("data", default="")
    synth: str = _section("data", default="none")
    grid: int = _section("data", default=7)
    synth_channels: int = _section("data", default=1)
    n_train_per_class: int = _section("data", default=50)
    n_val_per_class: int = _section("data", default=20)
    noise_std: float = _section("data", default=0.0)
    image_side: int = _section("data", default=64)
    rescale: float = _section("data", default=1.0)
    # [backbone]
    stages: str = _section("backbone", default="")
    input_channels: int = _section("backbone", default=3)
    # [head]
    kind: str = _section("head", default="AVG_DW_NONNEG_DROPOUT")
    pool_kernel: int = _section("head", default=2)
    dropout_rate: float = _section("head", default=0.5)
    # [train]
    epochs: int = _section("train", default=10)
    batch_size: int = _section("train", default=70)
    lr_initial: float = _section("train", default=0.045)
    lr_decay: float = _section("train", default=0.94)
    lr_period: int = _section("train", default=2)
    momentum: float = _section("train", default=0.9)
    precision: str = _section("train", default="float32")
    record_wall_time: bool = _section("train", default=False)
    # [seeds]
    init_seed: int = _section("seeds", default=0)
    dropout_seed: int = _section("seeds", default=1)
    shuffle_seed: int = _section("seeds", default=2)
    augment_seed: int = _section("seeds", default=3)
    synth_seed: int = _section("seeds", default=4)
    # [augment]
    augment: bool = _section("augment", default=False)
    hflip: bool = _section("augment", default=True)
    vflip: bool = _section("augment", default=True)
    zoom_frac: float = _section("augment", default=0.20)
    rotation_deg: float = _section("augment", default=360.0)
    width_shift_frac: float = _section("augment", default=0.10)
    height_shift_frac: float = _section("augment", default=0.10)
    channel_shift: float = _section("augment", default=50.0)
    brightness_low: float = _section("augment", default=0.0)
    brightness_high: float = _section("augment", default=1.2)
    preprocess: str = _section("augment", default="none")

    def __post_init__(self):
        self.validate()

    # derived objects -------------------------------------------------------

    @property
    def head_kind(self) -> HeadKind:
        return HeadKind.parse(self.kind)

    @property
    def pool(self) -> int | None:
        return self.pool_kernel if self.head_kind.pooled else None

    def schedule(self) -> LrSchedule:
        return LrSchedule(self.lr_initial, self.lr_decay, self.lr_period)

    def augment_config(self) -> AugmentConfig:
        if not self.augment:
            return AugmentConfig.disabled(self.preprocess)
        return AugmentConfig(
            self.hflip,
            self.vflip,
            self.zoom_frac,
            self.rotation_deg,
            self.width_shift_frac,
            self.height_shift_frac,
            self.channel_shift,
            (self.brightness_low, self.brightness_high),
            self.preprocess,
        )

    def backbone_spec(self) -> SmallBackboneSpec:
        side = self.grid if self.synth != "none" else self.image_side
        channels = self.synth_channels if self.synth != "none" else self.input_channels
        return SmallBackboneSpec(SmallBackboneSpec.parse_stages(self.stages), side, channels)

    def validate(self) -> None:
        if self.synth not in ("none", "quadrant", "per_cell"):
            raise ConfigError(f"data.synth must be none, quadrant or per_cell, got {self.synth!r}")
        if self.synth == "none" and not self.train_dir:
            raise ConfigError("data.train_dir is required unless data.synth is set")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"train.precision must be float32 or float64, got {self.precision!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("train.epochs must be >= 0 and train.batch_size >= 1")
        kind = self.head_kind
        if kind.pooled and self.pool_kernel < 1:
            raise ConfigError(f"head.pool_kernel is required for {kind.value}")
        if self.preprocess == "caffe" and self.backbone_spec().input_channels != 3:
            raise ConfigError("caffe preprocessing needs 3-channel input")
        self.schedule()
        self.augment_config()
        self.backbone_spec()

    # serialisation ---------------------------------------------------------

    @classmethod
    def keys(cls) -> dict[str, tuple[str, Any]]:
        """``{key: (section, type)}`` for every field."""
        hints = {"str": str, "int": int, "float": float, "bool": bool}
        return {f.name: (f.metadata["section"], hints[f.type]) for f in fields(cls)}

    def to_ini(self) -> str:
        by_section: dict[str, list[str]] = {}
        for f in fields(self):
            v = getattr(self, f.name)
            text = str(v).lower() if isinstance(v, bool) else repr(v) if isinstance(v, float) else str(v)
            by_section.setdefault(f.metadata["section"], []).append(f"{f.name} = {text}")
        return "\n".join(f"[{s}]\n" + "\n".join(lines) + "\n" for s, lines in by_section.items())

    def save(self, path) -> None:
        Path(path).write_text(self.to_ini())

    @classmethod
    def from_ini(cls, text: str, overrides: Mapping[str, Any] | None = None) -> "TrainConfig":
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"config parse error: {exc}") from exc
        keys = cls.keys()
        raw: dict[str, str] = {}
        for section in parser.sections():
            for key, value in parser.items(section):
                if key not in keys:
                    raise ConfigError(f"unknown key {section}.{key}")
                if keys[key][0] != section:
                    raise ConfigError(f"key {key} belongs in [{keys[key][0]}], not [{section}]")
                raw[key] = value
        for key, value in (overrides or {}).items():
            key = key.split(".", 1)[-1]
            if key not in keys:
                raise ConfigError(f"unknown override {key}")
            raw[key] = value
        values = {k: _coerce(k, v, keys[k][1]) for k, v in raw.items()}
        return cls(**values)

    @classmethod
    def load(cls, path, overrides: Mapping[str, Any] | None = None) -> "TrainConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_ini(text, overrides)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key: str, value, typ):
    if not isinstance(value, str):
        return typ(value)
    text = value.strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    return text
