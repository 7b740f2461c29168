"""Feature extractors.

Two things live here: a registry of named ImageNet backbones that only records
their parameter count and output geometry, and a small trainable conv+relu
stack for desk-scale runs. A stack with no stages is the identity, which is
what the synthetic position tasks use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError, UnknownBackboneError
from .heads import FeatureMapSpec
from .tensor import Tensor, resolve_dtype

OUTPUT_STRIDE = 32


@dataclass(frozen=True)
class BackboneEntry:
    name: str
    base_params: int
    out_channels: int
    output_stride: int = OUTPUT_STRIDE


# Convolutional base only, no classifier. densenet169, resnet50v2 and
# densenet201 are recovered from published totals minus their GAP head.
REGISTRY: dict[str, BackboneEntry] = {
    e.name: e
    for e in (
        BackboneEntry("resnet50", 23_587_712, 2048),
        BackboneEntry("xception", 20_861_480, 2048),
        BackboneEntry("densenet121", 7_037_504, 1024),
        BackboneEntry("densenet169", 12_642_880, 1664),
        BackboneEntry("resnet50v2", 23_564_800, 2048),
        BackboneEntry("densenet201", 18_321_984, 1920),
    )
}


def registry_lookup(name: str) -> BackboneEntry:
    try:
        return REGISTRY[name.strip().lower()]
    except KeyError:
        raise UnknownBackboneError(f"unknown backbone {name!r}; registered: {', '.join(REGISTRY)}") from None


def feature_map_spec(entry: BackboneEntry, input_side: int) -> FeatureMapSpec:
    if input_side < entry.output_stride:
        raise ConfigError(f"input side {input_side} is below the output stride {entry.output_stride}")
    side = input_side // entry.output_stride
    return FeatureMapSpec(side, side, entry.out_channels)


@dataclass(frozen=True)
class SmallBackboneSpec:
    """``stages`` holds (filters, kernel, stride) per conv+relu stage."""

    stages: tuple[tuple[int, int, int], ...] = ()
    input_side: int = 64
    input_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(tuple(int(v) for v in s) for s in self.stages))
        for filters, kernel, stride in self.stages:
            if filters < 1 or kernel < 1 or stride < 1:
                raise ConfigError(f"bad stage {(filters, kernel, stride)}")
        self.output_spec()

    def output_spec(self) -> FeatureMapSpec:
        side, ch = self.input_side, self.input_channels
        for filters, kernel, stride in self.stages:
            if kernel > side:
                raise ShapeError(f"stage kernel {kernel} exceeds spatial side {side}")
            side = (side - kernel) // stride + 1
            ch = filters
        return FeatureMapSpec(side, side, ch)

    def param_count(self) -> int:
        total, ch = 0, self.input_channels
        for filters, kernel, _ in self.stages:
            total += kernel * kernel * ch * filters + filters
            ch = filters
        return total

    @classmethod
    def parse_stages(cls, text: str) -> tuple[tuple[int, int, int], ...]:
        """``"16:2:2, 32:2:2"`` -> ((16, 2, 2), (32, 2, 2)). Empty means identity."""
        stages = []
        for chunk in text.replace(";", ",").split(","):
            chunk = chunk.strip()
            if not chunk:
                continue
            parts = chunk.split(":")
            if len(parts) != 3:
                raise ConfigError(f"stage {chunk!r} is not filters:kernel:stride")
            try:
                stages.append(tuple(int(p) for p in parts))
            except ValueError:
                raise ConfigError(f"stage {chunk!r} is not filters:kernel:stride") from None
        return tuple(stages)

    def stages_text(self) -> str:
        return ", ".join(f"{f}:{k}:{s}" for f, k, s in self.stages)


# four stride-2 stages: 64 -> 32 -> 16 -> 8 -> 4
DESK_SPEC = SmallBackboneSpec(stages=((16, 2, 2), (32, 2, 2), (64, 2, 2), (64, 2, 2)), input_side=64)


def build_small_backbone(spec: SmallBackboneSpec, seed: int, precision="float64") -> dict[str, Tensor]:
    dtype = resolve_dtype(precision)
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    ch = spec.input_channels
    for i, (filters, kernel, _) in enumerate(spec.stages):
        fan_in, fan_out = kernel * kernel * ch, kernel * kernel * filters
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        params[f"conv{i}_kernel"] = Tensor(rng.uniform(-limit, limit, size=(kernel, kernel, ch, filters)), dtype)
        params[f"conv{i}_bias"] = Tensor(np.zeros(filters), dtype)
        ch = filters
    return params


def small_backbone_forward(x, spec: SmallBackboneSpec, params: Mapping):
    shape = x.shape
    if len(shape) != 4 or shape[3] != spec.input_channels:
        raise ShapeError(f"backbone input must be [n, side, side, {spec.input_channels}], got {shape}")
    for i, (_, _, stride) in enumerate(spec.stages):
        x = ops.relu(ops.conv2d(x, params[f"conv{i}_kernel"], params[f"conv{i}_bias"], stride=stride))
    return x
