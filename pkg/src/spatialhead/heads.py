"""Classification heads that sit between a backbone feature map and the logits.

Nine closed kinds. Parameter names inside :class:`HeadParams`:

``dw_kernel`` [s, s, c], ``dw_bias`` [c]
    depthwise spatial aggregation (DW kinds); ``s`` is the post-pool side
``gwap_kernel`` [h, w]
    one spatial weight set shared by all channels (GWAP)
``fc_weight`` [d, classes], ``fc_bias`` [classes]
    the final classifier (every kind)
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import ops
from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor, resolve_dtype


class HeadKind(str, enum.Enum):
    GAP = "GAP"
    GAP_DROPOUT = "GAP_DROPOUT"
    FLATTEN_FC = "FLATTEN_FC"
    AVG_FLATTEN_FC = "AVG_FLATTEN_FC"
    GWAP = "GWAP"
    DW = "DW"
    DW_NONNEG = "DW_NONNEG"
    AVG_DW_NONNEG = "AVG_DW_NONNEG"
    AVG_DW_NONNEG_DROPOUT = "AVG_DW_NONNEG_DROPOUT"

    @property
    def pooled(self) -> bool:
        return self.value.startswith("AVG")

    @property
    def has_dropout(self) -> bool:
        return self.value.endswith("DROPOUT")

    @property
    def nonneg(self) -> bool:
        return "NONNEG" in self.value

    @property
    def depthwise(self) -> bool:
        return "DW" in self.value

    @classmethod
    def parse(cls, name) -> "HeadKind":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().upper())
        except ValueError:
            raise ConfigError(f"unknown head kind {name!r}; choose from {[k.value for k in cls]}") from None


@dataclass(frozen=True)
class FeatureMapSpec:
    height: int
    width: int
    channels: int

    def __post_init__(self):
        if min(self.height, self.width, self.channels) < 1:
            raise ConfigError(f"feature map extents must be >= 1: {self}")


@dataclass(frozen=True)
class HeadSpec:
    kind: HeadKind
    classes: int
    pool_kernel: int | None = None
    dropout_rate: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "kind", HeadKind.parse(self.kind))
        if self.classes < 1:
            raise ConfigError("classes must be >= 1")
        if self.kind.pooled and self.pool_kernel is None:
            raise ConfigError(f"{self.kind.value} needs a pool_kernel")
        if not self.kind.pooled and self.pool_kernel is not None:
            raise ConfigError(f"{self.kind.value} takes no pool_kernel")
        if self.kind.pooled and self.pool_kernel < 1:
            raise ConfigError("pool_kernel must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")


@dataclass
class HeadParams:
    kind: HeadKind
    tensors: dict[str, Tensor]
    seed: int | None = None
    init: dict[str, str] = field(default_factory=dict)

    def constrained(self) -> tuple[str, ...]:
        return ("dw_kernel",) if self.kind.nonneg else ()

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())


def spatial_side(fm: FeatureMapSpec, spec: HeadSpec) -> tuple[int, int]:
    """Spatial extent the head's aggregation layer sees (after pre-pooling)."""
    if not spec.kind.pooled:
        return fm.height, fm.width
    k = spec.pool_kernel
    if k > min(fm.height, fm.width):
        raise ConfigError(f"pool kernel {k} exceeds feature map {fm.height}x{fm.width}")
    return fm.height // k, fm.width // k


def classifier_fan_in(fm: FeatureMapSpec, spec: HeadSpec) -> int:
    if spec.kind in (HeadKind.FLATTEN_FC, HeadKind.AVG_FLATTEN_FC):
        h, w = spatial_side(fm, spec)
        return h * w * fm.channels
    return fm.channels


def head_param_count(fm: FeatureMapSpec, spec: HeadSpec) -> int:
    """Trainable parameters of the head, bias terms included."""
    c, k = fm.channels, spec.classes
    h, w = spatial_side(fm, spec)
    kind = spec.kind
    if kind in (HeadKind.GAP, HeadKind.GAP_DROPOUT):
        return c * k + k
    if kind.depthwise:
        return h * w * c + c + c * k + k
    if kind in (HeadKind.FLATTEN_FC, HeadKind.AVG_FLATTEN_FC):
        return h * w * c * k + k
    if kind is HeadKind.GWAP:
        return h * w + c * k + k
    raise ContractError(f"unhandled head kind {kind}")


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def build_head(fm: FeatureMapSpec, spec: HeadSpec, seed: int, precision="float64") -> HeadParams:
    dtype = resolve_dtype(precision)
    rng = np.random.default_rng(seed)
    h, w = spatial_side(fm, spec)
    c = fm.channels
    tensors: dict[str, Tensor] = {}
    init: dict[str, str] = {}
    if spec.kind.depthwise:
        tensors["dw_kernel"] = Tensor(rng.normal(0.0, 0.01, size=(h, w, c)), dtype)
        tensors["dw_bias"] = Tensor(np.zeros(c), dtype)
        init["dw_kernel"] = "normal(0, 0.01)"
        init["dw_bias"] = "zeros"
    elif spec.kind is HeadKind.GWAP:
        tensors["gwap_kernel"] = Tensor(rng.normal(0.0, 0.01, size=(h, w)), dtype)
        init["gwap_kernel"] = "normal(0, 0.01)"
    fan_in = classifier_fan_in(fm, spec)
    tensors["fc_weight"] = Tensor.wrap(glorot_uniform(rng, fan_in, spec.classes, dtype))
    tensors["fc_bias"] = Tensor(np.zeros(spec.classes), dtype)
    init["fc_weight"] = "glorot_uniform"
    init["fc_bias"] = "zeros"
    return HeadParams(spec.kind, tensors, seed, init)


def apply_constraint(params: HeadParams) -> HeadParams:
    """Clamp the depthwise kernel at zero. Bias is left alone."""
    if not params.kind.nonneg:
        raise ContractError(f"{params.kind.value} has no non-negative constraint")
    tensors = dict(params.tensors)
    k = tensors["dw_kernel"].data
    tensors["dw_kernel"] = Tensor.wrap(np.maximum(k, k.dtype.type(0)))
    return HeadParams(params.kind, tensors, params.seed, dict(params.init))


def head_forward(fm_tensor, params, spec: HeadSpec, mode: str = "infer", rng: np.random.Generator | None = None):
    """Logits [n, classes] from a feature map [n, h, w, c].

    ``params`` is a :class:`HeadParams` or a plain mapping of name -> Tensor/Node,
    the latter being how training threads graph parameters through.
    """
    p: Mapping = params.tensors if isinstance(params, HeadParams) else params
    shape = fm_tensor.shape
    if len(shape) != 4:
        raise ShapeError(f"feature map must be [n,h,w,c], got {shape}")
    kind = spec.kind
    x = fm_tensor
    if kind.pooled:
        x = ops.avg_pool2d(x, spec.pool_kernel)

    if kind in (HeadKind.GAP, HeadKind.GAP_DROPOUT):
        z = ops.global_avg_pool(x)
    elif kind.depthwise:
        kshape = p["dw_kernel"].shape
        if kshape[:2] != x.shape[1:3]:
            raise ShapeError(f"depthwise kernel {kshape[:2]} does not cover feature map {x.shape[1:3]}")
        z = ops.flatten(ops.depthwise_conv2d(x, p["dw_kernel"], p["dw_bias"]))
    elif kind is HeadKind.GWAP:
        z = ops.spatial_weighted_sum(x, p["gwap_kernel"])
    else:
        z = ops.flatten(x)

    if kind.has_dropout:
        z = ops.dropout(z, spec.dropout_rate, mode, rng)
    if z.shape[1] != p["fc_weight"].shape[0]:
        raise ShapeError(f"classifier expects width {p['fc_weight'].shape[0]}, got {z.shape[1]}")
    return ops.dense(z, p["fc_weight"], p["fc_bias"])
