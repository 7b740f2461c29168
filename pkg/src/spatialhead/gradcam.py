"""Grad-CAM heatmaps over the backbone's final feature map."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ops
from .autodiff import Graph
from .errors import ContractError, ShapeError
from .pnm import encode_pnm
from .tensor import Tensor


@dataclass
class HeatMap:
    values: Tensor  # [h, w], nonnegative
    normalized: bool
    class_index: int

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ShapeError(f"heatmap must be 2-d, got {self.values.shape}")
        if (self.values.data < 0).any():
            raise ContractError("heatmap has negative values")


def grad_cam(feature_map, logit_grad, class_index: int, normalize: bool = True) -> HeatMap:
    """relu(sum_k alpha_k A^k) with alpha_k the spatial mean of the gradient on channel k."""
    a = feature_map.data if isinstance(feature_map, Tensor) else np.asarray(feature_map)
    g = logit_grad.data if isinstance(logit_grad, Tensor) else np.asarray(logit_grad)
    if a.shape != g.shape or a.ndim != 4 or a.shape[0] != 1:
        raise ShapeError(f"feature map {a.shape} and gradient {g.shape} must both be [1, h, w, c]")
    alpha = g[0].mean(axis=(0, 1))
    cam = np.maximum(np.einsum("hwc,c->hw", a[0], alpha), 0.0)
    if normalize:
        peak = cam.max()
        if peak > 0:
            cam = cam / peak
    return HeatMap(Tensor(cam, a.dtype), normalize, int(class_index))


def feature_grad(feature_map: Tensor, logits_fn, class_index: int) -> Tensor:
    """d logits[0, class_index] / d feature_map, by reverse-mode through ``logits_fn``."""
    g = Graph()
    fm = g.leaf(feature_map)
    logits = logits_fn(fm)
    k = logits.shape[1]
    if not 0 <= class_index < k:
        raise ContractError(f"class {class_index} outside [0, {k})")
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[0, class_index] = 1.0
    picked = ops.sum_all(ops.mul(logits, Tensor(onehot)))
    return g.backward(picked, wrt=[fm])[fm.id]


def heatmap_pixels(hm: HeatMap, upscale: int = 1) -> np.ndarray:
    v = hm.values.data.astype(np.float64)
    if (v < 0).any():
        raise ContractError("refusing to export a heatmap with negative values")
    if not hm.normalized:
        peak = v.max()
        v = v / peak if peak > 0 else v
    px = np.floor(255.0 * np.clip(v, 0.0, 1.0)).astype(np.uint8)
    if upscale > 1:
        px = np.repeat(np.repeat(px, upscale, axis=0), upscale, axis=1)
    return px


def export_heatmap(hm: HeatMap, path, upscale: int = 1) -> Path:
    """Write an 8-bit binary PGM, optionally nearest-neighbour upscaled."""
    path = Path(path)
    path.write_bytes(encode_pnm(heatmap_pixels(hm, upscale)))
    return path
