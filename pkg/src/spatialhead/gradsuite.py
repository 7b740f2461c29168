"""Finite-difference checks over every registered op and every head kind.

Each case projects the op output onto a fixed random tensor (so every output
coordinate contributes) and compares reverse-mode against central differences
in float64.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import ops
from .autodiff import OPS, GradCheckReport, grad_check
from .backbone import SmallBackboneSpec, build_small_backbone, small_backbone_forward
from .heads import FeatureMapSpec, HeadKind, HeadSpec, build_head, head_forward
from .tensor import Tensor

STEP = 1e-3
TOL = 1e-4


def _project(out, r: Tensor):
    return ops.sum_all(ops.mul(out, r))


def _away_from(rng, shape, s, margin=0.05):
    x = rng.normal(size=shape)
    close = np.abs(x - s) < margin
    x[close] = s + np.sign(x[close] - s + 1e-12) * (margin + rng.uniform(0, 0.5, size=close.sum()))
    return x


def op_cases(seed: int = 0) -> dict[str, tuple[Callable, object]]:
    rng = np.random.default_rng(seed)

    def T(*shape):
        return Tensor(rng.normal(size=shape))

    cases: dict[str, tuple[Callable, object]] = {}

    r = T(4, 6)
    cases["reshape"] = (lambda x, r=r: _project(ops.reshape(x, (4, 6)), r), T(2, 3, 4))
    r = T(3)
    cases["reduce_mean"] = (lambda x, r=r: _project(ops.reduce_mean(x, (0, 2)), r), T(2, 3, 4))
    cases["sum"] = (lambda x: ops.sum_all(x), T(3, 2))
    r = T(3, 2)
    cases["matmul"] = (lambda p, r=r: _project(ops.matmul(p["a"], p["b"]), r), {"a": T(3, 4), "b": T(4, 2)})
    r = T(3, 2)
    cases["add"] = (lambda p, r=r: _project(ops.add(p["a"], p["b"]), r), {"a": T(3, 2), "b": T(3, 2)})
    r = T(3, 2)
    cases["sub"] = (lambda p, r=r: _project(ops.sub(p["a"], p["b"]), r), {"a": T(3, 2), "b": T(3, 2)})
    cases["mul"] = (lambda p: ops.sum_all(ops.mul(p["a"], p["b"])), {"a": T(3, 2), "b": T(3, 2)})
    r = T(4, 3)
    cases["max_with_scalar"] = (lambda x, r=r: _project(ops.max_with_scalar(x, 0.2), r),
                                Tensor(_away_from(rng, (4, 3), 0.2)))
    r = T(4, 3)
    cases["scale"] = (lambda x, r=r: _project(ops.scale(x, 0.94), r), T(4, 3))
    r = T(2, 3, 3, 4)
    cases["conv2d"] = (
        lambda p, r=r: _project(ops.conv2d(p["x"], p["k"], p["b"], stride=2), r),
        {"x": T(2, 7, 7, 3), "k": T(3, 3, 3, 4), "b": T(4)},
    )
    r = T(2, 3, 2, 3)
    cases["depthwise_conv2d"] = (
        lambda p, r=r: _project(ops.depthwise_conv2d(p["x"], p["k"], p["b"]), r),
        {"x": T(2, 5, 4, 3), "k": T(3, 3, 3), "b": T(3)},
    )
    r = T(2, 2, 2, 3)
    cases["avg_pool2d"] = (lambda x, r=r: _project(ops.avg_pool2d(x, 2), r), T(2, 5, 5, 3))
    r = T(2, 3)
    cases["global_avg_pool"] = (lambda x, r=r: _project(ops.global_avg_pool(x), r), T(2, 4, 5, 3))
    r = T(2, 3)
    cases["spatial_weighted_sum"] = (
        lambda p, r=r: _project(ops.spatial_weighted_sum(p["x"], p["k"]), r),
        {"x": T(2, 4, 5, 3), "k": T(4, 5)},
    )
    r = T(3, 4)
    cases["dense"] = (
        lambda p, r=r: _project(ops.dense(p["x"], p["w"], p["b"]), r),
        {"x": T(3, 5), "w": T(5, 4), "b": T(4)},
    )
    r = T(6, 5)
    cases["dropout"] = (
        lambda x, r=r: _project(ops.dropout(x, 0.5, "train", np.random.default_rng(123)), r),
        T(6, 5),
    )
    labels = rng.integers(0, 5, size=4)
    cases["softmax_cross_entropy"] = (lambda z, labels=labels: ops.softmax_cross_entropy(z, labels), T(4, 5))
    return cases


def head_cases(seed: int = 0) -> dict[str, tuple[Callable, object]]:
    """Every head kind on a random 4x4x3 feature map with 5 classes, dropout in infer mode."""
    rng = np.random.default_rng(seed + 1)
    fm_spec = FeatureMapSpec(4, 4, 3)
    cases = {}
    for kind in HeadKind:
        spec = HeadSpec(kind, 5, 2 if kind.pooled else None)
        params = dict(build_head(fm_spec, spec, seed).tensors)
        # lift small init so every coordinate has a well-conditioned gradient
        params = {k: Tensor(v.data + rng.normal(0, 0.5, size=v.shape)) for k, v in params.items()}
        params["feature_map"] = Tensor(rng.normal(size=(3, 4, 4, 3)))
        labels = rng.integers(0, 5, size=3)

        def f(p, spec=spec, labels=labels):
            weights = {k: v for k, v in p.items() if k != "feature_map"}
            return ops.softmax_cross_entropy(head_forward(p["feature_map"], weights, spec, "infer"), labels)

        cases[f"head:{kind.value}"] = (f, params)
    return cases


def backbone_case(seed: int = 0) -> dict[str, tuple[Callable, object]]:
    rng = np.random.default_rng(seed + 2)
    spec = SmallBackboneSpec(stages=((3, 2, 2), (2, 2, 1)), input_side=6, input_channels=2)
    params = build_small_backbone(spec, seed)
    # keep pre-activations away from the relu kink
    params = {k: Tensor(v.data + (0.3 if k.endswith("bias") else 0.0)) for k, v in params.items()}
    x = Tensor(rng.uniform(0.1, 1.0, size=(2, 6, 6, 2)))
    r = Tensor(rng.normal(size=(2, 2, 2, 2)))
    return {"small_backbone": (lambda p, r=r: _project(small_backbone_forward(x, spec, p), r), params)}


def all_cases(seed: int = 0) -> dict[str, tuple[Callable, object]]:
    cases = op_cases(seed)
    cases.update(head_cases(seed))
    cases.update(backbone_case(seed))
    return cases


def run_suite(step: float = STEP, tol: float = TOL, seed: int = 0) -> list[tuple[str, GradCheckReport]]:
    return [(name, grad_check(f, theta, step, tol)) for name, (f, theta) in all_cases(seed).items()]


def uncovered_ops() -> set[str]:
    return set(OPS) - set(op_cases())
