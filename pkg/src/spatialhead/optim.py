"""SGD with classical momentum and a stepwise exponential learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import ConfigError, ContractError
from .tensor import Tensor, check_finite


@dataclass(frozen=True)
class LrSchedule:
    initial: float = 0.045
    decay: float = 0.94
    period_epochs: int = 2

    def __post_init__(self):
        if self.initial <= 0 or not 0 < self.decay <= 1 or self.period_epochs < 1:
            raise ConfigError(f"invalid schedule {self}")


def lr_at(epoch: int, s: LrSchedule) -> float:
    """``initial * decay ** floor(epoch / period)``; changes only at epoch boundaries."""
    if epoch < 0:
        raise ConfigError("epoch must be >= 0")
    return s.initial * s.decay ** (epoch // s.period_epochs)


@dataclass
class SgdState:
    momentum: float = 0.9
    current_lr: float = 0.045
    velocity: dict[str, np.ndarray] = field(default_factory=dict)


def sgd_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, Tensor],
    state: SgdState,
    nonneg: Iterable[str] = (),
) -> tuple[dict[str, Tensor], SgdState]:
    """One heavy-ball update, ``v <- mu v - lr g; w <- w + v``, then clamp ``nonneg`` at 0.

    ``state.velocity`` is updated in place; the returned params are fresh tensors.
    """
    nonneg = set(nonneg)
    unknown = nonneg - set(params)
    if unknown:
        raise ContractError(f"constraint on unknown parameters {sorted(unknown)}")
    new: dict[str, Tensor] = {}
    for name, w in params.items():
        g = grads.get(name)
        if g is None:
            raise ContractError(f"no gradient for parameter {name!r}")
        if g.shape != w.shape:
            raise ContractError(f"gradient shape {g.shape} != parameter shape {w.shape} for {name!r}")
        dt = w.dtype.type
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros(w.shape, dtype=w.dtype)
        v = dt(state.momentum) * v - dt(state.current_lr) * g.data.astype(w.dtype, copy=False)
        state.velocity[name] = v
        updated = w.data + v
        if name in nonneg:
            updated = np.maximum(updated, dt(0))
        check_finite(updated, f"parameter {name}")
        new[name] = Tensor.wrap(updated)
    return new, state
