"""Dense tensors and the primitive kernels the rest of the framework builds on.

Layout is channels-last: ``(batch, height, width, channel)``. A :class:`Tensor`
owns a read-only numpy buffer of either float64 or float32; arithmetic that
mixes the two precisions is rejected.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError

PRECISIONS = {"float64": np.float64, "float32": np.float32, "64": np.float64, "32": np.float32}


def resolve_dtype(precision) -> np.dtype:
    if precision is None:
        return np.dtype(np.float64)
    if isinstance(precision, str):
        try:
            return np.dtype(PRECISIONS[precision])
        except KeyError:
            raise ContractError(f"unknown precision {precision!r}") from None
    dt = np.dtype(precision)
    if dt not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ContractError(f"unsupported dtype {dt}")
    return dt


def check_finite(arr: np.ndarray, what: str = "tensor") -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values in {what}")


class Tensor:
    """Immutable N-d array of float64 or float32 values."""

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        if dtype is None and isinstance(data, np.ndarray) and data.dtype == np.float32:
            dt = np.dtype(np.float32)
        elif dtype is None and isinstance(data, Tensor):
            dt = data.dtype
        else:
            dt = resolve_dtype(dtype)
        if isinstance(data, Tensor):
            data = data.data
        arr = np.array(data, dtype=dt, copy=True)
        check_finite(arr)
        arr.flags.writeable = False
        self.data = arr

    @classmethod
    def wrap(cls, arr: np.ndarray) -> "Tensor":
        """Adopt ``arr`` without copying. The caller gives up ownership."""
        if arr.dtype not in (np.float64, np.float32):
            arr = arr.astype(np.float64)
        check_finite(arr)
        arr.flags.writeable = False
        t = cls.__new__(cls)
        t.data = arr
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def precision(self) -> str:
        return "float64" if self.data.dtype == np.float64 else "float32"

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def tolist(self):
        return self.data.tolist()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def astype(self, precision) -> "Tensor":
        return Tensor(self.data, dtype=resolve_dtype(precision))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, precision={self.precision})"

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)


def zeros(shape: Sequence[int], dtype=None) -> Tensor:
    return Tensor.wrap(np.zeros(tuple(shape), dtype=resolve_dtype(dtype)))


def ones(shape: Sequence[int], dtype=None) -> Tensor:
    return Tensor.wrap(np.ones(tuple(shape), dtype=resolve_dtype(dtype)))


def full(shape: Sequence[int], value: float, dtype=None) -> Tensor:
    return Tensor.wrap(np.full(tuple(shape), value, dtype=resolve_dtype(dtype)))


def element_count(shape: Iterable[int]) -> int:
    n = 1
    for d in shape:
        n *= int(d)
    return n


def validate_shape(shape: Sequence[int]) -> tuple[int, ...]:
    dims = tuple(int(d) for d in shape)
    if any(d < 1 for d in dims):
        raise ShapeError(f"shape extents must be >= 1, got {dims}")
    return dims


def same_precision(*arrays: np.ndarray) -> None:
    dts = {a.dtype for a in arrays if isinstance(a, np.ndarray) and a.ndim >= 0}
    if len(dts) > 1:
        raise ContractError(f"mixed precision operands: {sorted(map(str, dts))}")


# ---------------------------------------------------------------------------
# ndarray kernels, shared with the differentiable ops


def reshape_kernel(a: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    dims = validate_shape(shape)
    if element_count(dims) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} ({a.size} elements) to {dims}")
    return a.reshape(dims)


def normalize_axes(ndim: int, axes: Iterable[int]) -> tuple[int, ...]:
    out = []
    for ax in axes:
        ax = int(ax)
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    if len(set(out)) != len(out):
        raise ShapeError(f"repeated axes {tuple(axes)}")
    return tuple(sorted(out))


def reduce_mean_kernel(a: np.ndarray, axes: Iterable[int]) -> np.ndarray:
    axes = normalize_axes(a.ndim, axes)
    count = element_count(a.shape[ax] for ax in axes)
    return np.asarray(a.sum(axis=axes) / a.dtype.type(count))


def matmul_kernel(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    same_precision(a, b)
    return a @ b


def binary_shapes(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")
    same_precision(a, b)


# ---------------------------------------------------------------------------
# Tensor-level API


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def reshape(t: Tensor, new_shape: Sequence[int]) -> Tensor:
    return Tensor.wrap(reshape_kernel(_t(t).data, new_shape).copy())


def reduce_mean(t: Tensor, axes: Iterable[int]) -> Tensor:
    return Tensor.wrap(reduce_mean_kernel(_t(t).data, axes))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return Tensor.wrap(matmul_kernel(_t(a).data, _t(b).data))


def _binary(a, b, op: str, fn) -> Tensor:
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise ContractError(f"{op}: at least one operand must be a Tensor")
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        binary_shapes(a.data, b.data, op)
        return Tensor.wrap(np.asarray(fn(a.data, b.data)))
    t, s = (a, b) if isinstance(a, Tensor) else (b, a)
    s = t.dtype.type(s)
    return Tensor.wrap(np.asarray(fn(t.data, s) if t is a else fn(s, t.data)))


def add(a, b) -> Tensor:
    return _binary(a, b, "add", np.add)


def sub(a, b) -> Tensor:
    return _binary(a, b, "sub", np.subtract)


def mul(a, b) -> Tensor:
    return _binary(a, b, "mul", np.multiply)


def max_with_scalar(t: Tensor, s: float) -> Tensor:
    a = _t(t).data
    return Tensor.wrap(np.maximum(a, a.dtype.type(s)))


def relu(t: Tensor) -> Tensor:
    return max_with_scalar(t, 0.0)


def scale(t: Tensor, s: float) -> Tensor:
    a = _t(t).data
    return Tensor.wrap(a * a.dtype.type(s))


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "max_with_scalar": max_with_scalar,
    "relu": relu,
    "scale": scale,
}


def elementwise(op: str, *args) -> Tensor:
    """Dispatch one of ``add, sub, mul, max_with_scalar, relu, scale`` by name."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(*args)
