"""Define-by-run reverse-mode differentiation.

Every differentiable operation is an :class:`OpDef` in :data:`OPS`: a forward
kernel returning ``(output, saved)`` and an adjoint mapping the output
gradient plus ``saved`` to one gradient per input. :func:`apply` is the single
entry point. When no operand is a :class:`Node` it just evaluates the forward
kernel and returns a :class:`Tensor`; otherwise it records a node on the
operands' :class:`Graph`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError
from .tensor import Tensor, check_finite, same_precision

ForwardFn = Callable[..., "tuple[np.ndarray, Any]"]
AdjointFn = Callable[[np.ndarray, Any], Sequence["np.ndarray | None"]]


@dataclass
class OpDef:
    name: str
    forward: ForwardFn
    adjoint: AdjointFn


OPS: dict[str, OpDef] = {}


def register(name: str, forward: ForwardFn, adjoint: AdjointFn) -> OpDef:
    op = OpDef(name, forward, adjoint)
    OPS[name] = op
    return op


class Node:
    __slots__ = ("graph", "id", "op", "inputs", "value", "attrs", "saved", "grad", "name")

    def __init__(self, graph, id_, op, inputs, value, attrs=None, saved=None, name=None):
        self.graph = graph
        self.id = id_
        self.op = op
        self.inputs = inputs
        self.value = value
        self.attrs = attrs or {}
        self.saved = saved
        self.grad = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self) -> str:
        return f"Node(id={self.id}, op={self.op!r}, shape={self.shape})"


class Graph:
    """Append-only list of nodes; ids are creation order, hence topological."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.parameters: set[int] = set()

    def leaf(self, value, trainable: bool = False, name: str | None = None) -> Node:
        t = value if isinstance(value, Tensor) else Tensor(value)
        node = Node(self, len(self.nodes), "leaf", (), t, name=name)
        self.nodes.append(node)
        if trainable:
            self.parameters.add(node.id)
        return node

    def param(self, value, name: str | None = None) -> Node:
        return self.leaf(value, trainable=True, name=name)

    def _record(self, op: str, inputs: tuple[int, ...], value: Tensor, attrs, saved) -> Node:
        node = Node(self, len(self.nodes), op, inputs, value, attrs, saved)
        self.nodes.append(node)
        return node

    def backward(self, loss: Node | int, wrt: Sequence[Node | int] | None = None) -> dict[int, Tensor]:
        """Gradients of the scalar ``loss`` for every parameter (or for ``wrt``)."""
        loss_id = loss.id if isinstance(loss, Node) else int(loss)
        loss_node = self.nodes[loss_id]
        if loss_node.value.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss_node.shape}")
        if wrt is None:
            targets = sorted(self.parameters)
        else:
            targets = [w.id if isinstance(w, Node) else int(w) for w in wrt]

        # only walk nodes that lie on a path from a target to the loss
        needed = [False] * (loss_id + 1)
        target_set = set(targets)
        for node in self.nodes[: loss_id + 1]:
            needed[node.id] = node.id in target_set or any(needed[i] for i in node.inputs)

        grads: dict[int, np.ndarray] = {}
        if needed[loss_id]:
            grads[loss_id] = np.ones(loss_node.shape, dtype=loss_node.dtype)
        for node in reversed(self.nodes[: loss_id + 1]):
            g = grads.get(node.id)
            if g is None or not node.inputs:
                continue
            if not any(needed[i] for i in node.inputs):
                continue
            in_grads = OPS[node.op].adjoint(g, node.saved)
            if len(in_grads) != len(node.inputs):
                raise ContractError(f"adjoint of {node.op} returned {len(in_grads)} grads for {len(node.inputs)} inputs")
            for i, gi in zip(node.inputs, in_grads):
                if gi is None or not needed[i]:
                    continue
                if gi.shape != self.nodes[i].shape:
                    raise ShapeError(f"adjoint of {node.op} produced grad {gi.shape} for input {self.nodes[i].shape}")
                grads[i] = grads[i] + gi if i in grads else gi

        out: dict[int, Tensor] = {}
        for t in targets:
            node = self.nodes[t]
            g = grads.get(t)
            if g is None:
                g = np.zeros(node.shape, dtype=node.dtype)
            check_finite(g, f"gradient of node {t}")
            gt = Tensor.wrap(np.array(g, dtype=node.dtype))
            node.grad = gt
            out[t] = gt
        return out


def _find_graph(args) -> Graph | None:
    graph = None
    for a in args:
        if isinstance(a, Node):
            if graph is None:
                graph = a.graph
            elif a.graph is not graph:
                raise ContractError("operands belong to different graphs")
    return graph


def _array(a) -> np.ndarray:
    if isinstance(a, Node):
        return a.value.data
    if isinstance(a, Tensor):
        return a.data
    return np.asarray(a, dtype=np.float64)


def apply(name: str, *args, **attrs):
    """Run op ``name`` on Tensors, Nodes or ``None`` placeholders."""
    op = OPS[name]
    present = [a for a in args if a is not None]
    arrays = [_array(a) for a in present]
    same_precision(*arrays)
    it = iter(arrays)
    call_args = [None if a is None else next(it) for a in args]
    out, saved = op.forward(*call_args, **attrs)
    out = np.asarray(out)
    if not np.isfinite(out).all():
        raise NumericError(f"non-finite output from {name}")
    value = Tensor.wrap(out)
    graph = _find_graph(present)
    if graph is None:
        return value
    ids = []
    for a in present:
        if not isinstance(a, Node):
            a = graph.leaf(a)
        ids.append(a.id)
    return graph._record(name, tuple(ids), value, attrs, saved)


def value_of(x) -> Tensor:
    return x.value if isinstance(x, Node) else x


# ---------------------------------------------------------------------------
# finite-difference checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    worst: tuple[str, tuple[int, ...]] | None = None
    per_param: dict[str, float] = field(default_factory=dict)

    def __str__(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        where = f" worst={self.worst[0]}{list(self.worst[1])}" if self.worst else ""
        return f"{verdict} max_rel_error={self.max_rel_error:.3e}{where}"


def grad_check(f: Callable, theta, step: float = 1e-3, tol: float = 1e-4) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``theta`` is a Tensor or a mapping of name -> Tensor. ``f`` receives the
    same structure (as graph nodes for the reverse pass, as plain tensors for
    the probes) and returns a scalar. It must be deterministic.
    """
    if step <= 0:
        raise ContractError("step must be positive")
    single = isinstance(theta, Tensor)
    params: dict[str, Tensor] = {"theta": theta} if single else dict(theta)

    g = Graph()
    nodes = {k: g.param(v, name=k) for k, v in params.items()}
    loss = f(nodes["theta"] if single else nodes)
    if not isinstance(loss, Node):
        raise ContractError("f does not depend on its parameters through the graph")
    ad = g.backward(loss)
    ad_by_name = {k: ad[n.id].data for k, n in nodes.items()}

    def evaluate(name: str, arr: np.ndarray) -> float:
        probe = dict(params)
        probe[name] = Tensor.wrap(arr)
        try:
            out = f(probe["theta"] if single else probe)
        except NumericError as exc:
            raise NumericError(f"non-finite f while probing {name}: {exc}") from exc
        val = float(value_of(out).data.reshape(-1)[0])
        if not np.isfinite(val):
            raise NumericError(f"non-finite f while probing {name}")
        return val

    worst_err, worst_at = 0.0, None
    per_param = {}
    for name, t in params.items():
        base = t.data
        g_fd = np.zeros(base.shape, dtype=np.float64)
        for idx in np.ndindex(*base.shape):
            plus = base.copy()
            plus[idx] += step
            minus = base.copy()
            minus[idx] -= step
            g_fd[idx] = (evaluate(name, plus) - evaluate(name, minus)) / (2.0 * step)
        g_ad = ad_by_name[name].astype(np.float64)
        denom = np.maximum(np.abs(g_ad) + np.abs(g_fd), 1e-8)
        rel = np.abs(g_ad - g_fd) / denom
        err = float(rel.max()) if rel.size else 0.0
        per_param[name] = err
        if err >= worst_err and rel.size:
            worst_err = err
            worst_at = (name, tuple(int(i) for i in np.unravel_index(int(rel.argmax()), rel.shape)))
    return GradCheckReport(worst_err, worst_err <= tol, worst_at, per_param)
