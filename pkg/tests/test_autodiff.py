import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spatialhead import ops
from spatialhead.autodiff import OPS, Graph, Node, OpDef, grad_check
from spatialhead.errors import ContractError, NumericError
from spatialhead.gradsuite import all_cases, run_suite, uncovered_ops
from spatialhead.tensor import Tensor


def test_sum_gradient_is_ones():
    g = Graph()
    w = g.param(Tensor([1.0, 2.0, 3.0]))
    grads = g.backward(ops.sum_all(w))
    assert grads[w.id].tolist() == [1, 1, 1]


def test_square_gradient():
    g = Graph()
    w = g.param(Tensor([1.0, 2.0]))
    grads = g.backward(ops.sum_all(ops.mul(w, w)))
    assert grads[w.id].tolist() == [2, 4]


def test_no_path_gives_zeros():
    g = Graph()
    w = g.param(Tensor([1.0, 2.0]))
    c = g.leaf(Tensor([5.0]))
    grads = g.backward(ops.sum_all(c))
    assert grads[w.id].tolist() == [0, 0]


def test_non_parameter_leaves_get_nothing():
    g = Graph()
    w = g.param(Tensor([1.0, 2.0]))
    x = g.leaf(Tensor([3.0, 4.0]))
    grads = g.backward(ops.sum_all(ops.mul(w, x)))
    assert set(grads) == {w.id}
    assert x.grad is None
    assert w.grad.tolist() == [3, 4]


def test_non_scalar_loss_rejected():
    g = Graph()
    w = g.param(Tensor([1.0, 2.0]))
    with pytest.raises(ContractError):
        g.backward(ops.scale(w, 2.0))


def test_ids_are_topological():
    g = Graph()
    w = g.param(Tensor(np.ones((2, 2))))
    y = ops.sum_all(ops.relu(ops.matmul(w, w)))
    for node in g.nodes:
        assert all(i < node.id for i in node.inputs)
    assert y.id == len(g.nodes) - 1


def test_fan_out_accumulates():
    g = Graph()
    w = g.param(Tensor([3.0]))
    loss = ops.sum_all(ops.add(ops.scale(w, 2.0), ops.scale(w, 5.0)))
    assert g.backward(loss)[w.id].tolist() == [7.0]


def test_plain_tensors_skip_the_graph():
    out = ops.sum_all(Tensor([1.0, 2.0]))
    assert isinstance(out, Tensor) and out.item() == 3.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_linearity_of_gradients(seed):
    r = np.random.default_rng(seed)
    w0 = Tensor(r.normal(size=(3, 4)))
    a, b = Tensor(r.normal(size=(4, 2))), Tensor(r.normal(size=(3, 4)))

    def f1(w):
        return ops.sum_all(ops.matmul(w, a))

    def f2(w):
        return ops.sum_all(ops.mul(ops.relu(w), b))

    def grad(fn):
        g = Graph()
        w = g.param(w0)
        return g.backward(fn(w))[w.id].data

    g = Graph()
    w = g.param(w0)
    both = g.backward(ops.add(f1(w), f2(w)))[w.id].data
    np.testing.assert_allclose(both, grad(f1) + grad(f2), rtol=0, atol=1e-12)


def test_backward_twice_identical(rng):
    g = Graph()
    x = g.param(Tensor(rng.normal(size=(2, 5, 5, 3))))
    k = g.param(Tensor(rng.normal(size=(3, 3, 3))))
    loss = ops.sum_all(ops.relu(ops.depthwise_conv2d(x, k)))
    first = g.backward(loss)
    second = g.backward(loss)
    for key in first:
        np.testing.assert_array_equal(first[key].data, second[key].data)


class TestGradCheck:
    def test_half_square_norm(self):
        rep = grad_check(lambda t: ops.scale(ops.sum_all(ops.mul(t, t)), 0.5), Tensor([3.0, -4.0]), 1e-4, 1e-6)
        assert rep.passed and rep.max_rel_error <= 1e-6

    def test_linear_is_exact(self):
        c = Tensor([0.3, -1.7, 2.0])
        rep = grad_check(lambda t: ops.sum_all(ops.mul(t, c)), Tensor([1.0, 2.0, 3.0]))
        assert rep.max_rel_error < 1e-12

    def test_dict_theta_reports_names(self, rng):
        theta = {"a": Tensor(rng.normal(size=(2, 3))), "b": Tensor(rng.normal(size=(3,)))}
        def f(p):
            return ops.add(ops.sum_all(p["a"]), ops.sum_all(ops.mul(p["b"], p["b"])))

        rep = grad_check(f, theta)
        assert set(rep.per_param) == {"a", "b"}
        assert rep.passed

    def test_non_finite_probe(self):
        def f(t):
            v = t.value.data if isinstance(t, Node) else t.data
            if v[0] > 1.0:
                raise NumericError("boom")
            return ops.sum_all(t)

        with pytest.raises(NumericError):
            grad_check(f, Tensor([1.0]), step=0.5)

    def test_bad_step(self):
        with pytest.raises(ContractError):
            grad_check(lambda t: ops.sum_all(t), Tensor([1.0]), step=0.0)

    def test_detects_wrong_adjoint(self, monkeypatch):
        good = OPS["scale"]
        monkeypatch.setitem(OPS, "scale", OpDef("scale", good.forward, lambda g, s: [g * 2 * s]))
        rep = grad_check(lambda t: ops.sum_all(ops.scale(t, 0.5)), Tensor([1.0, 2.0]))
        assert not rep.passed
        assert "FAIL" in str(rep)


class TestSuite:
    def test_every_op_covered(self):
        assert uncovered_ops() == set()

    def test_every_case_passes(self):
        results = run_suite()
        failed = [(n, str(r)) for n, r in results if not r.passed]
        assert not failed
        names = {n for n, _ in results}
        assert {f"head:{k}" for k in ("GAP", "GWAP", "DW", "AVG_DW_NONNEG_DROPOUT")} <= names

    def test_corrupted_adjoint_is_named(self, monkeypatch):
        good = OPS["depthwise_conv2d"]

        def bad(g, saved):
            grads = list(good.adjoint(g, saved))
            grads[1] = grads[1] * 1.01
            return grads

        monkeypatch.setitem(OPS, "depthwise_conv2d", OpDef("depthwise_conv2d", good.forward, bad))
        results = dict(run_suite())
        assert not results["depthwise_conv2d"].passed
        assert results["reshape"].passed

    def test_cases_are_deterministic(self):
        a, b = all_cases(0), all_cases(0)
        assert a.keys() == b.keys()
