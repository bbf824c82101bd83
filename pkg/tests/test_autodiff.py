import numpy as np
import pytest

from clgdrive.autodiff import Tensor, concat, minimum

from oracles import central_difference, max_relative_error

rng = np.random.default_rng(0)

UNARY = {
    "tanh": lambda t: t.tanh(),
    "exp": lambda t: t.exp(),
    "softplus": lambda t: t.softplus(),
    "square": lambda t: t.square(),
    "relu": lambda t: t.relu(),
    "neg": lambda t: -t,
    "scale": lambda t: t * 3.0 / 2.0,
    "clip": lambda t: t.clip(-0.5, 0.5),
    "sum0": lambda t: t.sum(axis=0),
    "mean1": lambda t: t.mean(axis=1, keepdims=True),
    "slice": lambda t: t[:, 1:],
    "rsub": lambda t: 1.0 - t,
}


def check(build, *arrays):
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    weights = rng.standard_normal(build(*tensors).shape)
    out = (build(*tensors) * weights).sum()
    out.backward()

    def f():
        return float((build(*[Tensor(t.data) for t in tensors]) * weights).sum().data)

    numeric = central_difference(f, [t.data for t in tensors])
    return max_relative_error([t.grad for t in tensors], numeric)


def away_from_kinks(shape, lo=0.1):
    x = rng.uniform(lo, 1.5, shape)
    return x * rng.choice([-1.0, 1.0], shape)


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name):
    x = away_from_kinks((3, 4))
    if name == "clip":
        x = np.where(np.abs(np.abs(x) - 0.5) < 0.05, 0.2, x)
    assert check(UNARY[name], x) <= 1e-6


def test_log_gradient():
    assert check(lambda t: t.log(), rng.uniform(0.5, 2.0, (2, 3))) <= 1e-6


def test_matmul_and_broadcast_add():
    w, b, x = rng.standard_normal((4, 5)), rng.standard_normal((1, 5)), rng.standard_normal((3, 4))
    assert check(lambda x, w, b: x @ w + b, x, w, b) <= 1e-6


def test_elementwise_product_and_difference():
    a, b = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
    assert check(lambda a, b: a * b - b, a, b) <= 1e-6


def test_minimum_routes_gradient_to_smaller():
    a = Tensor(np.array([1.0, 5.0]), requires_grad=True)
    b = Tensor(np.array([2.0, 3.0]), requires_grad=True)
    minimum(a, b).sum().backward()
    assert a.grad.tolist() == [1.0, 0.0] and b.grad.tolist() == [0.0, 1.0]


def test_concat():
    a, b = rng.standard_normal((2, 3)), rng.standard_normal((2, 2))
    assert check(lambda a, b: concat([a, b], axis=1).tanh(), a, b) <= 1e-6


def test_reused_node_accumulates():
    x = Tensor(np.array(3.0), requires_grad=True)
    y = x * x + x
    y.backward()
    assert float(x.grad) == 7.0


def test_constants_get_no_gradient():
    c = Tensor(np.ones(3))
    x = Tensor(np.ones(3), requires_grad=True)
    (c * x).sum().backward()
    assert c.grad is None and x.grad.tolist() == [1.0, 1.0, 1.0]


def test_detach_cuts_graph():
    x = Tensor(np.array(2.0), requires_grad=True)
    (x.detach() * x).backward()
    assert float(x.grad) == 2.0


def test_softplus_stable_for_large_inputs():
    x = Tensor(np.array([-800.0, 0.0, 800.0]), requires_grad=True)
    y = x.softplus()
    y.sum().backward()
    assert np.all(np.isfinite(y.data)) and y.data[2] == 800.0
    assert x.grad.tolist() == pytest.approx([0.0, 0.5, 1.0])
