import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from lgtsm import autograd as ag
from lgtsm.autograd import NonFiniteError, Tensor
from lgtsm.gradcheck import check_grad


def _grad(f, *xs):
    ts = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in xs]
    ag.backward(f(*ts))
    return [t.grad for t in ts]


def test_product_rule_hand_values():
    # d(x*y + x)/dx = y + 1, d/dy = x
    gx, gy = _grad(lambda x, y: ag.add(ag.mul(x, y), x), 3.0, -2.0)
    assert gx == -1.0
    assert gy == 3.0


def test_shared_input_accumulates():
    # f = x*x + x  ->  2x + 1
    (gx,) = _grad(lambda x: ag.add(ag.mul(x, x), x), 1.5)
    assert gx == 4.0


def test_diamond_graph_visits_each_node_once():
    # y = tanh(x); f = y*y + y; df/dx = (2y + 1)(1 - y^2)
    x0 = 0.3
    (gx,) = _grad(lambda x: (lambda y: ag.add(ag.mul(y, y), y))(ag.tanh(x)), x0)
    y = np.tanh(x0)
    assert np.isclose(gx, (2 * y + 1) * (1 - y * y), rtol=1e-14)


def test_broadcast_gradient_is_summed_back():
    x = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    ag.backward(ag.sum_(ag.mul(x, b)))
    assert np.array_equal(b.grad, [2.0, 2.0, 2.0])
    assert np.array_equal(x.grad, [[1.0, 2.0, 3.0]] * 2)


def test_leaky_relu_and_relu_subgradient_at_zero():
    (g,) = _grad(lambda x: ag.sum_(ag.leaky_relu(x, 0.2)), [-1.0, 0.0, 2.0])
    assert np.array_equal(g, [0.2, 0.2, 1.0])
    (g,) = _grad(lambda x: ag.sum_(ag.relu(x)), [-1.0, 0.0, 2.0])
    assert np.array_equal(g, [0.0, 0.0, 1.0])


def test_concat_and_reshape_route_gradients():
    a = Tensor(np.zeros((1, 2, 2)), requires_grad=True)
    b = Tensor(np.zeros((1, 1, 2)), requires_grad=True)
    c = ag.concat([a, b], axis=1)
    w = np.arange(6.0).reshape(1, 3, 2)
    ag.backward(ag.sum_(ag.mul(ag.reshape(c, (6,)), w.reshape(6))))
    assert np.array_equal(a.grad, w[:, :2])
    assert np.array_equal(b.grad, w[:, 2:])


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with ag.no_grad():
        y = ag.mul(x, 2.0)
    assert not y.requires_grad
    assert ag.is_grad_enabled()


def test_backward_rejects_non_scalar_without_seed():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        ag.backward(ag.mul(x, 2.0))


def test_verification_mode_flags_non_finite_values():
    x = Tensor(np.array([1.0, np.inf]), requires_grad=True)
    with ag.verification_mode():
        with pytest.raises(NonFiniteError):
            ag.mul(x, 2.0)


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, (3, 4), elements=st.floats(-3, 3)))
def test_elementwise_chain_matches_finite_differences(a):
    x = Tensor(a.copy(), requires_grad=True)
    f = lambda: ag.mul(ag.sigmoid(x), ag.tanh(ag.sub(x, 0.5)))
    err, _ = check_grad(f, [x], n_samples=6)
    assert err < 1e-4


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, (5,), elements=st.floats(-2, 2)))
def test_mean_is_sum_over_size(a):
    x = Tensor(a, requires_grad=True)
    ag.backward(ag.mean(x))
    assert np.allclose(x.grad, np.full(5, 0.2), rtol=0, atol=0)
