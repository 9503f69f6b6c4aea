import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from discluster import autodiff as ad
from discluster.errors import ContractError, DimensionError, DomainError, NonFiniteError


def test_matmul_identity():
    x = ad.constant([[1, 2], [3, 4]])
    out = ad.matmul(x, ad.constant(np.eye(2)))
    np.testing.assert_array_equal(out.value, [[1, 2], [3, 4]])


def test_exp_zero():
    np.testing.assert_array_equal(ad.exp(ad.constant([0.0, 0.0])).value, [[1.0, 1.0]])


def test_detach_blocks_gradient():
    x = ad.parameter([1.0, 2.0])
    y = ad.detach(x)
    np.testing.assert_array_equal(y.value, x.value)
    loss = ad.add(ad.sum_all(ad.square(y)), ad.sum_all(ad.scale(x, 0.0)))
    ad.backward(loss)
    np.testing.assert_array_equal(x.grad, 0.0)


def test_sum_of_squares_gradient():
    x = ad.parameter([1.0, 2.0, 3.0])
    ad.backward(ad.sum_all(ad.mul(x, x)))
    np.testing.assert_array_equal(x.grad, [[2.0, 4.0, 6.0]])


def test_constant_root_gives_zero_gradients():
    x = ad.parameter([1.0, -1.0])
    grads = ad.backward(ad.constant(3.0))
    assert x not in grads
    np.testing.assert_array_equal(x.grad, 0.0)


def test_non_scalar_root_rejected():
    with pytest.raises(ContractError):
        ad.backward(ad.parameter([1.0, 2.0]))


@pytest.mark.parametrize("op", [ad.matmul, ad.add, ad.mul])
def test_shape_mismatch(op):
    with pytest.raises(DimensionError):
        op(ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 2))))


def test_log_domain_error_names_op():
    with pytest.raises(DomainError, match="log"):
        ad.log(ad.constant([1.0, 0.0]))


def test_pick_out_of_range():
    with pytest.raises(ContractError):
        ad.pick(ad.constant(np.ones((2, 2))), [0, 2])


def test_concat_and_mean_rows():
    a = ad.parameter([[1.0, 2.0]])
    b = ad.parameter([[3.0, 4.0], [5.0, 6.0]])
    m = ad.mean_rows(ad.concat_rows([a, b]))
    np.testing.assert_allclose(m.value, [[3.0, 4.0]])
    ad.backward(ad.sum_all(m))
    np.testing.assert_allclose(a.grad, [[1 / 3, 1 / 3]])
    np.testing.assert_allclose(b.grad, np.full((2, 2), 1 / 3))


def test_backward_visits_shared_node_once():
    x = ad.parameter([2.0])
    y = ad.square(x)
    z = ad.add(y, y)
    ad.backward(ad.sum_all(z))
    # d(2 x^2)/dx = 4x
    np.testing.assert_allclose(x.grad, [[8.0]])


RNG = np.random.default_rng(7)


def _unary_cases():
    pos = RNG.uniform(0.5, 2.0, size=(3, 4))
    gen = RNG.normal(size=(3, 4))
    w = ad.constant(RNG.normal(size=(4, 2)))
    return [
        ("exp", lambda t: ad.sum_all(ad.exp(t)), gen),
        ("log", lambda t: ad.sum_all(ad.log(t)), pos),
        ("neg", lambda t: ad.sum_all(ad.mul(ad.neg(t), t)), gen),
        ("square", lambda t: ad.sum_all(ad.square(t)), gen),
        ("scale", lambda t: ad.sum_all(ad.square(ad.scale(t, -1.7))), gen),
        ("relu", lambda t: ad.sum_all(ad.square(ad.relu(t))), gen),
        ("sum_rows", lambda t: ad.sum_all(ad.square(ad.sum_rows(t))), gen),
        ("mean_rows", lambda t: ad.sum_all(ad.square(ad.mean_rows(t))), gen),
        ("pick", lambda t: ad.sum_all(ad.square(ad.pick(t, [0, 3, 1]))), gen),
        ("sub_col", lambda t: ad.sum_all(ad.square(ad.sub_col(t, ad.sum_rows(t)))), gen),
        ("add_row", lambda t: ad.sum_all(ad.square(ad.add_row(t, ad.mean_rows(t)))), gen),
        ("sq_dist", lambda t: ad.sum_all(ad.exp(ad.neg(ad.sq_dist(t, ad.scale(t, 0.5))))), gen),
        ("matmul", lambda t: ad.sum_all(ad.square(ad.matmul(t, w))), gen),
        ("concat", lambda t: ad.sum_all(ad.square(ad.concat_rows([t, ad.scale(t, 2.0)]))), gen),
    ]


CASES = _unary_cases()


@pytest.mark.parametrize("name,f,theta", CASES, ids=[c[0] for c in CASES])
def test_op_gradients(name, f, theta):
    assert ad.grad_check(f, theta, 1e-6) < 1e-7


def test_grad_check_quadratic():
    assert ad.grad_check(lambda t: ad.sum_all(ad.mul(t, t)), [3.0], 1e-6) < 1e-9


def test_grad_check_softmax_cross_entropy():
    from discluster.objectives import cross_entropy
    logits = np.random.default_rng(3).normal(size=(5, 4))
    err = ad.grad_check(lambda t: cross_entropy(t, [0, 1, 2, 3, 0]), logits, 1e-6)
    assert err < 1e-6


def test_grad_check_reports_non_finite():
    def f(t):
        v = ad.sum_all(t)
        if v.item() > 1.0:
            return ad.constant(float("inf"))
        return v
    with pytest.raises(NonFiniteError, match="index 0"):
        ad.grad_check(f, [1.0], 1e-6)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 1000))
def test_linearity_of_backward(a, b, seed):
    theta = np.random.default_rng(seed).normal(size=(2, 3))

    def grad_of(build):
        x = ad.parameter(theta)
        ad.backward(build(x))
        return x.grad

    f = lambda x: ad.sum_all(ad.exp(x))
    g = lambda x: ad.sum_all(ad.square(ad.relu(x)))
    both = grad_of(lambda x: ad.add(ad.scale(f(x), a), ad.scale(g(x), b)))
    np.testing.assert_allclose(both, a * grad_of(f) + b * grad_of(g), atol=1e-12, rtol=0)


def test_determinism_bitwise():
    def run():
        rng = np.random.default_rng(11)
        w = ad.parameter(rng.normal(size=(3, 3)))
        x = ad.constant(rng.normal(size=(4, 3)))
        loss = ad.sum_all(ad.exp(ad.neg(ad.sq_dist(ad.relu(ad.matmul(x, w)), x))))
        ad.backward(loss)
        return loss.value.tobytes(), w.grad.tobytes()
    assert run() == run()


def test_values_stay_finite():
    x = ad.parameter(np.random.default_rng(0).normal(size=(3, 3)))
    out = ad.log(ad.sum_rows(ad.exp(x)))
    assert np.all(np.isfinite(out.value)) and math.isfinite(ad.sum_all(out).item())
