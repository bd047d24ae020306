"""Gradient and tape behavior of the autodiff engine."""

import numpy as np
import pytest

from skinfield import autodiff as ad
from oracles import gradcheck, numeric_grad, rel_error


def test_square_value_and_grad():
    with ad.ComputationTape():
        x = ad.Tensor(np.array(3.0), requires_grad=True, dtype=np.float64)
        y = ad.power(x, 2)
        assert y.data == 9.0
        ad.backward(y)
    assert x.grad.data == pytest.approx(6.0)


def test_shifted_softplus_at_one():
    out = ad.shifted_softplus(ad.Tensor(np.array(1.0), dtype=np.float64))
    assert out.data == pytest.approx(np.log(2.0), abs=1e-12)


def test_widened_sigmoid_range_and_midpoint():
    x = ad.Tensor(np.array([0.0, 50.0, -50.0]), dtype=np.float64)
    out = ad.widened_sigmoid(x, eps=0.001).data
    assert out[0] == pytest.approx(0.5)
    assert out[1] == pytest.approx(1.001, abs=1e-9)
    assert out[2] == pytest.approx(-0.001, abs=1e-9)


def test_sum_backward_is_ones():
    with ad.ComputationTape():
        w = ad.Tensor(np.arange(5.0), requires_grad=True, dtype=np.float64)
        ad.backward(ad.tsum(w))
    assert np.array_equal(w.grad.data, np.ones(5))


def test_zero_times_weight_gives_zero_grad():
    with ad.ComputationTape():
        w = ad.Tensor(np.ones(4), requires_grad=True, dtype=np.float64)
        loss = ad.tsum(ad.mul(w, np.zeros(4)))
        ad.backward(loss)
    assert np.array_equal(w.grad.data, np.zeros(4))


def test_grad_accumulates_until_reset():
    with ad.ComputationTape():
        w = ad.Tensor(np.ones(3), requires_grad=True, dtype=np.float64)
        ad.backward(ad.tsum(w))
        ad.backward(ad.tsum(ad.mul(w, np.full(3, 2.0))))
    assert np.array_equal(w.grad.data, np.full(3, 3.0))
    w.zero_grad()
    assert w.grad is None


def test_backward_rejects_nonscalar_and_detached():
    with ad.ComputationTape():
        w = ad.Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ad.GradientError):
            ad.backward(ad.mul(w, w))
    with pytest.raises(ad.GradientError):
        ad.backward(ad.Tensor(np.array(1.0)))


def test_matmul_shape_error_names_shapes():
    a = ad.Tensor(np.zeros((4, 3)))
    b = ad.Tensor(np.zeros((4, 2)))
    with pytest.raises(ad.ShapeMismatchError, match=r"\(4, 3\).*\(4, 2\)"):
        ad.matmul(a, b)


def test_nonfinite_forward_is_hard_error():
    with pytest.raises(ad.NonFiniteError):
        ad.log(ad.Tensor(np.array([0.0]), dtype=np.float64))


def test_matmul_gradcheck_4x3_3x2():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((4, 3))
    b = rng.standard_normal((3, 2))
    c = rng.standard_normal((4, 2))
    gradcheck(lambda ta, tb: ad.tsum(ad.mul(ad.matmul(ta, tb), ad.Tensor(c, dtype=np.float64))),
              [a, b])


PRIMITIVE_CASES = {
    "add": lambda a, b: ad.tsum(ad.add(a, b)),
    "sub": lambda a, b: ad.tsum(ad.mul(ad.sub(a, b), ad.sub(a, b))),
    "mul": lambda a, b: ad.tsum(ad.mul(a, b)),
    "div": lambda a, b: ad.tsum(ad.div(a, b)),
    "exp": lambda a, b: ad.tsum(ad.mul(ad.exp(a), b)),
    "log": lambda a, b: ad.tsum(ad.mul(ad.log(ad.add(ad.mul(a, a), 1.0)), b)),
    "sin": lambda a, b: ad.tsum(ad.mul(ad.sin(a), b)),
    "cos": lambda a, b: ad.tsum(ad.mul(ad.cos(a), b)),
    "sqrt": lambda a, b: ad.tsum(ad.mul(ad.sqrt(ad.add(ad.mul(a, a), 0.5)), b)),
    "power": lambda a, b: ad.tsum(ad.mul(ad.power(ad.add(ad.mul(a, a), 1.0), 1.7), b)),
    "relu": lambda a, b: ad.tsum(ad.mul(ad.relu(a), b)),
    "sigmoid": lambda a, b: ad.tsum(ad.mul(ad.sigmoid(a), b)),
    "shifted_softplus": lambda a, b: ad.tsum(ad.mul(ad.shifted_softplus(a), b)),
    "widened_sigmoid": lambda a, b: ad.tsum(ad.mul(ad.widened_sigmoid(a), b)),
    "softmax": lambda a, b: ad.tsum(ad.mul(ad.softmax(a, axis=1), b)),
    "cumsum": lambda a, b: ad.tsum(ad.mul(ad.cumsum(a, axis=1), b)),
    "flip": lambda a, b: ad.tsum(ad.mul(ad.flip(a, 1), b)),
    "sum_axis": lambda a, b: ad.tsum(ad.mul(ad.tsum(a, axis=1, keepdims=True), b)),
    "mean": lambda a, b: ad.tsum(ad.mul(ad.tmean(a, axis=0, keepdims=True), b)),
    "transpose": lambda a, b: ad.tsum(ad.mul(ad.transpose(a), ad.transpose(b))),
    "reshape": lambda a, b: ad.tsum(ad.mul(ad.reshape(a, (-1,)), ad.reshape(b, (-1,)))),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_gradients_match_finite_differences(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    build = PRIMITIVE_CASES[name]
    worst = 0.0
    for _ in range(10):
        a = rng.standard_normal((3, 4)) * 0.8
        b = rng.standard_normal((3, 4)) * 0.8
        if name == "relu":
            # keep away from the kink
            a = a + np.sign(a) * 0.05
        worst = max(worst, gradcheck(build, [a, b]))
    assert worst <= 1e-4


def test_broadcast_gradients():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((4, 3))
    b = rng.standard_normal((3,))
    gradcheck(lambda ta, tb: ad.tsum(ad.mul(ad.add(ta, tb), ad.add(ta, tb))), [a, b])


def test_getitem_scatter_roundtrip_gradients():
    rng = np.random.default_rng(11)
    a = rng.standard_normal((6, 3))
    idx = np.array([0, 2, 2, 5])

    def build(ta):
        rows = ad.getitem(ta, idx)
        return ad.tsum(ad.mul(rows, rows))

    gradcheck(build, [a])


def test_scatter_add_duplicates_accumulate():
    vals = ad.Tensor(np.ones((3, 2)), dtype=np.float64)
    out = ad.scatter_add(vals, np.array([1, 1, 0]), (4, 2))
    assert np.array_equal(out.data, [[1, 1], [2, 2], [0, 0], [0, 0]])


def test_concat_and_stack_gradients():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((2, 3))
    b = rng.standard_normal((2, 2))

    def build(ta, tb):
        cat = ad.concat([ta, tb], axis=1)
        return ad.tsum(ad.mul(cat, cat))

    gradcheck(build, [a, b])


def test_batched_matmul_gradients():
    rng = np.random.default_rng(9)
    a = rng.standard_normal((2, 3, 4))
    b = rng.standard_normal((2, 4, 2))
    w = rng.standard_normal((4, 2))
    gradcheck(lambda ta, tb: ad.tsum(ad.mul(ad.matmul(ta, tb), ad.matmul(ta, ad.Tensor(w, dtype=np.float64)))),
              [a, b])


def test_composition_chain_depth4_jacobian_product():
    # Chain of scalar maps; the composed derivative must equal the product of
    # the individual derivatives evaluated along the chain.
    x0 = 0.37
    with ad.ComputationTape():
        x = ad.Tensor(np.array(x0), requires_grad=True, dtype=np.float64)
        f1 = ad.sin(x)
        f2 = ad.exp(f1)
        f3 = ad.mul(f2, f2)
        f4 = ad.log(ad.add(f3, 1.0))
        ad.backward(f4)
    v1 = np.sin(x0)
    v2 = np.exp(v1)
    v3 = v2 * v2
    manual = (1.0 / (v3 + 1.0)) * (2.0 * v2) * v2 * np.cos(x0)
    assert x.grad.data == pytest.approx(manual, rel=1e-12)


def test_spatial_gradient_dot_and_constant():
    g = ad.spatial_gradient(lambda t: ad.tsum(ad.mul(t, t)), np.array([1.0, 2.0, 3.0]))
    assert np.allclose(g, [2.0, 4.0, 6.0])
    g0 = ad.spatial_gradient(lambda t: ad.tsum(ad.mul(t, np.zeros(3))), np.array([1.0, 2.0, 3.0]))
    assert np.allclose(g0, 0.0)


def test_spatial_gradient_matches_finite_differences_on_mlp():
    rng = np.random.default_rng(21)
    w1 = rng.standard_normal((3, 16))
    w2 = rng.standard_normal((16, 1))

    def field(t):
        h = ad.relu(ad.matmul(ad.reshape(t, (1, 3)), ad.Tensor(w1, dtype=np.float64)))
        return ad.tsum(ad.matmul(h, ad.Tensor(w2, dtype=np.float64)))

    x = np.array([0.3, -0.2, 0.5])
    g = ad.spatial_gradient(field, x)

    def f(v):
        with ad.no_grad():
            return float(field(ad.Tensor(v, dtype=np.float64)).data)

    num = numeric_grad(f, x)
    assert rel_error(g, num) <= 1e-3


def test_second_order_through_input_gradient():
    # d/dw of (d/dx sigmoid(w*x)) must match finite differences: the VJPs are
    # themselves differentiable when create_graph=True.
    w0, x0 = 0.8, 0.6

    def inner_grad(wv):
        with ad.ComputationTape():
            w = ad.Tensor(np.array(wv), requires_grad=True, dtype=np.float64)
            x = ad.Tensor(np.array(x0), requires_grad=True, dtype=np.float64)
            y = ad.sigmoid(ad.mul(w, x))
            (gx,) = ad.grad(y, [x], create_graph=True)
            return w, gx

    with ad.ComputationTape():
        w, gx = inner_grad(w0)
        (gw,) = ad.grad(gx, [w])
    eps = 1e-6
    num = (float(inner_grad(w0 + eps)[1].data) - float(inner_grad(w0 - eps)[1].data)) / (2 * eps)
    assert gw.data == pytest.approx(num, rel=1e-5)


def test_tape_topological_invariant():
    with ad.ComputationTape() as tape:
        x = ad.Tensor(np.ones(3), requires_grad=True)
        y = ad.mul(x, x)
        z = ad.tsum(y)
        ad.backward(z)
    seen = set()
    for rec in tape.records:
        for t in rec.inputs:
            assert id(t) not in (id(r.output) for r in tape.records if id(r.output) in seen and False)
        # inputs must have been produced earlier (or be leaves)
        for t in rec.inputs:
            if not t.is_leaf:
                assert t._rec_index < rec.output._rec_index
        seen.add(id(rec.output))


def test_forward_deterministic():
    rng = np.random.default_rng(123)
    a = rng.standard_normal((16, 16)).astype(np.float32)
    b = rng.standard_normal((16, 16)).astype(np.float32)
    r1 = ad.matmul(ad.Tensor(a), ad.Tensor(b)).data
    r2 = ad.matmul(ad.Tensor(a), ad.Tensor(b)).data
    assert np.array_equal(r1, r2)
