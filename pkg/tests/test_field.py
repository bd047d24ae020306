"""Positional encoding and the conditioned canonical field."""

import numpy as np
import pytest

from skinfield import autodiff as ad
from skinfield.config import FieldConfig
from skinfield.field import (CanonicalDomain, OutOfDomainError, eval_density,
                             eval_field, init_field_params,
                             positional_encoding)
from oracles import gradcheck, numeric_grad, rel_error

SMALL = FieldConfig(pe_frequencies=2, mlp1_layers=3, mlp1_width=16,
                    mlp2_hidden_layers=2, mlp2_width=16, skip_layer=1,
                    feature_dim=6, attn_dim=8, encoder_channels=(4, 4, 4))


def small_params(dtype=np.float64, seed=0):
    return init_field_params(SMALL, np.random.default_rng(seed), dtype=dtype)


def test_encoding_of_zero():
    x = ad.Tensor(np.zeros((1, 3)), dtype=np.float64)
    out = positional_encoding(x, 3).data[0]
    assert np.allclose(out[:3], 0.0)
    for k in range(3):
        band = out[3 + 6 * k: 3 + 6 * (k + 1)]
        assert np.allclose(band[:3], 0.0)   # sin
        assert np.allclose(band[3:], 1.0)   # cos


def test_encoding_dimension():
    x = ad.Tensor(np.zeros((5, 3)), dtype=np.float64)
    assert positional_encoding(x, 10).shape == (5, 63)


def test_encoding_values_match_trig_oracle():
    x = np.array([[0.5, 0.0, 0.0]])
    out = positional_encoding(ad.Tensor(x, dtype=np.float64), 2).data[0]
    expected = [0.5, 0.0, 0.0]
    for k in range(2):
        f = (2.0 ** k) * np.pi
        expected += [np.sin(f * 0.5), 0.0, 0.0, np.cos(f * 0.5), 1.0, 1.0]
    assert np.allclose(out, expected, atol=1e-12)


def test_encoding_rejects_out_of_domain():
    with pytest.raises(OutOfDomainError):
        positional_encoding(ad.Tensor(np.array([[1.6, 0, 0]]), dtype=np.float64), 2)


def test_density_activation_values():
    # raw pre-activation 1 -> ln 2; achieved by zeroing weights and setting bias
    params = small_params()
    params["mlp1.sigma.w"] = ad.parameter(np.zeros_like(params["mlp1.sigma.w"].data),
                                          dtype=np.float64)
    params["mlp1.sigma.b"] = ad.parameter(np.array([1.0]), dtype=np.float64)
    x = ad.Tensor(np.zeros((1, 3)), dtype=np.float64)
    f = ad.Tensor(np.zeros((1, SMALL.feature_dim)), dtype=np.float64)
    sigma = eval_density(x, f, params, SMALL)
    assert sigma.data[0] == pytest.approx(np.log(2.0), rel=1e-12)


def test_color_activation_midpoint_and_limits():
    params = small_params()
    params["mlp2.out.w"] = ad.parameter(np.zeros_like(params["mlp2.out.w"].data),
                                        dtype=np.float64)
    x = ad.Tensor(np.zeros((1, 3)), dtype=np.float64)
    f = ad.Tensor(np.zeros((1, SMALL.feature_dim)), dtype=np.float64)
    for bias, expected in [(0.0, 0.5), (60.0, 1.001), (-60.0, -0.001)]:
        params["mlp2.out.b"] = ad.parameter(np.full(3, bias), dtype=np.float64)
        _, color, _ = eval_field(x, f, f, params, SMALL)
        assert np.allclose(color.data, expected, atol=1e-9)


def test_field_output_ranges():
    rng = np.random.default_rng(1)
    params = small_params(seed=3)
    x = ad.Tensor(rng.uniform(-1, 1, (64, 3)), dtype=np.float64)
    fg = ad.Tensor(rng.standard_normal((64, SMALL.feature_dim)), dtype=np.float64)
    fc = ad.Tensor(rng.standard_normal((64, SMALL.feature_dim)), dtype=np.float64)
    sigma, color, _ = eval_field(x, fg, fc, params, SMALL)
    assert (sigma.data >= 0).all()
    assert (color.data >= -0.001 - 1e-9).all() and (color.data <= 1.001 + 1e-9).all()


def test_field_continuity_in_position():
    rng = np.random.default_rng(2)
    params = small_params(seed=5)
    base = rng.uniform(-0.9, 0.9, (32, 3))
    delta = 1e-5
    moved = base + delta
    fg = ad.Tensor(rng.standard_normal((32, SMALL.feature_dim)), dtype=np.float64)
    s1, c1, _ = eval_field(ad.Tensor(base, dtype=np.float64), fg, fg, params, SMALL)
    s2, c2, _ = eval_field(ad.Tensor(moved, dtype=np.float64), fg, fg, params, SMALL)
    lip = max(np.abs(s2.data - s1.data).max(), np.abs(c2.data - c1.data).max())
    # empirical Lipschitz bound stays modest for random small nets
    assert lip <= 1e3 * 3 * delta


def test_field_determinism():
    rng = np.random.default_rng(4)
    params = small_params(seed=7)
    x = rng.uniform(-1, 1, (16, 3))
    fg = rng.standard_normal((16, SMALL.feature_dim))
    out1 = eval_field(ad.Tensor(x, dtype=np.float64), ad.Tensor(fg, dtype=np.float64),
                      ad.Tensor(fg, dtype=np.float64), params, SMALL)
    out2 = eval_field(ad.Tensor(x, dtype=np.float64), ad.Tensor(fg, dtype=np.float64),
                      ad.Tensor(fg, dtype=np.float64), params, SMALL)
    assert np.array_equal(out1[0].data, out2[0].data)
    assert np.array_equal(out1[1].data, out2[1].data)


def test_field_gradients_match_finite_differences():
    rng = np.random.default_rng(6)
    params = small_params(seed=9)
    x = rng.uniform(-0.8, 0.8, (4, 3))
    fg = rng.standard_normal((4, SMALL.feature_dim)) * 0.5
    fc = rng.standard_normal((4, SMALL.feature_dim)) * 0.5
    probe = rng.standard_normal((4, 3))

    names = ["mlp1.0.w", "mlp1.2.b", "mlp1.sigma.w", "mlp2.0.w", "mlp2.out.b"]

    def build(xt, fgt, fct, *weight_tensors):
        local = dict(params)
        for name, t in zip(names, weight_tensors):
            local[name] = t
        sigma, color, _ = eval_field(xt, fgt, fct, local, SMALL)
        return ad.add(ad.tsum(ad.mul(color, ad.Tensor(probe, dtype=np.float64))),
                      ad.tsum(sigma))

    arrays = [x, fg, fc] + [params[n].data.copy() for n in names]
    worst = gradcheck(build, arrays, tol=1e-4)
    assert worst <= 1e-4


def test_spatial_gradient_of_trained_density_matches_fd():
    rng = np.random.default_rng(8)
    params = small_params(seed=11)
    fg_row = rng.standard_normal((1, SMALL.feature_dim))
    domain = CanonicalDomain(center=np.zeros(3), scale=1.0)

    from skinfield.field import density_normals

    x = rng.uniform(-0.5, 0.5, (5, 3))
    fg = ad.Tensor(np.repeat(fg_row, 5, axis=0), dtype=np.float64)
    with ad.ComputationTape():
        normals, keep = density_normals(x, fg, params, SMALL, domain)
    assert keep.all()
    assert np.allclose(np.linalg.norm(normals.data, axis=1), 1.0, atol=1e-9)

    def sigma_at(v):
        with ad.no_grad():
            xt = ad.Tensor(v[None, :], dtype=np.float64)
            f = ad.Tensor(fg_row, dtype=np.float64)
            return float(eval_density(xt, f, params, SMALL).data[0])

    for i in range(5):
        num = numeric_grad(sigma_at, x[i])
        unit = num / np.linalg.norm(num)
        assert rel_error(normals.data[i], unit) <= 1e-3


def test_canonical_domain_roundtrip():
    dom = CanonicalDomain(center=np.array([0.3, 1.0, -0.2]), scale=1.4)
    pts = np.random.default_rng(0).uniform(-1, 2, (10, 3))
    assert np.allclose(dom.denormalize(dom.normalize(pts)), pts)
    dom2 = CanonicalDomain.from_json(dom.to_json())
    assert np.allclose(dom2.center, dom.center) and dom2.scale == dom.scale
