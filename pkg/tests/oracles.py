"""Shared independent oracles for the test suite.

These deliberately avoid the implementation paths they check: gradients come
from central finite differences, reductions from scalar loops, geometry from
hand-rolled matrix chains.
"""

import numpy as np

from skinfield import autodiff as ad


def numeric_grad(f, x, eps=1e-5):
    """Central finite differences of a scalar function of an ndarray."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * eps)
    return g


def rel_error(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.abs(a) + np.abs(b), floor)
    return float(np.max(np.abs(a - b) / denom))


def gradcheck(build, arrays, eps=1e-5, tol=1e-4):
    """Check autodiff grads of scalar `build(*tensors)` against finite diffs.

    `arrays` are float64 ndarrays; each gets requires_grad=True.  Returns the
    worst relative error across all inputs.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    with ad.ComputationTape():
        tensors = [ad.Tensor(a.copy(), requires_grad=True, dtype=np.float64) for a in arrays]
        out = build(*tensors)
        assert out.size == 1, "gradcheck needs a scalar output"
        grads = ad.grad(out, tensors)
    worst = 0.0
    for i, a in enumerate(arrays):
        def f(x, _i=i):
            vals = [arr.copy() for arr in arrays]
            vals[_i] = x
            with ad.no_grad():
                ts = [ad.Tensor(v, dtype=np.float64) for v in vals]
                return float(build(*ts).data)
        num = numeric_grad(f, a, eps=eps)
        worst = max(worst, rel_error(grads[i].data, num))
    assert worst <= tol, f"gradient mismatch: rel err {worst:.3e} > {tol:.0e}"
    return worst
