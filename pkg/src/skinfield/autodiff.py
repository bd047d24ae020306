"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Design notes:
  * float32 is the default dtype (training / rendering hot paths); every op
    also runs in float64, which the oracle tests use for gradient checks.
  * Ops record onto the active ComputationTape whenever gradients are enabled
    and any input requires them.  backward() replays the tape in reverse
    execution order, which fixes the gradient accumulation order and makes
    training runs reproducible.
  * Backward rules are written in terms of tensor ops and reference the
    recorded output node where they need the forward value, so grad(...,
    create_graph=True) yields gradients that are themselves differentiable.
    This is what lets loss terms built on spatial density gradients train.
  * Every forward or backward result is checked for NaN/Inf and a
    NonFiniteError is raised immediately; silent corruption is never allowed
    to propagate into an optimizer step.
"""

from __future__ import annotations

import threading

import numpy as np

FLOAT_DTYPES = (np.float32, np.float64)
DEFAULT_DTYPE = np.float32

# Module-level switch; finite checks are cheap (one min/max pass) and stay on.
FINITE_CHECKS = True


class AutodiffError(Exception):
    """Base class for autodiff failures."""


class ShapeMismatchError(AutodiffError):
    """Input shapes invalid for a primitive."""


class NonFiniteError(AutodiffError):
    """A forward or backward pass produced NaN or Inf."""


class GradientError(AutodiffError):
    """backward()/grad() called on an unsuitable tensor."""


def _check_finite(arr, op_name):
    if not FINITE_CHECKS or arr.size == 0:
        return
    # min/max both propagate NaN and expose -Inf/+Inf with one pass each.
    if not (np.isfinite(arr.min()) and np.isfinite(arr.max())):
        raise NonFiniteError(f"non-finite values produced by op '{op_name}'")


class OpRecord:
    """One recorded primitive: output, inputs, and its backward rule."""

    __slots__ = ("name", "output", "inputs", "vjp")

    def __init__(self, name, output, inputs, vjp):
        self.name = name
        self.output = output
        self.inputs = inputs
        self.vjp = vjp


class ComputationTape:
    """Ordered record of primitives; replayed in reverse by backward().

    Usable as a context manager to scope recording:

        with ComputationTape() as tape:
            loss = ...
            backward(loss)
    """

    def __init__(self):
        self.records = []

    def __enter__(self):
        _STATE.tapes.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _STATE.tapes.pop()
        return False

    def __len__(self):
        return len(self.records)

    def clear(self):
        self.records.clear()


class _ThreadState(threading.local):
    """Per-thread tape and grad-enable stacks; parallel ray batches get
    private tapes for free."""

    def __init__(self):
        self.tapes = [ComputationTape()]
        self.grad_enabled = [True]


_STATE = _ThreadState()


def active_tape():
    return _STATE.tapes[-1]


class no_grad:
    """Context manager disabling tape recording (frozen-graph evaluation)."""

    def __enter__(self):
        _STATE.grad_enabled.append(False)
        return self

    def __exit__(self, exc_type, exc, tb):
        _STATE.grad_enabled.pop()
        return False


class enable_grad:
    """Re-enable recording inside a no_grad scope (used by create_graph)."""

    def __enter__(self):
        _STATE.grad_enabled.append(True)
        return self

    def __exit__(self, exc_type, exc, tb):
        _STATE.grad_enabled.pop()
        return False


def grad_enabled():
    return _STATE.grad_enabled[-1]


class Tensor:
    """Dense multidimensional array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_tape", "_rec_index")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None
        self._rec_index = -1
        _check_finite(arr, "tensor")

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._tape is None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    def item(self):
        if self.data.size != 1:
            raise GradientError(f"item() requires a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    @property
    def T(self):
        return transpose(self, None)


def _as_tensor(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype), requires_grad=False)


def _binary_dtype(a, b):
    if a.dtype != b.dtype:
        raise ShapeMismatchError(
            f"mixed dtypes {a.dtype.name} vs {b.dtype.name}; cast explicitly"
        )
    return a.dtype


def _apply(name, out_data, inputs, make_vjp):
    """Wrap a primitive result, recording it on the tape when needed.

    `make_vjp(out)` builds the backward rule; giving it the recorded output
    node (not a detached copy) keeps the rule differentiable for
    create_graph=True.
    """
    _check_finite(out_data, name)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out._tape = None
    out._rec_index = -1
    out.requires_grad = grad_enabled() and any(t.requires_grad for t in inputs)
    if out.requires_grad:
        tape = active_tape()
        tape.records.append(OpRecord(name, out, inputs, make_vjp(out)))
        out._tape = tape
        out._rec_index = len(tape.records) - 1
    return out


def _zeros_like(t):
    return Tensor(np.zeros(t.shape, dtype=t.dtype), requires_grad=False)


def _const(value, dtype):
    return Tensor(np.asarray(value, dtype=dtype), requires_grad=False)


def _sum_to_shape(g, shape):
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = tsum(g, axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = tsum(g, axis=axes, keepdims=True)
    if g.shape != shape:
        g = reshape(g, shape)
    return g


# -- elementwise and binary primitives ---------------------------------------


def add(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor(b, a.dtype)
    _binary_dtype(a, b)

    def make_vjp(out):
        def vjp(g):
            return (_sum_to_shape(g, a.shape) if a.requires_grad else None,
                    _sum_to_shape(g, b.shape) if b.requires_grad else None)
        return vjp

    return _apply("add", a.data + b.data, (a, b), make_vjp)


def sub(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor(b, a.dtype)
    _binary_dtype(a, b)

    def make_vjp(out):
        def vjp(g):
            return (_sum_to_shape(g, a.shape) if a.requires_grad else None,
                    _sum_to_shape(neg(g), b.shape) if b.requires_grad else None)
        return vjp

    return _apply("sub", a.data - b.data, (a, b), make_vjp)


def mul(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor(b, a.dtype)
    _binary_dtype(a, b)

    def make_vjp(out):
        def vjp(g):
            return (_sum_to_shape(mul(g, b), a.shape) if a.requires_grad else None,
                    _sum_to_shape(mul(g, a), b.shape) if b.requires_grad else None)
        return vjp

    return _apply("mul", a.data * b.data, (a, b), make_vjp)


def div(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor(b, a.dtype)
    _binary_dtype(a, b)

    def make_vjp(out):
        def vjp(g):
            ga = _sum_to_shape(div(g, b), a.shape) if a.requires_grad else None
            gb = None
            if b.requires_grad:
                gb = _sum_to_shape(neg(div(mul(g, a), mul(b, b))), b.shape)
            return (ga, gb)
        return vjp

    return _apply("div", a.data / b.data, (a, b), make_vjp)


def neg(a):
    def make_vjp(out):
        return lambda g: (neg(g),)

    return _apply("neg", -a.data, (a,), make_vjp)


def power(a, p):
    """Elementwise power with a constant (Python number) exponent."""
    p = float(p)

    def make_vjp(out):
        def vjp(g):
            return (mul(g, mul(power(a, p - 1.0), _const(p, a.dtype))),)
        return vjp

    return _apply("power", a.data ** p, (a,), make_vjp)


def exp(a):
    def make_vjp(out):
        return lambda g: (mul(g, out),)

    return _apply("exp", np.exp(a.data), (a,), make_vjp)


def log(a):
    def make_vjp(out):
        return lambda g: (div(g, a),)

    return _apply("log", np.log(a.data), (a,), make_vjp)


def sin(a):
    def make_vjp(out):
        return lambda g: (mul(g, cos(a)),)

    return _apply("sin", np.sin(a.data), (a,), make_vjp)


def cos(a):
    def make_vjp(out):
        return lambda g: (neg(mul(g, sin(a))),)

    return _apply("cos", np.cos(a.data), (a,), make_vjp)


def sqrt(a):
    def make_vjp(out):
        def vjp(g):
            return (div(mul(g, _const(0.5, a.dtype)), out),)
        return vjp

    return _apply("sqrt", np.sqrt(a.data), (a,), make_vjp)


def relu(a):
    def make_vjp(out):
        return lambda g: (mul(g, step(a)),)

    return _apply("relu", np.maximum(a.data, 0), (a,), make_vjp)


def step(a):
    """Heaviside step (x > 0); derivative is zero almost everywhere."""

    def make_vjp(out):
        return lambda g: (_zeros_like(a),)

    return _apply("step", (a.data > 0).astype(a.dtype), (a,), make_vjp)


def _sigmoid_data(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    def make_vjp(out):
        def vjp(g):
            one = _const(1.0, a.dtype)
            return (mul(g, mul(out, sub(one, out))),)
        return vjp

    return _apply("sigmoid", _sigmoid_data(np.atleast_1d(a.data)).reshape(a.shape), (a,), make_vjp)


def shifted_softplus(a):
    """Density activation log(1 + exp(x - 1)); non-negative everywhere."""
    z = a.data - 1.0
    out_data = np.maximum(z, 0) + np.log1p(np.exp(-np.abs(z)))

    def make_vjp(out):
        def vjp(g):
            return (mul(g, sigmoid(sub(a, _const(1.0, a.dtype)))),)
        return vjp

    return _apply("shifted_softplus", out_data, (a,), make_vjp)


def widened_sigmoid(a, eps=0.001):
    """Color activation (1 + 2*eps) * sigmoid(x) - eps, range [-eps, 1+eps]."""
    eps = float(eps)
    s = _sigmoid_data(np.atleast_1d(a.data)).reshape(a.shape)
    out_data = (1.0 + 2.0 * eps) * s - eps

    def make_vjp(out):
        def vjp(g):
            # reconstruct sigmoid from the output node to stay differentiable
            st = mul(add(out, _const(eps, a.dtype)), _const(1.0 / (1.0 + 2.0 * eps), a.dtype))
            one = _const(1.0, a.dtype)
            return (mul(g, mul(mul(st, sub(one, st)), _const(1.0 + 2.0 * eps, a.dtype))),)
        return vjp

    return _apply("widened_sigmoid", out_data, (a,), make_vjp)


# -- linear algebra -----------------------------------------------------------


def matmul(a, b):
    """Matrix product; supports (..., m, k) @ (k, n) and matching batch dims."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError(
            f"matmul requires >=2-D operands, got {a.shape} and {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(
            f"matmul inner dimensions disagree: {a.shape} @ {b.shape}"
        )
    _binary_dtype(a, b)

    def make_vjp(out):
        def vjp(g):
            ga = gb = None
            if a.requires_grad:
                ga = matmul(g, _swap_last(b))
                ga = _sum_to_shape(ga, a.shape)
            if b.requires_grad:
                if b.ndim == 2 and a.ndim > 2:
                    a2 = reshape(a, (-1, a.shape[-1]))
                    g2 = reshape(g, (-1, g.shape[-1]))
                    gb = matmul(_swap_last(a2), g2)
                else:
                    gb = matmul(_swap_last(a), g)
                    gb = _sum_to_shape(gb, b.shape)
            return (ga, gb)
        return vjp

    return _apply("matmul", np.matmul(a.data, b.data), (a, b), make_vjp)


def _swap_last(t):
    axes = list(range(t.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(t, tuple(axes))


# -- reductions and shape ops -------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def make_vjp(out):
        def vjp(g):
            gd = g
            if not keepdims and axis is not None:
                axes = axis if isinstance(axis, tuple) else (axis,)
                shape = list(g.shape)
                for ax in sorted(ax % a.ndim for ax in axes):
                    shape.insert(ax, 1)
                gd = reshape(g, tuple(shape))
            elif not keepdims and axis is None:
                gd = reshape(g, (1,) * a.ndim)
            ones = Tensor(np.ones(a.shape, dtype=a.dtype))
            return (mul(gd, ones),)
        return vjp

    return _apply("sum", np.asarray(out_data), (a,), make_vjp)


def tmean(a, axis=None, keepdims=False):
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), np.asarray(1.0 / n, dtype=a.dtype))


def reshape(a, shape):
    def make_vjp(out):
        return lambda g: (reshape(g, a.shape),)

    return _apply("reshape", a.data.reshape(shape), (a,), make_vjp)


def transpose(a, axes=None):
    def make_vjp(out):
        def vjp(g):
            inv = None if axes is None else tuple(np.argsort(axes))
            return (transpose(g, inv),)
        return vjp

    return _apply("transpose", np.transpose(a.data, axes).copy(), (a,), make_vjp)


def flip(a, axis):
    def make_vjp(out):
        return lambda g: (flip(g, axis),)

    return _apply("flip", np.flip(a.data, axis).copy(), (a,), make_vjp)


def cumsum(a, axis):
    def make_vjp(out):
        def vjp(g):
            # Reverse cumulative sum distributes each output grad to all
            # contributing inputs.
            return (flip(cumsum(flip(g, axis), axis), axis),)
        return vjp

    return _apply("cumsum", np.cumsum(a.data, axis=axis), (a,), make_vjp)


def concat(parts, axis):
    parts = list(parts)
    if not parts:
        raise ShapeMismatchError("concat of zero tensors")
    for p in parts[1:]:
        _binary_dtype(parts[0], p)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(out):
        def vjp(g):
            grads = []
            for i, p in enumerate(parts):
                if not p.requires_grad:
                    grads.append(None)
                    continue
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
                grads.append(getitem(g, tuple(sl)))
            return tuple(grads)
        return vjp

    return _apply("concat", np.concatenate([p.data for p in parts], axis=axis),
                  tuple(parts), make_vjp)


def getitem(a, idx):
    """Basic slicing or integer-array indexing; backward scatter-adds."""
    out_data = a.data[idx]
    if isinstance(out_data, np.ndarray) and out_data.base is not None:
        out_data = out_data.copy()

    def make_vjp(out):
        return lambda g: (scatter_add(g, idx, a.shape),)

    return _apply("getitem", np.asarray(out_data), (a,), make_vjp)


def scatter_add(values, idx, shape):
    """Zeros of `shape` with `values` scatter-added at `idx` (dual of getitem)."""
    out_data = np.zeros(shape, dtype=values.dtype)
    np.add.at(out_data, idx, values.data)

    def make_vjp(out):
        return lambda g: (getitem(g, idx),)

    return _apply("scatter_add", out_data, (values,), make_vjp)


def pad2d(a, pad):
    """Zero-pad the last two axes by `pad` on each side."""
    if pad == 0:
        return a
    width = [(0, 0)] * (a.ndim - 2) + [(pad, pad), (pad, pad)]

    def make_vjp(out):
        def vjp(g):
            sl = [slice(None)] * (a.ndim - 2) + [slice(pad, -pad), slice(pad, -pad)]
            return (getitem(g, tuple(sl)),)
        return vjp

    return _apply("pad2d", np.pad(a.data, width), (a,), make_vjp)


def softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def make_vjp(out):
        def vjp(g):
            gy = mul(g, out)
            return (sub(gy, mul(out, tsum(gy, axis=axis, keepdims=True))),)
        return vjp

    return _apply("softmax", out_data, (a,), make_vjp)


def stack(parts, axis=0):
    expanded = []
    for p in parts:
        shape = list(p.shape)
        shape.insert(axis if axis >= 0 else axis + p.ndim + 1, 1)
        expanded.append(reshape(p, tuple(shape)))
    return concat(expanded, axis)


def square(a):
    return mul(a, a)


# -- backward machinery -------------------------------------------------------


def _backprop(tape, seeds, stop_index, create_graph):
    """Replay `tape.records[:stop_index + 1]` in reverse.

    seeds: dict id(tensor) -> (tensor, grad tensor).  Returns the final dict
    holding gradients for every reached tensor that requires grad.
    """
    grads = dict(seeds)
    ctx = enable_grad() if create_graph else no_grad()
    with ctx:
        for rec in reversed(tape.records[: stop_index + 1]):
            entry = grads.pop(id(rec.output), None)
            if entry is None:
                continue
            _, g = entry
            input_grads = rec.vjp(g)
            for t, gi in zip(rec.inputs, input_grads):
                if gi is None or not t.requires_grad:
                    continue
                _check_finite(gi.data, f"backward:{rec.name}")
                prev = grads.get(id(t))
                if prev is None:
                    grads[id(t)] = (t, gi)
                else:
                    grads[id(t)] = (t, add(prev[1], gi))
    return grads


def backward(loss):
    """Populate .grad on every reachable requires_grad leaf of `loss`.

    Gradients accumulate additively across calls until zero_grad().
    """
    if not isinstance(loss, Tensor):
        raise GradientError("backward expects a Tensor")
    if loss.size != 1:
        raise GradientError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss._tape is None or not loss.requires_grad:
        raise GradientError("loss is detached from the computation tape")
    tape = loss._tape
    seed = Tensor(np.ones(loss.shape, dtype=loss.dtype))
    grads = _backprop(tape, {id(loss): (loss, seed)}, loss._rec_index, create_graph=False)
    with no_grad():
        for t, g in grads.values():
            if not t.is_leaf:
                continue
            if t.grad is None:
                t.grad = Tensor(g.data.copy())
            else:
                t.grad = Tensor(t.grad.data + g.data)


def grad(output, inputs, create_graph=False):
    """Gradients of a scalar `output` w.r.t. `inputs` (list of Tensors).

    Does not touch .grad.  Unreached inputs get zero gradients.  With
    create_graph=True the returned tensors are differentiable.
    """
    if output.size != 1:
        raise GradientError(f"grad requires a scalar output, got shape {output.shape}")
    if output._tape is None or not output.requires_grad:
        raise GradientError("output is detached from the computation tape")
    tape = output._tape
    seed = Tensor(np.ones(output.shape, dtype=output.dtype))
    grads = _backprop(tape, {id(output): (output, seed)}, output._rec_index, create_graph)
    out = []
    for t in inputs:
        entry = grads.get(id(t))
        out.append(entry[1] if entry is not None else _zeros_like(t))
    return out


def spatial_gradient(field_eval, x):
    """Gradient of a scalar field at a 3-vector via reverse-mode autodiff.

    `field_eval` maps a (3,) Tensor to a scalar Tensor.
    """
    x = np.asarray(x)
    with ComputationTape():
        xt = Tensor(x, requires_grad=True, dtype=x.dtype if x.dtype in FLOAT_DTYPES else None)
        out = field_eval(xt)
        if out.size != 1:
            raise GradientError("field_eval must return a scalar")
        if not out.requires_grad:
            return np.zeros(3, dtype=xt.dtype)
        (g,) = grad(out, [xt])
    _check_finite(g.data, "spatial_gradient")
    return g.data.copy()


def parameter(data, dtype=DEFAULT_DTYPE):
    """Leaf tensor with requires_grad=True."""
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)
