"""Differentiable primitive ops.

Every op pairs a vectorized numpy forward with a hand-written backward and
registers itself (with a random-input sampler) so the gradient checker can
sweep the whole op set.  Composite layers elsewhere in the package are
built from these primitives; their gradients fall out of the tape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import ContractViolation, Tensor, as_tensor, make_op


@dataclass
class OpSpec:
    name: str
    sampler: Callable  # rng -> (fn, [input tensors]); fn(*inputs) -> scalar Tensor


REGISTRY: dict[str, OpSpec] = {}


def register(name, sampler):
    REGISTRY[name] = OpSpec(name, sampler)


def _needs(inputs):
    return tuple(t.node is not None or t.requires_grad for t in inputs)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# --- elementwise binary ---------------------------------------------------

def _binary(name, fwd, bwd):
    def op(a, b):
        a, b = as_tensor(a), as_tensor(b)
        need = _needs((a, b))
        with np.errstate(all="ignore"):  # non-finite outputs raise in make_op
            out = fwd(a.data, b.data)

        def backward(ctx, out_grads, _a=a, _b=b, _need=need):
            (g,) = out_grads
            ga, gb = bwd(g, _a.data, _b.data)
            ga = _unbroadcast(ga, _a.data.shape) if _need[0] else None
            gb = _unbroadcast(gb, _b.data.shape) if _need[1] else None
            return ga, gb

        return make_op(name, (a, b), (out,), None, backward)[0]

    return op


add = _binary("add", lambda a, b: a + b, lambda g, a, b: (g, g))
sub = _binary("sub", lambda a, b: a - b, lambda g, a, b: (g, -g))
mul = _binary("mul", lambda a, b: a * b, lambda g, a, b: (g * b, g * a))
div = _binary("div", lambda a, b: a / b, lambda g, a, b: (g / b, -g * a / (b * b)))


# --- elementwise unary ----------------------------------------------------

def _unary(name, fwd, bwd):
    """bwd(g, x, out) -> gx"""

    def op(x):
        x = as_tensor(x)
        with np.errstate(all="ignore"):  # non-finite outputs raise in make_op
            out = fwd(x.data)

        def backward(ctx, out_grads, _x=x, _out=out):
            (g,) = out_grads
            return (bwd(g, _x.data, _out),)

        return make_op(name, (x,), (out,), None, backward)[0]

    return op


neg = _unary("neg", lambda x: -x, lambda g, x, o: -g)
exp = _unary("exp", np.exp, lambda g, x, o: g * o)
log = _unary("log", np.log, lambda g, x, o: g / x)
sqrt = _unary("sqrt", np.sqrt, lambda g, x, o: g * 0.5 / o)
square = _unary("square", np.square, lambda g, x, o: g * 2.0 * x)
tanh = _unary("tanh", np.tanh, lambda g, x, o: g * (1.0 - o * o))
absval = _unary("abs", np.abs, lambda g, x, o: g * np.sign(x))


def sigmoid(x):
    x = as_tensor(x)
    out = np.where(x.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(x.data))),
                   np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))))

    def backward(ctx, out_grads, _out=out):
        (g,) = out_grads
        return (g * _out * (1.0 - _out),)

    return make_op("sigmoid", (x,), (out,), None, backward)[0]


def pow_const(x, p: float):
    x = as_tensor(x)
    out = np.power(x.data, p)

    def backward(ctx, out_grads, _x=x, _p=p):
        (g,) = out_grads
        return (g * _p * np.power(_x.data, _p - 1.0),)

    return make_op("pow_const", (x,), (out,), None, backward)[0]


def scale(x, c: float):
    x = as_tensor(x)
    out = x.data * c

    def backward(ctx, out_grads, _c=c):
        (g,) = out_grads
        return (g * _c,)

    return make_op("scale", (x,), (out,), None, backward)[0]


def add_const(x, c):
    x = as_tensor(x)
    out = x.data + c

    def backward(ctx, out_grads):
        (g,) = out_grads
        return (g,)

    return make_op("add_const", (x,), (out,), None, backward)[0]


def clamp(x, lo=None, hi=None):
    """Hard clamp; gradient is zero outside the open interval (lo, hi)."""
    x = as_tensor(x)
    out = np.clip(x.data, lo, hi)
    mask = np.ones_like(x.data)
    if lo is not None:
        mask = mask * (x.data > lo)
    if hi is not None:
        mask = mask * (x.data < hi)

    def backward(ctx, out_grads, _mask=mask):
        (g,) = out_grads
        return (g * _mask,)

    return make_op("clamp", (x,), (out,), None, backward)[0]


# --- reductions -----------------------------------------------------------

def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(ctx, out_grads, _x=x, _axis=axis, _keep=keepdims):
        (g,) = out_grads
        if _axis is not None and not _keep:
            g = np.expand_dims(g, _axis)
        return (np.broadcast_to(g, _x.data.shape).copy(),)

    return make_op("sum", (x,), (np.asarray(out),), None, backward)[0]


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size if axis is None else x.data.shape[axis]

    def backward(ctx, out_grads, _x=x, _axis=axis, _keep=keepdims, _n=count):
        (g,) = out_grads
        if _axis is not None and not _keep:
            g = np.expand_dims(g, _axis)
        return (np.broadcast_to(g, _x.data.shape).copy() / _n,)

    return make_op("mean", (x,), (np.asarray(out),), None, backward)[0]


def max_(x, axis: int):
    """Max along one axis; subgradient routes to the first argmax (ties fixed)."""
    x = as_tensor(x)
    idx = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def backward(ctx, out_grads, _x=x, _axis=axis, _idx=idx):
        (g,) = out_grads
        gx = np.zeros_like(_x.data)
        np.put_along_axis(gx, np.expand_dims(_idx, _axis), np.expand_dims(g, _axis), axis=_axis)
        return (gx,)

    return make_op("max", (x,), (out,), None, backward)[0]


# --- shape ops ------------------------------------------------------------

def reshape(x, shape):
    x = as_tensor(x)
    out = x.data.reshape(shape)

    def backward(ctx, out_grads, _shape=x.data.shape):
        (g,) = out_grads
        return (g.reshape(_shape),)

    return make_op("reshape", (x,), (out,), None, backward)[0]


def concat(parts, axis: int = -1):
    parts = [as_tensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]

    def backward(ctx, out_grads, _sizes=sizes, _axis=axis):
        (g,) = out_grads
        return tuple(np.split(g, np.cumsum(_sizes)[:-1], axis=_axis))

    return make_op("concat", tuple(parts), (out,), None, backward)[0]


def narrow(x, axis: int, start: int, length: int):
    """Contiguous slice along `axis`."""
    x = as_tensor(x)
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, start + length)
    out = x.data[tuple(sl)].copy()

    def backward(ctx, out_grads, _x=x, _sl=tuple(sl)):
        (g,) = out_grads
        gx = np.zeros_like(_x.data)
        gx[_sl] = g
        return (gx,)

    return make_op("narrow", (x,), (out,), None, backward)[0]


def gather_rows(x, idx):
    """out[i...] = x[idx[i...]]; backward scatter-adds (deterministic np.add.at)."""
    x = as_tensor(x)
    idx = np.asarray(idx)
    out = x.data[idx]

    def backward(ctx, out_grads, _x=x, _idx=idx):
        (g,) = out_grads
        gx = np.zeros_like(_x.data)
        np.add.at(gx, _idx, g)
        return (gx,)

    return make_op("gather_rows", (x,), (out,), None, backward)[0]


def broadcast_to(x, shape):
    x = as_tensor(x)
    out = np.broadcast_to(x.data, shape).copy()

    def backward(ctx, out_grads, _shape=x.data.shape):
        (g,) = out_grads
        return (_unbroadcast(g, _shape),)

    return make_op("broadcast_to", (x,), (out,), None, backward)[0]


# --- linear algebra -------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ContractViolation("matmul expects 2-D operands")
    need = _needs((a, b))
    out = a.data @ b.data

    def backward(ctx, out_grads, _a=a, _b=b, _need=need):
        (g,) = out_grads
        ga = g @ _b.data.T if _need[0] else None
        gb = _a.data.T @ g if _need[1] else None
        return ga, gb

    return make_op("matmul", (a, b), (out,), None, backward)[0]


# --- spatial interpolation ------------------------------------------------

def interpolate_nn3(src_coords, src_feats, dst_coords, idx, eps: float = 1e-8):
    """Inverse-distance-weighted 3-neighbor feature interpolation.

    dst[i] = sum_j w_ij * src_feats[idx[i,j]] with w ~ 1/(d^2 + eps),
    normalized over the 3 neighbors.  Differentiable in src_coords and
    src_feats; dst_coords and the neighbor indices are fixed.
    """
    src_coords, src_feats = as_tensor(src_coords), as_tensor(src_feats)
    dst = np.asarray(dst_coords)
    idx = np.asarray(idx)

    nbr = src_coords.data[idx]                      # (D, 3, 3)
    diff = nbr - dst[:, None, :]                    # (D, 3, 3)
    d2 = np.sum(diff * diff, axis=-1)               # (D, 3)
    u = 1.0 / (d2 + eps)
    usum = u.sum(axis=1, keepdims=True)
    w = u / usum                                    # (D, 3)
    f = src_feats.data[idx]                         # (D, 3, C)
    out = np.einsum("dk,dkc->dc", w, f)

    need = _needs((src_coords, src_feats))

    def backward(ctx, out_grads, _sc=src_coords, _sf=src_feats):
        (g,) = out_grads                            # (D, C)
        g_coords = None
        g_feats = None
        if need[1]:
            g_feats = np.zeros_like(_sf.data)
            np.add.at(g_feats, idx, w[:, :, None] * g[:, None, :])
        if need[0]:
            # d(out_c)/d(u_k) = (f_kc - out_c) / usum; d(u_k)/d(d2_k) = -u_k^2
            gu = np.einsum("dc,dkc->dk", g, f - out[:, None, :]) / usum
            gd2 = -gu * u * u
            gnbr = gd2[:, :, None] * 2.0 * diff     # (D, 3, 3)
            g_coords = np.zeros_like(_sc.data)
            np.add.at(g_coords, idx, gnbr)
        return g_coords, g_feats

    return make_op("interpolate_nn3", (src_coords, src_feats), (out,), None, backward)[0]


# --- composite helpers (pure compositions, no own backward) -----------------

def linear(x, w, b):
    """x @ w + b with a row-broadcast bias."""
    return add(matmul(x, w), b)


def softmax(x, axis: int = 0):
    """Numerically stable softmax; the max shift is detached (exact gradient)."""
    shift = np.max(x.data, axis=axis, keepdims=True)
    e = exp(sub(x, Tensor(shift, dtype=x.dtype)))
    return div(e, sum_(e, axis=axis, keepdims=True))


def mean_abs(a, b=None):
    """Mean absolute value (of a difference, when b is given)."""
    d = a if b is None else sub(a, b)
    return mean(absval(d))


def dot_readout(x, vec):
    """Scalarize a tensor against a fixed vector (for checks)."""
    return sum_(mul(x, Tensor(np.asarray(vec), dtype=x.dtype)))


def fixed_readout(rng):
    """A scalarizing functional whose random weights freeze on first use.

    Gradcheck re-evaluates the same function under perturbation, so the
    readout must not re-sample between calls.
    """
    cache = {}

    def readout(x):
        if "v" not in cache:
            cache["v"] = rng.standard_normal(x.data.shape)
        return dot_readout(x, cache["v"])

    return readout


# --- registry samplers ------------------------------------------------------

def _rand(rng, *shape, lo=-1.5, hi=1.5):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _sample_binary(op):
    def sampler(rng):
        a, b = _rand(rng, 4, 5), _rand(rng, 4, 5)
        ro = fixed_readout(rng)
        return lambda x, y: ro(op(x, y)), [a, b]
    return sampler


def _sample_unary(op, lo=-1.5, hi=1.5):
    def sampler(rng):
        x = _rand(rng, 3, 7, lo=lo, hi=hi)
        ro = fixed_readout(rng)
        return lambda t: ro(op(t)), [x]
    return sampler


register("add", _sample_binary(add))
register("sub", _sample_binary(sub))
register("mul", _sample_binary(mul))
register("div", _sample_binary(lambda a, b: div(a, add_const(square(b), 0.5))))
register("neg", _sample_unary(neg))
register("exp", _sample_unary(exp))
register("log", _sample_unary(log, lo=0.2, hi=2.0))
register("sqrt", _sample_unary(sqrt, lo=0.2, hi=2.0))
register("square", _sample_unary(square))
register("tanh", _sample_unary(tanh))
register("abs", _sample_unary(absval, lo=0.1, hi=2.0))
register("sigmoid", _sample_unary(sigmoid))
register("pow_const", _sample_unary(lambda x: pow_const(x, 3.0)))
register("scale", _sample_unary(lambda x: scale(x, -2.5)))
register("add_const", _sample_unary(lambda x: add_const(x, 0.75)))
register("clamp", _sample_unary(lambda x: clamp(x, -0.9, 0.9), lo=-2.0, hi=2.0))
register("sum", _sample_unary(lambda x: sum_(x, axis=1)))
register("mean", _sample_unary(lambda x: mean(x, axis=0)))
register("max", _sample_unary(lambda x: max_(x, axis=1)))
register("reshape", _sample_unary(lambda x: reshape(x, (7, 3))))
register("narrow", _sample_unary(lambda x: narrow(x, 1, 2, 3)))
def _sample_broadcast(rng):
    x = _rand(rng, 3, 7)
    ro = fixed_readout(rng)
    return lambda t: ro(broadcast_to(t, (4, 3, 7))), [x]


def _sample_concat(rng):
    a, b = _rand(rng, 4, 3), _rand(rng, 4, 2)
    ro = fixed_readout(rng)
    return lambda x, y: ro(concat([x, y], axis=1)), [a, b]


def _sample_matmul(rng):
    a, b = _rand(rng, 4, 6), _rand(rng, 6, 3)
    ro = fixed_readout(rng)
    return lambda x, y: ro(matmul(x, y)), [a, b]


def _sample_gather(rng):
    x = _rand(rng, 5, 4)
    idx = np.array([[0, 2, 2], [1, 3, 0]])
    ro = fixed_readout(rng)
    return lambda t: ro(gather_rows(t, idx)), [x]


register("broadcast_to", _sample_broadcast)
register("concat", _sample_concat)
register("matmul", _sample_matmul)
register("gather_rows", _sample_gather)
register("softmax", _sample_unary(lambda x: softmax(x, axis=0)))


def _sample_interp(rng):
    src_c = Tensor(rng.uniform(-1, 1, size=(6, 3)), requires_grad=True)
    src_f = _rand(rng, 6, 4)
    dst = rng.uniform(-1, 1, size=(9, 3))
    d2 = np.sum((dst[:, None, :] - src_c.data[None, :, :]) ** 2, axis=-1)
    idx = np.argsort(d2, axis=1, kind="stable")[:, :3]
    ro = fixed_readout(rng)
    return (lambda c, f: ro(interpolate_nn3(c, f, dst, idx)), [src_c, src_f])


register("interpolate_nn3", _sample_interp)
