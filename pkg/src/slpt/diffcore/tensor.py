"""Reverse-mode differentiation substrate.

Tensors wrap numpy arrays and record a tape of op nodes as they are
produced.  Each op supplies its own analytic backward; `backward()` walks
the tape in reverse topological order and accumulates gradients into the
leaves, summing over all paths.  Everything is deterministic: graph
construction order fixes the accumulation order.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np


class ContractViolation(ValueError):
    """An op precondition or usage contract was broken by the caller."""


class NumericalError(RuntimeError):
    """A non-finite value appeared in a forward output or a gradient."""


_state = threading.local()


def default_dtype() -> np.dtype:
    return getattr(_state, "dtype", np.dtype(np.float64))


def set_default_dtype(dtype) -> None:
    """Global precision switch: float64 for test/gradcheck, float32 for training."""
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ContractViolation(f"unsupported dtype {dt}")
    _state.dtype = dt


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default dtype, e.g. ``with precision(np.float32):``."""
    prev = default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


class OpNode:
    """One tape entry: the op id, its inputs, outputs, and saved context.

    `backward_fn(ctx, out_grads)` receives one gradient array per output
    (zeros when an output is unused) and must return one gradient per
    input, with None for inputs that are not differentiable.
    """

    __slots__ = ("op", "inputs", "outputs", "ctx", "backward_fn")

    def __init__(self, op, inputs, ctx, backward_fn):
        self.op = op
        self.inputs = inputs
        self.outputs = []
        self.ctx = ctx
        self.backward_fn = backward_fn


class Tensor:
    """A shaped array of real numbers, optionally attached to the tape."""

    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else default_dtype())
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(default_dtype())
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def make_op(op_name, inputs, out_arrays, ctx, backward_fn):
    """Record an op on the tape and return its output tensors.

    Raises NumericalError (naming the op) if any output is non-finite;
    NaN/Inf anywhere is a hard error by contract.
    """
    for arr in out_arrays:
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"non-finite output of op '{op_name}'")
    node = OpNode(op_name, tuple(inputs), ctx, backward_fn)
    outs = []
    for arr in out_arrays:
        t = Tensor.__new__(Tensor)
        t.data = arr
        t.grad = None
        t.requires_grad = False
        t.node = node
        outs.append(t)
    node.outputs = outs
    return outs


def _toposort(root: Tensor):
    """Iterative post-order over the op nodes reachable from `root`."""
    order = []
    seen = set()
    stack = [(root.node, False)] if root.node is not None else []
    while stack:
        node, expanded = stack.pop()
        if node is None or id(node) in seen:
            continue
        if expanded:
            seen.add(id(node))
            order.append(node)
            continue
        stack.append((node, True))
        for inp in node.inputs:
            if inp.node is not None and id(inp.node) not in seen:
                stack.append((inp.node, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable requires_grad leaf.

    The loss must be scalar and must still hold a live tape.  Gradients sum
    over all paths (shared subexpressions accumulate).  The visited tape is
    cleared afterwards; a second backward through it is an error.
    """
    if loss.data.size != 1:
        raise ContractViolation(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss.node is None and not loss.requires_grad:
        raise ContractViolation("backward() on a tensor with no tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    if loss.requires_grad:
        _accumulate_leaf(loss, grads[id(loss)])

    order = _toposort(loss)
    for node in reversed(order):
        out_grads = []
        for out in node.outputs:
            g = grads.pop(id(out), None)
            out_grads.append(g if g is not None else np.zeros_like(out.data))
        in_grads = node.backward_fn(node.ctx, out_grads)
        if len(in_grads) != len(node.inputs):
            raise ContractViolation(f"op '{node.op}' backward returned wrong arity")
        for inp, g in zip(node.inputs, in_grads):
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient from op '{node.op}'")
            if g.shape != inp.data.shape:
                raise ContractViolation(
                    f"op '{node.op}' grad shape {g.shape} != input shape {inp.data.shape}"
                )
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
            if inp.node is None and inp.requires_grad:
                _accumulate_leaf(inp, g)
        node.ctx = None
        node.backward_fn = None

    # Clear the tape: break tensor->node links so the graph cannot be reused.
    for node in order:
        for out in node.outputs:
            out.node = None
        node.outputs = ()
        node.inputs = ()


def _accumulate_leaf(leaf: Tensor, g: np.ndarray) -> None:
    if leaf.grad is None:
        leaf.grad = g.copy()
    else:
        leaf.grad = leaf.grad + g
