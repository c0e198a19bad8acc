"""Central-difference gradient checking.

The checker compares analytic gradients from the tape against
(f(x+h) - f(x-h)) / 2h, reporting per-input max relative error
|analytic - numeric| / max(1, |analytic|).
"""

from __future__ import annotations

import numpy as np

from .ops import REGISTRY
from .tensor import ContractViolation, Tensor, backward


def gradcheck(fn, inputs, h: float = 1e-5, max_elements: int | None = None,
              seed: int = 0) -> list[float]:
    """Max relative gradient error of `fn(*inputs)` per input tensor.

    `fn` must build a scalar from the given tensors and be deterministic
    across calls.  Large inputs can be subsampled: at most `max_elements`
    entries per tensor are probed, chosen by a seeded generator.
    """
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.grad = None

    out = fn(*inputs)
    if out.data.size != 1:
        raise ContractViolation("gradcheck target must be scalar")
    base = float(out.data.reshape(()))
    backward(out)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in inputs]

    rng = np.random.default_rng(seed)
    errors = []
    for k, t in enumerate(inputs):
        n = t.data.size
        if max_elements is not None and n > max_elements:
            elems = np.sort(rng.choice(n, size=max_elements, replace=False))
        else:
            elems = np.arange(n)
        flat = t.data.reshape(-1)
        worst = 0.0
        for j in elems:
            orig = flat[j]
            flat[j] = orig + h
            fp = float(fn(*inputs).data.reshape(()))
            flat[j] = orig - h
            fm = float(fn(*inputs).data.reshape(()))
            flat[j] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = float(analytic[k].reshape(-1)[j])
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
        errors.append(worst)

    # Determinism guard: re-evaluating at the base point must reproduce it.
    if float(fn(*inputs).data.reshape(())) != base:
        raise ContractViolation("gradcheck target is not deterministic")
    return errors


def check_registered_op(name: str, seed: int = 0, h: float = 1e-5) -> float:
    """Gradcheck one registered op on a seeded random instance."""
    spec = REGISTRY[name]
    fn, inputs = spec.sampler(np.random.default_rng(seed))
    return max(gradcheck(fn, inputs, h=h))


def check_all_registered(seeds=range(3), h: float = 1e-5) -> dict[str, float]:
    """Max gradcheck error per registered op across several seeded draws."""
    return {
        name: max(check_registered_op(name, seed=s, h=h) for s in seeds)
        for name in sorted(REGISTRY)
    }
