"""Named parameter store with per-entry Adam state."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractViolation, NumericalError, Tensor, default_dtype


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class ParamEntry:
    value: Tensor
    m: np.ndarray
    v: np.ndarray
    t: int = 0


@dataclass
class ParamStore:
    params: dict[str, ParamEntry] = field(default_factory=dict)

    def create(self, name: str, array) -> Tensor:
        if name in self.params:
            raise ContractViolation(f"duplicate parameter name '{name}'")
        t = Tensor(np.asarray(array), requires_grad=True)
        self.params[name] = ParamEntry(t, np.zeros_like(t.data), np.zeros_like(t.data))
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name].value

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def tensors(self) -> list[Tensor]:
        return [e.value for e in self.params.values()]

    def zero_grads(self) -> None:
        for e in self.params.values():
            e.value.grad = None

    def adam_step(self, cfg: AdamConfig = AdamConfig()) -> None:
        """Bias-corrected Adam update; gradients are consumed and zeroed."""
        for name, e in self.params.items():
            g = e.value.grad
            if g is None:
                raise ContractViolation(f"parameter '{name}' has no gradient")
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient for parameter '{name}'")
            e.t += 1
            e.m = cfg.beta1 * e.m + (1.0 - cfg.beta1) * g
            e.v = cfg.beta2 * e.v + (1.0 - cfg.beta2) * (g * g)
            m_hat = e.m / (1.0 - cfg.beta1 ** e.t)
            v_hat = e.v / (1.0 - cfg.beta2 ** e.t)
            e.value.data = e.value.data - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
            e.value.grad = None

    def set_step(self, t: int) -> None:
        """Restore the shared step count after loading optimizer state."""
        for e in self.params.values():
            e.t = t

    def state_arrays(self, include_optimizer: bool = False) -> dict[str, np.ndarray]:
        """Flat name -> array view of the store, f32, checkpoint order."""
        out: dict[str, np.ndarray] = {}
        for name, e in self.params.items():
            out[name] = e.value.data.astype(np.float32)
        if include_optimizer:
            for name, e in self.params.items():
                out[name + "/m"] = e.m.astype(np.float32)
                out[name + "/v"] = e.v.astype(np.float32)
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        dt = default_dtype()
        for name, e in self.params.items():
            if name not in arrays:
                raise ContractViolation(f"checkpoint is missing parameter '{name}'")
            arr = arrays[name]
            if tuple(arr.shape) != tuple(e.value.data.shape):
                raise ContractViolation(
                    f"checkpoint shape {arr.shape} != parameter shape "
                    f"{e.value.data.shape} for '{name}'")
            e.value.data = arr.astype(dt)
            if name + "/m" in arrays:
                e.m = arrays[name + "/m"].astype(dt)
            if name + "/v" in arrays:
                e.v = arrays[name + "/v"].astype(dt)
