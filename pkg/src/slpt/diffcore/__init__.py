from .tensor import (
    ContractViolation,
    NumericalError,
    Tensor,
    as_tensor,
    backward,
    default_dtype,
    make_op,
    precision,
    set_default_dtype,
)
from .params import AdamConfig, ParamEntry, ParamStore
from .gradcheck import check_all_registered, check_registered_op, gradcheck
from . import ops

__all__ = [
    "AdamConfig",
    "ContractViolation",
    "NumericalError",
    "ParamEntry",
    "ParamStore",
    "Tensor",
    "as_tensor",
    "backward",
    "check_all_registered",
    "check_registered_op",
    "default_dtype",
    "gradcheck",
    "make_op",
    "ops",
    "precision",
    "set_default_dtype",
]
