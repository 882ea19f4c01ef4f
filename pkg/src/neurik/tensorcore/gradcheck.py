import numpy as np

from ..errors import ContractViolation
from .tensor import Tape, Tensor, backward


def grad_check(f, x, h=1e-6):
    """Max relative error between the taped gradient of scalar ``f(x)`` and
    central differences, over every coordinate of ``x``.

    The error per coordinate is |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    if x.dtype != np.float64:
        raise ContractViolation("grad_check requires 64-bit tensors")
    leaf = Tensor(x.data.copy(), requires_grad=True)
    with Tape() as tape:
        y = f(leaf)
        if y.size != 1:
            raise ContractViolation(f"grad_check: f must return a scalar, got shape {y.shape}")
    backward(tape, y)
    analytic = leaf.grad

    probe = Tensor(x.data.copy())
    flat = probe.data.reshape(-1)
    numeric = np.empty(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = flat[i] - orig  # the step actually representable at orig
        fp = f(probe).item()
        flat[i] = orig - h
        down = orig - flat[i]
        fm = f(probe).item()
        flat[i] = orig
        numeric[i] = (fp - fm) / (up + down)
    a = analytic.reshape(-1)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(numeric)))
    return float(np.max(np.abs(a - numeric) / denom)) if a.size else 0.0
