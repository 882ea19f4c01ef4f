from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractViolation


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr):
    """Bias-corrected Adam update, in place.

    ``params`` and ``grads`` map names to arrays; moments are created lazily.
    """
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ContractViolation(f"adam: grad shape {g.shape} != param shape {p.shape} for {name!r}")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= (lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(p.dtype)
    return params, state


class Adam:
    """Adam over a dict of named leaf Tensors."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.state = AdamState(beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()

    def grad_norm(self):
        return float(np.sqrt(sum(float((t.grad.astype(np.float64) ** 2).sum()) for t in self.params.values())))

    def step(self, lr, clip_norm=None):
        grads = {k: t.grad for k, t in self.params.items()}
        if clip_norm is not None:
            norm = self.grad_norm()
            if norm > clip_norm:
                grads = {k: g * (clip_norm / norm) for k, g in grads.items()}
        adam_step({k: t.data for k, t in self.params.items()}, grads, self.state, lr)
