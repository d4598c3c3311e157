"""Adam with bias correction, routed through the kernel backend."""

from __future__ import annotations

import numpy as np

from . import backend
from .tensor import Tensor


class AdamState:
    """First/second moment buffers plus a shared step counter."""

    def __init__(self):
        self.m: list[np.ndarray] = []
        self.v: list[np.ndarray] = []
        self.step = 0

    def ensure(self, params):
        if not self.m:
            self.m = [np.zeros(p.size) for p in params]
            self.v = [np.zeros(p.size) for p in params]
        for p, m in zip(params, self.m):
            if p.size != m.size:
                raise ValueError(f"adam state size {m.size} does not match param size {p.size}")


def adam_step(params, grads, state: AdamState, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Apply one Adam update in place; returns (params, state)."""
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params vs {len(grads)} grads")
    state.ensure(params)
    state.step += 1
    for p, g, m, v in zip(params, grads, state.m, state.v):
        pd = p.data if isinstance(p, Tensor) else p
        if not pd.flags["C_CONTIGUOUS"]:
            raise ValueError("adam_step requires C-contiguous parameters")
        gd = np.zeros(pd.size) if g is None else np.ascontiguousarray(
            np.asarray(g, dtype=np.float64).reshape(-1)
        )
        if gd.size != pd.size:
            raise ValueError(f"grad size {gd.size} does not match param size {pd.size}")
        backend.impl.adam_update(pd.reshape(-1), gd, m, v,
                                 state.step, lr, beta1, beta2, eps)
    return params, state


class Adam:
    """Optimizer over a named parameter dict; reads grads off the tensors."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()

    def step(self):
        ts = list(self.params.values())
        adam_step(ts, [t.grad for t in ts], self.state,
                  self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()
