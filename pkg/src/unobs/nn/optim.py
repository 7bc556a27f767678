"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DivergenceError, ShapeError


@dataclass
class AdamState:
    n: int
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.n)
        if self.v is None:
            self.v = np.zeros(self.n)


def adam_step(state: AdamState, params, grads):
    """One update. Returns ``(new_params, state)``; ``state`` is advanced in place."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != (state.n,) or grads.shape != (state.n,):
        raise ShapeError(f"adam expects {state.n} params and grads, "
                         f"got {params.shape} and {grads.shape}")
    if not np.all(np.isfinite(grads)):
        raise DivergenceError("non-finite gradient")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps), state
