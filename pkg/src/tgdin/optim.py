"""Adam with classical L2 weight decay folded into the gradient."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .models import ParamVector


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self) -> None:
        if self.m.shape != self.v.shape:
            raise ValueError("m and v shapes differ")
        if self.t < 0:
            raise ValueError("step count must be >= 0")


def init_adam(n_params: int, lr: float, weight_decay: float = 0.0) -> AdamState:
    return AdamState(m=np.zeros(n_params), v=np.zeros(n_params),
                     lr=lr, weight_decay=weight_decay)


def adam_step(params: ParamVector, grads: np.ndarray,
              state: AdamState) -> tuple[ParamVector, AdamState]:
    """One bias-corrected Adam update; returns fresh params and state.

    Weight decay enters as an additive 2*wd*theta gradient term.
    Non-finite gradient entries are rejected.
    """
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.values.shape:
        raise ValueError("gradient shape does not match parameters")
    if not np.all(np.isfinite(grads)):
        raise FloatingPointError("non-finite gradient entries")

    g = grads
    if state.weight_decay != 0.0:
        g = g + 2.0 * state.weight_decay * params.values
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_values = params.values - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return (ParamVector(new_values, params.layout),
            replace(state, m=m, v=v, t=t))


def set_lr(state: AdamState, lr: float) -> AdamState:
    return replace(state, lr=lr)
