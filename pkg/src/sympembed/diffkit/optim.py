"""Adam with decoupled weight decay, and the step-decay learning-rate rule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    """First/second moment accumulators for one flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 0.0

    @classmethod
    def zeros(cls, n: int):
        return cls(np.zeros(n), np.zeros(n))


def adam_step(params, grads, state: AdamState, lr, beta1=0.9, beta2=0.999,
              eps=1e-8, weight_decay=0.0):
    """One bias-corrected Adam update, in place on `params`.

    `weight_decay` may be a scalar or a per-entry array (decoupled decay,
    applied directly to the parameters, not folded into the gradient).
    Raises ValueError on non-finite gradients.
    """
    grads = np.asarray(grads)
    if grads.shape != params.shape:
        raise ValueError("gradient shape does not match parameters")
    if not np.all(np.isfinite(grads)):
        raise ValueError("non-finite gradient")
    state.step += 1
    state.lr = lr
    state.m = beta1 * state.m + (1.0 - beta1) * grads
    state.v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = state.m / (1.0 - beta1**state.step)
    v_hat = state.v / (1.0 - beta2**state.step)
    params -= lr * m_hat / (np.sqrt(v_hat) + eps)
    params -= lr * weight_decay * params
    return params


def lr_schedule(epoch: int, base_lr: float, gamma: float = 0.1, step_epochs: int = 1000):
    """Step decay: base_lr * gamma ** floor(epoch / step_epochs)."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return base_lr * gamma ** (epoch // step_epochs)
