"""Adam optimizer over a ParamStore."""

from __future__ import annotations

import numpy as np

from .autodiff import ParamStore

__all__ = ["adam_step"]


def adam_step(params: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, step: int | None = None) -> None:
    """One Adam update with bias correction, in place.

    Moment state lives in the ParamStore; `step` defaults to the store's own
    1-based counter. Parameters with no gradient are treated as zero-gradient.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    if step is None:
        params.adam_step_count += 1
        step = params.adam_step_count
    else:
        if step < 1:
            raise ValueError("step must be >= 1")
        params.adam_step_count = step
    b1c = 1.0 - beta1 ** step
    b2c = 1.0 - beta2 ** step
    for name, t in params.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        m = params.adam_m.get(name)
        if m is None:
            m = params.adam_m[name] = np.zeros_like(t.data)
            v = params.adam_v[name] = np.zeros_like(t.data)
        else:
            v = params.adam_v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        t.data -= lr * (m / b1c) / (np.sqrt(v / b2c) + eps)
