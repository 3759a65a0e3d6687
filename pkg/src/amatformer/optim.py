"""Functional Adam with bias correction, plus global-norm gradient clipping.

State is explicit (step count and the two moment lists) so checkpoints can
carry it and a resumed run is bit-identical to an uninterrupted one.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch


@dataclass
class AdamState:
    step: int
    m: list
    v: list


def init_adam_state(values):
    return AdamState(
        step=0,
        m=[np.zeros_like(p) for p in values],
        v=[np.zeros_like(p) for p in values],
    )


def adam_step(values, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One update; returns (new values, new state) without mutating inputs."""
    if not (len(values) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeMismatch("parameter/gradient/state list lengths differ")
    t = state.step + 1
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(values, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeMismatch(f"param {p.shape} vs grad {g.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        new_p.append(p - update)
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(step=t, m=new_m, v=new_v)


def clip_global_norm(grads, max_norm):
    """Scale all gradients down so their joint L2 norm is <= max_norm."""
    total = np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads))
    if total <= max_norm or total == 0.0:
        return list(grads), total
    factor = max_norm / total
    return [g * g.dtype.type(factor) for g in grads], total
