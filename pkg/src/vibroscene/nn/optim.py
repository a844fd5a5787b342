"""Adam with bias correction and the step-decay learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BASE_LR = 1e-3
MILESTONES = (20, 50, 100)
DECAY = 0.5


def lr_schedule(epoch: int, base_lr: float = BASE_LR, milestones=MILESTONES, decay: float = DECAY) -> float:
    """Learning rate for a zero-based epoch: ``base_lr`` times ``decay`` per milestone reached."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return base_lr * decay ** sum(epoch >= m for m in milestones)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, lr: float, state: AdamState, grads=None) -> None:
    """One in-place Adam update of every trainable tensor in ``params``.

    ``grads`` maps names to gradients; by default each tensor's ``.grad`` is used.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.trainable():
        g = p.grad if grads is None else grads[name]
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
