import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import UsageError


def cosine_lr(step, total_steps, base_lr):
    """Cosine annealing from ``base_lr`` at step 0 down to 0 at ``total_steps``.

    Steps past the end clamp to the final value.
    """
    if total_steps <= 0:
        return 0.0
    step = min(max(step, 0), total_steps)
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class OptimizerState:
    lr: float = 1e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    schedule: str = "constant"
    total_steps: int = 0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def current_lr(self):
        if self.schedule == "cosine":
            return cosine_lr(self.step, self.total_steps, self.lr)
        if self.schedule == "constant":
            return self.lr
        raise UsageError(f"unknown lr schedule {self.schedule!r}")


def adamw_step(params, state):
    """One decoupled-weight-decay Adam update over ``params`` (name -> Tensor).

    The learning rate used is the schedule value at the current step counter,
    so the first update runs at the base rate. Grads are zeroed afterwards.
    Returns the learning rate that was applied.
    """
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise UsageError(f"adamw_step: no gradient for {missing[:5]}{'...' if len(missing) > 5 else ''}")
    lr = state.current_lr()
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = p.grad.astype(p.dtype, copy=False)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if state.weight_decay:
            p.data *= p.dtype.type(1.0 - lr * state.weight_decay)
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= (lr * update).astype(p.dtype)
        p.grad = None
    state.step = t
    return lr


class AdamW:
    def __init__(self, params, lr=1e-4, weight_decay=0.01, schedule="constant", total_steps=0, **kw):
        self.params = dict(params)
        self.state = OptimizerState(lr=lr, weight_decay=weight_decay, schedule=schedule, total_steps=total_steps, **kw)

    def step(self):
        return adamw_step(self.params, self.state)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
