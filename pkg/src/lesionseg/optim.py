"""Adam updates, cosine-annealing-with-warm-restarts schedule, snapshots."""

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import NonFiniteGradientError


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def init_adam(params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    state = AdamState(lr=float(lr), beta1=beta1, beta2=beta2, eps=eps)
    state.m = [np.zeros(p.data.shape) for p in params]
    state.v = [np.zeros(p.data.shape) for p in params]
    return state


def adam_step(params, state):
    """One Adam update in-place; moments kept in float64."""
    state.step_count += 1
    bc1 = 1.0 - state.beta1 ** state.step_count
    bc2 = 1.0 - state.beta2 ** state.step_count
    for p, m, v in zip(params, state.m, state.v):
        if p.grad is None:
            raise NonFiniteGradientError("parameter has no gradient; run backward first")
        g = p.grad.astype(np.float64, copy=False)
        if not np.isfinite(g).all():
            raise NonFiniteGradientError("non-finite gradient encountered")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.data -= update.astype(p.data.dtype)


@dataclass
class SgdrSchedule:
    eta_max: float
    eta_min: float = 0.0
    t0: int = 50
    t_mult: int = 1

    def __post_init__(self):
        if self.eta_max < self.eta_min or self.eta_min < 0:
            raise ValueError("need eta_max >= eta_min >= 0")
        if self.t0 < 1 or self.t_mult < 1:
            raise ValueError("need t0 >= 1 and t_mult >= 1")


def lr_at(schedule, epoch):
    """Learning rate after `epoch` elapsed epochs (0 = start of first cycle)."""
    t = float(epoch)
    if t < 0:
        raise ValueError("epoch must be >= 0")
    ti = float(schedule.t0)
    while t >= ti:
        t -= ti
        ti *= schedule.t_mult
    span = schedule.eta_max - schedule.eta_min
    return schedule.eta_min + 0.5 * span * (1.0 + math.cos(math.pi * t / ti))


@dataclass
class Snapshot:
    epoch: int
    parameters: dict  # name -> ndarray (deep copies)


def capture_snapshot(model, epoch, at_epochs):
    """Deep-copy the parameters iff this epoch is in the capture set."""
    if epoch not in at_epochs:
        return None
    return Snapshot(epoch=int(epoch), parameters=model.state_dict())
