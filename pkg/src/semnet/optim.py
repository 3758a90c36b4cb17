"""SGD with momentum and decoupled-from-nothing classic weight decay."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class SGD:
    """v <- momentum*v + (grad + weight_decay*param); param <- param - lr*v.

    One zero-initialised velocity buffer per parameter. Parameters whose
    grad is None (unused in the last backward pass) are left untouched.
    """

    def __init__(self, params: list[Tensor], lr: float,
                 momentum: float = 0.9, weight_decay: float = 1e-4):
        self.params = list(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.velocities = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        mu = self.momentum
        wd = self.weight_decay
        for p, v in zip(self.params, self.velocities):
            if p.grad is None:
                continue
            dt = p.data.dtype.type
            if wd:
                grad = p.grad + dt(wd) * p.data
            else:
                grad = p.grad
            v *= dt(mu)
            v += grad
            p.data -= dt(self.lr) * v

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class MultiStepSchedule:
    """Piecewise-constant learning rate, multiplied by ``decay`` at each
    milestone epoch."""

    def __init__(self, initial_lr: float, milestones: tuple[int, ...], decay: float = 0.1):
        self.initial_lr = float(initial_lr)
        self.milestones = tuple(sorted(milestones))
        self.decay = float(decay)

    def lr_at(self, epoch: int) -> float:
        drops = sum(1 for m in self.milestones if epoch >= m)
        return self.initial_lr * self.decay**drops
