"""First-moment/second-moment optimizers and the cyclic cosine schedule.

Both optimizer modes share the moment recurrences m, v with
betas (0.5, 0.999). The rectified mode warms up by tracking the
approximated SMA length rho_t and falls back to a plain momentum step
while rho_t <= 4 (always the case at step 1), switching to the
variance-rectified adaptive step once rho_t exceeds 4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from relight.autodiff import Tensor


@dataclass(frozen=True)
class LrSchedule:
    """Cosine annealing restarted every `cycle_epochs` epochs."""

    lr_max: float = 1e-3
    lr_min: float = 1e-4
    cycle_epochs: int = 20

    def __post_init__(self):
        if self.cycle_epochs < 1:
            raise ValueError(f"cycle_epochs must be >= 1, got {self.cycle_epochs}")
        if not 0.0 <= self.lr_min <= self.lr_max:
            raise ValueError(f"need 0 <= lr_min <= lr_max, got {self.lr_min}, {self.lr_max}")


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    """Learning rate at an (integer) epoch; restarts at lr_max each cycle."""
    phase = (epoch % schedule.cycle_epochs) / schedule.cycle_epochs
    return schedule.lr_min + 0.5 * (schedule.lr_max - schedule.lr_min) * (
        1.0 + math.cos(math.pi * phase))


class MomentOptimizer:
    """Adam-style optimizer over a name -> Tensor parameter dict.

    rectified=False: bias-corrected adaptive steps from step 1.
    rectified=True: variance rectification; non-adaptive momentum steps
    until the rectification term is defined (rho_t > 4).
    """

    def __init__(self, params: dict, lr: float = 1e-3,
                 betas: tuple = (0.5, 0.999), eps: float = 1e-8,
                 rectified: bool = False):
        if not params:
            raise ValueError("no parameters to optimize")
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.rectified = bool(rectified)
        self.t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._rho_inf = 2.0 / (1.0 - self.beta2) - 1.0

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float | None = None):
        """One update over all parameters with a non-None gradient."""
        step_lr = self.lr if lr is None else float(lr)
        self.t += 1
        t = self.t
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        if self.rectified:
            rho = self._rho_inf - 2.0 * t * self.beta2 ** t / bc2
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in parameter '{name}'")
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / bc1
            if not self.rectified:
                p.data -= step_lr * m_hat / (np.sqrt(v / bc2) + self.eps)
            elif rho > 4.0:
                rect = math.sqrt(
                    ((rho - 4.0) * (rho - 2.0) * self._rho_inf)
                    / ((self._rho_inf - 4.0) * (self._rho_inf - 2.0) * rho))
                p.data -= step_lr * rect * m_hat / (np.sqrt(v / bc2) + self.eps)
            else:
                p.data -= step_lr * m_hat

    def state_tensors(self) -> dict:
        """Moment buffers as plain arrays, for checkpointing."""
        out = {}
        for name in self.params:
            out[f"m.{name}"] = self._m[name]
            out[f"v.{name}"] = self._v[name]
        return out
