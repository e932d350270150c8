"""Adam with bias correction.

Moment buffers are kept in float64 and the update is computed there, then the
parameter is stored back as float32. lr == 0 therefore leaves parameters
byte-identical no matter how many steps run.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError


def adam_step(param64, grad64, m, v, t, lr, beta1, beta2, eps):
    """One bias-corrected update. All arrays float64, t is the 1-based step."""
    m = beta1 * m + (1.0 - beta1) * grad64
    v = beta2 * v + (1.0 - beta2) * grad64 * grad64
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    new_param = param64 - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_param, m, v


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr < 0.0:
            raise ConfigError(f"adam: negative learning rate {lr}")
        if not (0.0 <= beta1 < 1.0) or not (0.0 <= beta2 < 1.0):
            raise ConfigError(f"adam: betas must lie in [0, 1), got {beta1}, {beta2}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros(p.data.shape, dtype=np.float64) for p in self.params]
        self._v = [np.zeros(p.data.shape, dtype=np.float64) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            new64, self._m[i], self._v[i] = adam_step(
                p.data.astype(np.float64), p.grad.astype(np.float64),
                self._m[i], self._v[i], self.t,
                self.lr, self.beta1, self.beta2, self.eps)
            if self.lr != 0.0:
                p.data = new64.astype(np.float32)
