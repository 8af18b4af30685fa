"""Parameter initialization and the RMSProp update rule."""

from __future__ import annotations

import math

import numpy as np

from .rng import Rng
from .tensor import Tensor


def xavier_init(shape, fan_in: int, fan_out: int, rng: Rng, dtype=np.float32,
                requires_grad: bool = True) -> Tensor:
    """Uniform Xavier/Glorot init on [-sqrt(6/(fan_in+fan_out)), +bound]."""
    if fan_in <= 0 or fan_out <= 0:
        raise ValueError("xavier_init: fans must be positive")
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    data = rng.uniform(-bound, bound, shape, dtype=dtype)
    return Tensor(data, requires_grad=requires_grad)


class RMSProp:
    """p -= lr * g / (sqrt(v) + eps) with v <- rho*v + (1-rho)*g^2."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-5,
                 rho: float = 0.99, eps: float = 1e-8):
        if not 0.0 < rho < 1.0:
            raise ValueError("RMSProp: rho must be in (0, 1)")
        if lr < 0:
            raise ValueError("RMSProp: lr must be non-negative")
        self.params = params
        self.lr = lr
        self.rho = rho
        self.eps = eps
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self):
        for name in sorted(self.params):
            p = self.params[name]
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ValueError(f"RMSProp: grad shape mismatch for {name}")
            v = self.v[name]
            v *= self.rho
            v += (1.0 - self.rho) * g * g
            p.data -= self.lr * g / (np.sqrt(v) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


def rmsprop_step(params, grads, v, lr: float, rho: float, eps: float):
    """Functional single step on plain arrays; returns (new_params, new_v)."""
    if not 0.0 < rho < 1.0:
        raise ValueError("rmsprop_step: rho must be in (0, 1)")
    new_params, new_v = [], []
    for p, g in zip(params, grads):
        p = np.asarray(p)
        g = np.asarray(g)
        if p.shape != g.shape:
            raise ValueError("rmsprop_step: shape mismatch")
    for p, g, vi in zip(params, grads, v):
        vn = rho * np.asarray(vi) + (1.0 - rho) * np.asarray(g) ** 2
        pn = np.asarray(p) - lr * np.asarray(g) / (np.sqrt(vn) + eps)
        new_params.append(pn)
        new_v.append(vn)
    return new_params, new_v
