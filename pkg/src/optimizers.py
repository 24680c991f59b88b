import numpy as np

from tensor_core import Tensor


class SGDMomentum:
    """Heavy-ball SGD: v <- momentum * v + g; p <- p - lr * v."""

    def __init__(self, lr: float = 0.01, momentum: float = 0.9):
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[str, Tensor] = {}

    def step(self, params: dict[str, Tensor], grads: dict[str, Tensor]) -> None:
        for name, param in params.items():
            g = grads[name]
            if name not in self.velocity:
                self.velocity[name] = np.zeros_like(param)
            v = self.velocity[name]
            v *= self.momentum
            v += g
            param -= (self.lr * v).astype(param.dtype, copy=False)


class Adam:
    def __init__(
        self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, Tensor] = {}
        self.v: dict[str, Tensor] = {}
        self.t = 0

    def step(self, params: dict[str, Tensor], grads: dict[str, Tensor]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, param in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(param)
                self.v[name] = np.zeros_like(param)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            param -= update.astype(param.dtype, copy=False)
