"""Parameterized layers and the Adam optimizer.

Weights are drawn uniform in [-sqrt(1/fan_in), sqrt(1/fan_in)] from the
run's Rng, in layer construction order; biases and norm offsets start at
zero, norm gains at one. Construction order therefore fixes the draw
sequence, which is what makes a seed reproduce a model bit-for-bit.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .rng import Rng
from .tensor import Tensor


def _weight(rng: Rng, shape, fan_in: int) -> Tensor:
    limit = math.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(shape, -limit, limit), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Linear:
    def __init__(self, rng: Rng, d_in: int, d_out: int, bias: bool = True, name: str = "linear"):
        self.name = name
        self.w = _weight(rng, (d_in, d_out), d_in)
        self.b = _zeros(d_out) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.w)
        return y if self.b is None else T.add(y, self.b)

    def parameters(self):
        out = [(self.name + ".w", self.w)]
        if self.b is not None:
            out.append((self.name + ".b", self.b))
        return out


class Conv2d:
    def __init__(
        self,
        rng: Rng,
        c_in: int,
        c_out: int,
        k: int,
        stride: int = 1,
        padding: int = 0,
        bias: bool = True,
        name: str = "conv",
    ):
        self.name = name
        self.stride = stride
        self.padding = padding
        self.w = _weight(rng, (c_out, c_in, k, k), c_in * k * k)
        self.b = _zeros(c_out) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.w, self.b, self.stride, self.padding)

    def parameters(self):
        out = [(self.name + ".w", self.w)]
        if self.b is not None:
            out.append((self.name + ".b", self.b))
        return out


class ConvTranspose2d:
    def __init__(
        self,
        rng: Rng,
        c_in: int,
        c_out: int,
        k: int,
        stride: int = 1,
        padding: int = 0,
        bias: bool = True,
        name: str = "deconv",
    ):
        self.name = name
        self.stride = stride
        self.padding = padding
        self.w = _weight(rng, (c_in, c_out, k, k), c_in * k * k)
        self.b = _zeros(c_out) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.deconv2d(x, self.w, self.b, self.stride, self.padding)

    def parameters(self):
        out = [(self.name + ".w", self.w)]
        if self.b is not None:
            out.append((self.name + ".b", self.b))
        return out


class BatchNorm2d:
    def __init__(self, c: int, momentum: float = 0.1, eps: float = 1e-5, name: str = "bn"):
        self.name = name
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(c), requires_grad=True)
        self.beta = _zeros(c)
        self.running_mean = np.zeros(c)
        self.running_var = np.ones(c)
        self.batches = 0

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        out, self.running_mean, self.running_var, self.batches = T.batch_norm(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            self.batches,
            self.momentum,
            self.eps,
            train,
        )
        return out

    def parameters(self):
        return [(self.name + ".gamma", self.gamma), (self.name + ".beta", self.beta)]

    def buffers(self):
        return [
            (self.name + ".running_mean", self.running_mean),
            (self.name + ".running_var", self.running_var),
            (self.name + ".batches", np.array([float(self.batches)])),
        ]

    def load_buffers(self, values: dict):
        self.running_mean = values[self.name + ".running_mean"].copy()
        self.running_var = values[self.name + ".running_var"].copy()
        self.batches = int(values[self.name + ".batches"][0])


class LayerNorm:
    def __init__(self, d: int, eps: float = 1e-5, name: str = "ln"):
        self.name = name
        self.eps = eps
        self.gamma = Tensor(np.ones(d), requires_grad=True)
        self.beta = _zeros(d)

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)

    def parameters(self):
        return [(self.name + ".gamma", self.gamma), (self.name + ".beta", self.beta)]


class Adam:
    """Adam with bias correction; eps sits outside the square root."""

    def __init__(
        self,
        params: list[Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (self.m[i] / b1c) / (np.sqrt(self.v[i] / b2c) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
