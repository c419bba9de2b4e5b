"""SGD with momentum and Adam, updating parameter arrays in place."""

import numpy as np


class SGD:
    def __init__(self, params, lr=0.01, momentum=0.9):
        self.lr, self.momentum = lr, momentum
        self.state = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        # v <- mu v + g ; p <- p - lr v
        for p, g, v in zip(params, grads, self.state):
            v *= self.momentum
            v += g
            p -= self.lr * v


class Adam:
    def __init__(self, params, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    @property
    def state(self):
        return self.m + self.v

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def make_optimizer(kind, params, lr):
    if kind == "sgd":
        return SGD(params, lr=lr, momentum=0.9)
    if kind == "adam":
        return Adam(params, lr=lr)
    raise ValueError(f"unknown optimizer {kind!r}")
