"""Small full-batch optimizers over named parameter arrays.

Two flavours: Adam for speed, and gradient descent with backtracking (a step
that raises the loss is undone and the rate halved), which yields a
monotonically non-increasing loss curve for sanity checks.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

Params = dict[str, np.ndarray]
LossAndGrads = Callable[[Params], tuple[float, Params]]


class Adam:
    def __init__(self, params: Params, lr: float = 0.05, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: Params) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1 - b1 ** self.t
        bias2 = 1 - b2 ** self.t
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            self.params[k] -= self.lr * (self.m[k] / bias1) / (
                np.sqrt(self.v[k] / bias2) + self.eps
            )


def minimize_adam(fn: LossAndGrads, params: Params, epochs: int,
                  lr: float = 0.05) -> list[float]:
    opt = Adam(params, lr=lr)
    curve = []
    for _ in range(epochs):
        loss, grads = fn(params)
        curve.append(loss)
        opt.step(grads)
    return curve


def minimize_monotone(fn: LossAndGrads, params: Params, epochs: int,
                      lr: float = 0.5, min_lr: float = 1e-9) -> list[float]:
    """Backtracking gradient descent; the recorded loss curve never rises."""
    loss, grads = fn(params)
    curve = [loss]
    for _ in range(epochs):
        if lr < min_lr:
            break
        backup = {k: v.copy() for k, v in params.items()}
        for k, g in grads.items():
            params[k] -= lr * g
        new_loss, new_grads = fn(params)
        if new_loss > loss:
            for k in params:
                params[k][...] = backup[k]
            lr *= 0.5
            continue
        loss, grads = new_loss, new_grads
        curve.append(loss)
    return curve


def finite_difference_grads(fn: Callable[[Params], float], params: Params,
                            h: float = 1e-5) -> Params:
    """Central-difference gradients, for checking analytic backprop."""
    out = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = fn(params)
            flat[i] = orig - h
            lo = fn(params)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * h)
        out[name] = g
    return out


def relative_grad_error(analytic: Params, numeric: Params) -> float:
    num = 0.0
    den = 0.0
    for k in analytic:
        diff = analytic[k] - numeric[k]
        num += float(np.sum(diff * diff))
        den += float(np.sum(numeric[k] * numeric[k]))
    return (num ** 0.5) / max(den ** 0.5, 1e-12)
