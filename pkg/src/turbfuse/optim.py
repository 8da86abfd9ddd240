"""SGD with momentum plus the finite-difference gradient checker."""

from __future__ import annotations

import numpy as np

from .errors import ContractError, EvaluationError, ShapeError
from .tensor import Tensor, backward, no_grad


class SGD:
    """Momentum SGD with coupled L2 weight decay.

    Update rule per parameter: v <- momentum*v + (grad + wd*param),
    param <- param - lr*v. Momentum buffers mirror parameter shapes.
    """

    def __init__(self, params, lr, momentum=0.0, weight_decay=0.0):
        if lr <= 0:
            raise ContractError("lr must be positive")
        if not 0.0 <= momentum < 1.0:
            raise ContractError("momentum must lie in [0, 1)")
        if weight_decay < 0:
            raise ContractError("weight_decay must be nonnegative")
        if isinstance(params, dict):
            params = list(params.values())
        self.params = list(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.buffers = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        for p, v in zip(self.params, self.buffers):
            if p.grad is None:
                continue
            if p.grad.shape != p.data.shape:
                raise ShapeError("gradient shape does not match parameter")
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v *= self.momentum
            v += g
            p.data -= self.lr * v


def sgd_step(params, grads, state):
    """Functional form of the update used by :class:`SGD`."""
    if len(params) != len(grads) or len(params) != len(state.buffers):
        raise ShapeError("params, grads and buffers must align")
    for p, g, v in zip(params, grads, state.buffers):
        if g.shape != p.data.shape or v.shape != p.data.shape:
            raise ShapeError("gradient/buffer shape does not match parameter")
        gg = g + state.weight_decay * p.data if state.weight_decay else g
        v *= state.momentum
        v += gg
        p.data -= state.lr * v


def finite_diff_check(f, params, eps=1e-5, samples_per_tensor=8, seed=0):
    """Compare analytic gradients of ``f(params)`` with central differences.

    ``f`` must be a deterministic map from the parameter list/dict to a
    scalar Tensor. Coordinates are subsampled per tensor (all coordinates
    when the tensor is small). Returns the max over sampled coordinates of
    |analytic - numeric| / max(1, |numeric|).
    """
    if not 1e-6 <= eps <= 1e-2:
        raise ContractError("eps must lie in [1e-6, 1e-2]")
    plist = list(params.values()) if isinstance(params, dict) else list(params)

    loss = f(params)
    if loss.size != 1:
        raise ContractError("f must return a scalar")
    if not np.isfinite(loss.data).all():
        raise EvaluationError("f returned a non-finite value")
    for p in plist:
        p.zero_grad()
    backward(loss)
    analytic = [None if p.grad is None else p.grad.copy() for p in plist]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, a in zip(plist, analytic):
        if not p.requires_grad:
            continue
        n = p.data.size
        if n <= samples_per_tensor:
            idx = np.arange(n)
        else:
            idx = rng.choice(n, size=samples_per_tensor, replace=False)
        flat = p.data.reshape(-1)
        a_flat = np.zeros(n) if a is None else a.reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            hi_val = float(flat[i])  # realized value after dtype rounding
            with no_grad():
                f_hi = f(params).item()
            flat[i] = orig - eps
            lo_val = float(flat[i])
            with no_grad():
                f_lo = f(params).item()
            flat[i] = orig
            if not (np.isfinite(f_hi) and np.isfinite(f_lo)):
                raise EvaluationError("f returned a non-finite value during probing")
            numeric = (f_hi - f_lo) / (hi_val - lo_val)
            rel = abs(float(a_flat[i]) - numeric) / max(1.0, abs(numeric))
            worst = max(worst, rel)
    return worst
