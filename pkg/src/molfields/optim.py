"""Adam and LAMB over a dict of named parameter arrays (updated in place)."""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, params: dict, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def directions(self, grads: dict) -> dict:
        """Advance the moments and return the bias-corrected Adam directions."""
        for k, g in grads.items():
            if not np.isfinite(g).all():
                raise FloatingPointError(f"non-finite gradient for {k!r}")
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        out = {}
        for k in self.params:
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            out[k] = (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
        return out

    def step(self, grads: dict, lr=None):
        lr = self.lr if lr is None else lr
        for k, d in self.directions(grads).items():
            self.params[k] -= lr * d

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state(self, state: dict):
        self.t = int(state["t"])
        self.m = {k: np.array(v, dtype=np.float64) for k, v in state["m"].items()}
        self.v = {k: np.array(v, dtype=np.float64) for k, v in state["v"].items()}


class Lamb(Adam):
    """Adam directions rescaled per tensor by the trust ratio ``|w| / |update|``."""

    def step(self, grads: dict, lr=None):
        lr = self.lr if lr is None else lr
        for k, d in self.directions(grads).items():
            w_norm = np.linalg.norm(self.params[k])
            d_norm = np.linalg.norm(d)
            ratio = w_norm / d_norm if w_norm > 0 and d_norm > 0 else 1.0
            self.params[k] -= lr * ratio * d


def make_optimizer(name: str, params: dict, lr: float):
    if name == "adam":
        return Adam(params, lr=lr)
    if name == "lamb":
        return Lamb(params, lr=lr)
    raise ValueError(f"unknown optimizer {name!r}")
