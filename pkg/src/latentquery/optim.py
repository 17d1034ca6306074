"""Adam with linear learning-rate warmup."""
from __future__ import annotations

import numpy as np

from .params import ModelParams


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter {name!r}; step aborted")
        self.param_name = name


def warmup_lr(step: int, peak_lr: float, warmup_steps: int) -> float:
    """Linear ramp from 0 to ``peak_lr`` over ``warmup_steps``, then flat."""
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    if warmup_steps <= 0:
        return peak_lr
    return peak_lr * min(1.0, step / warmup_steps)


class Adam:
    def __init__(self, params: ModelParams, lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, warmup_steps: int = 0):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.warmup_steps = warmup_steps
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.t = 0

    def effective_lr(self, step: int) -> float:
        return warmup_lr(step, self.lr, self.warmup_steps)

    def step(self, grads: dict[str, np.ndarray] | None = None, scale: float = 1.0) -> float:
        """Apply one update from ``grads`` (default: each parameter's ``.grad``).

        Parameters without a gradient are left untouched.  Returns the
        learning rate used.
        """
        if grads is None:
            grads = {k: t.grad for k, t in self.params.items() if t.grad is not None}
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(name)
        self.t += 1
        lr = self.effective_lr(self.t)
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, g in grads.items():
            p = self.params[name].data
            g = g * scale if scale != 1.0 else g
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p -= update.astype(p.dtype, copy=False)
        return lr

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {"t": np.asarray(self.t)}
        for k in self.m:
            out[f"m/{k}"] = self.m[k]
            out[f"v/{k}"] = self.v[k]
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.t = int(state["t"])
        for k in self.m:
            self.m[k] = state[f"m/{k}"].copy()
            self.v[k] = state[f"v/{k}"].copy()
