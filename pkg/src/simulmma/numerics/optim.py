"""Adam with an inverse-square-root warmup schedule and global-norm clipping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


def inverse_sqrt_lr(step: int, peak_lr: float, warmup: int) -> float:
    """Linear warmup to ``peak_lr`` then decay proportional to 1/sqrt(step)."""
    step = max(step, 1)
    if step <= warmup:
        return peak_lr * step / warmup
    return peak_lr * np.sqrt(warmup / step)


@dataclass
class Adam:
    params: dict[str, Tensor]
    lr: float = 3e-3
    warmup: int = 100
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    clip_norm: float = 10.0
    step_count: int = 0

    def __post_init__(self):
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grad_norm(self) -> float:
        sq = sum(float((p.grad * p.grad).sum()) for p in self.params.values() if p.grad is not None)
        return float(np.sqrt(sq))

    def step(self) -> float:
        self.step_count += 1
        norm = self.grad_norm()
        clip = self.clip_norm / norm if norm > self.clip_norm else 1.0
        lr = inverse_sqrt_lr(self.step_count, self.lr, self.warmup)
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad * clip
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            p.data = p.data - lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
        return lr
