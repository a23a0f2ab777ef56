"""AdamW with warm-up + cosine learning rate and global-norm clipping."""

from typing import Dict, Tuple

import numpy as np

from maskint.errors import ConfigError


def learning_rate(step: int, total_steps: int, base_lr: float, warmup_steps: int = 0, decay: str = "cosine") -> float:
    """Linear warm-up to ``base_lr``, then cosine decay to zero at ``total_steps``."""
    if step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    if decay == "constant":
        return base_lr
    if decay != "cosine":
        raise ConfigError(f"Unknown learning rate decay {decay!r}")
    progress = (step - warmup_steps) / max(total_steps - warmup_steps, 1)
    return 0.5 * base_lr * (1.0 + np.cos(np.pi * min(progress, 1.0)))


def clip_global_norm(grads: Dict[str, np.ndarray], max_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    norm = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values())))
    if max_norm <= 0 or norm <= max_norm:
        return grads, norm
    factor = max_norm / norm
    return {name: g * factor for name, g in grads.items()}, norm


class AdamW:
    """Adam with decoupled weight decay on matrices (ndim >= 2)."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.99, eps: float = 1e-8, weight_decay: float = 0.01):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.n_steps = 0
        self.first_moment: Dict[str, np.ndarray] = {}
        self.second_moment: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], lr: float) -> None:
        """Update ``params`` in place; parameters without a gradient only decay."""
        self.n_steps += 1
        correction1 = 1.0 - self.beta1**self.n_steps
        correction2 = 1.0 - self.beta2**self.n_steps
        for name, param in params.items():
            grad = grads.get(name)
            grad = np.zeros(param.shape) if grad is None else grad.astype(np.float64)
            m = self.first_moment.get(name, np.zeros(param.shape))
            v = self.second_moment.get(name, np.zeros(param.shape))
            m = self.beta1 * m + (1.0 - self.beta1) * grad
            v = self.beta2 * v + (1.0 - self.beta2) * grad**2
            self.first_moment[name], self.second_moment[name] = m, v

            updated = param.astype(np.float64)
            if param.ndim >= 2:
                updated -= lr * self.weight_decay * updated
            updated -= lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            param[...] = updated
