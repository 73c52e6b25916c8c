#! /usr/bin/python3
import math
import numpy as np
from .config import OptimizerConfig
from .tensor import Tensor
from typing import Dict, List, Sequence, Tuple


def cosine_lr(lr0: float, epoch: int, total: int) -> float:
    """Cosine decay from lr0 at epoch 0 to 0 at epoch total"""
    return lr0 * (1.0 + math.cos(math.pi * epoch / total)) / 2.0


class Adam(object):
    """Adam with L2 weight decay folded into the gradient.

Parameters are updated in place.  A parameter with no gradient this
step (not part of the loss graph) is left alone, moments included.

    """
    def __init__(self, params: Sequence[Tuple[str, Tensor]], config: OptimizerConfig):
        self.params = list(params)
        self.lr = config.lr
        self.beta1, self.beta2 = config.betas
        self.eps = config.eps
        self.weight_decay = config.weight_decay
        self.steps: Dict[str, int] = {}
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()

    def step(self) -> List[str]:
        """Apply one update; returns names of the parameters updated"""
        updated = []
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            t = self.steps.get(name, 0) + 1
            self.steps[name] = t
            m = self.m.get(name, np.zeros_like(p.data))
            v = self.v.get(name, np.zeros_like(p.data))
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            mhat = m / (1 - self.beta1 ** t)
            vhat = v / (1 - self.beta2 ** t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
            updated.append(name)
        return updated


def test_cosine_endpoints() -> None:
    assert cosine_lr(1e-4, 0, 30) == 1e-4
    assert abs(cosine_lr(1e-4, 15, 30) - 5e-5) < 1e-18
    assert abs(cosine_lr(1e-4, 30, 30)) < 1e-18
