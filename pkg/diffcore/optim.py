"""
First-order optimizers over Parameter lists.
"""
import logging
from typing import Dict, Iterable, List, Optional

import numpy as np

from diffcore.errors import ConfigError, NumericError
from diffcore.tensor import Parameter

logger = logging.getLogger(__name__)


def global_grad_norm(params: Iterable[Parameter]) -> float:
    return float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params)))


def clip_grad_norm(params: List[Parameter], max_norm: Optional[float]) -> float:
    """Rescale grads in place so their joint L2 norm is at most max_norm; returns the norm before clipping"""
    norm = global_grad_norm(params)
    if not np.isfinite(norm):
        raise NumericError(f"gradient norm is {norm}")
    if max_norm and norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        for p in params:
            p.grad = p.grad * factor
    return norm


class Optimizer:
    """Base optimizer: owns a parameter list and updates only the trainable subset it is handed"""

    def __init__(self, params: Iterable[Parameter], lr: float, grad_clip: Optional[float] = None):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.grad_clip = grad_clip

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self, trainable: Optional[Iterable[Parameter]] = None) -> float:
        """
        Apply one update.

        Args:
            trainable: subset to update (None means every parameter); the rest keep their data bit-exactly

        Returns:
            float: global gradient norm of the updated subset before clipping
        """
        selected = self.params if trainable is None else list(trainable)
        norm = clip_grad_norm(selected, self.grad_clip)
        for p in selected:
            self._update(p)
        return norm

    def _update(self, p: Parameter):
        raise NotImplementedError


class SGD(Optimizer):

    def _update(self, p: Parameter):
        p.data = p.data - self.lr * p.grad


class Adam(Optimizer):
    """Adam with bias-corrected moments; per-parameter step counters so frozen phases do not advance them"""

    def __init__(
        self,
        params: Iterable[Parameter],
        lr: float = 1e-2,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        grad_clip: Optional[float] = None,
    ):
        super().__init__(params, lr, grad_clip)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m: Dict[int, np.ndarray] = {}
        self._v: Dict[int, np.ndarray] = {}
        self._t: Dict[int, int] = {}

    def _update(self, p: Parameter):
        key = id(p)
        m = self._m.get(key, np.zeros_like(p.data))
        v = self._v.get(key, np.zeros_like(p.data))
        t = self._t.get(key, 0) + 1
        m = self.beta1 * m + (1 - self.beta1) * p.grad
        v = self.beta2 * v + (1 - self.beta2) * p.grad * p.grad
        m_hat = m / (1 - self.beta1 ** t)
        v_hat = v / (1 - self.beta2 ** t)
        p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        self._m[key], self._v[key], self._t[key] = m, v, t


def create_optimizer(name: str, params: Iterable[Parameter], lr: float, grad_clip: Optional[float] = None) -> Optimizer:
    """Factory keyed by the config's optimizer name"""
    if name == "adam":
        return Adam(params, lr=lr, grad_clip=grad_clip)
    if name == "sgd":
        return SGD(params, lr=lr, grad_clip=grad_clip)
    raise ConfigError(f"unknown optimizer {name!r}")
