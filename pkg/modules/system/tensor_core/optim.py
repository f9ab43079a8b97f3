# modules/system/tensor_core/optim.py
import math
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from core.constants import OptimizerKind, LrSchedule
from core.exceptions import ConfigError


@dataclass(frozen=True)
class TrainConfig:
    """Параметры обучения весов"""
    learning_rate: float = 0.01
    batch_size: int = 32
    epochs: int = 1
    optimizer: str = OptimizerKind.SGD.value
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_schedule: str = LrSchedule.CONSTANT.value

    def __post_init__(self):
        # lr = 0 допустим: веса остаются неизменными
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.optimizer not in [k.value for k in OptimizerKind]:
            raise ConfigError(f"Unknown optimizer: {self.optimizer!r}")
        if self.lr_schedule not in [s.value for s in LrSchedule]:
            raise ConfigError(f"Unknown lr_schedule: {self.lr_schedule!r}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def lr_at(self, epoch: int) -> float:
        if self.lr_schedule == LrSchedule.COSINE.value:
            return cosine_lr(self.learning_rate, epoch, self.epochs)
        return self.learning_rate


def cosine_lr(base_lr: float, epoch: int, epochs: int) -> float:
    """Косинусное затухание от base_lr к нулю за epochs эпох"""
    if epochs <= 0:
        return base_lr
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * min(epoch, epochs) / epochs))


class Optimizer:
    """Обновление словаря параметров на месте"""

    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
             lr: Optional[float] = None) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    def step(self, params, grads, lr=None):
        rate = self.learning_rate if lr is None else lr
        for name, value in params.items():
            value -= rate * grads[name]


class Adam(Optimizer):
    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        super().__init__(learning_rate)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m: Dict[str, np.ndarray] = {}
        self._v: Dict[str, np.ndarray] = {}
        self._t = 0

    def step(self, params, grads, lr=None):
        rate = self.learning_rate if lr is None else lr
        self._t += 1
        bias1 = 1.0 - self.beta1 ** self._t
        bias2 = 1.0 - self.beta2 ** self._t
        for name, value in params.items():
            g = grads[name]
            m = self._m.setdefault(name, np.zeros_like(value))
            v = self._v.setdefault(name, np.zeros_like(value))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            value -= rate * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


def make_optimizer(cfg: TrainConfig, learning_rate: Optional[float] = None) -> Optimizer:
    rate = cfg.learning_rate if learning_rate is None else learning_rate
    if cfg.optimizer == OptimizerKind.ADAM.value:
        return Adam(rate, cfg.beta1, cfg.beta2, cfg.eps)
    return SGD(rate)


def optimizer_step(graph, optimizer: Optimizer, lr: Optional[float] = None) -> Dict[str, np.ndarray]:
    """Шаг оптимизатора по параметрам графа"""
    optimizer.step(graph.params, graph.grads, lr)
    return graph.params
