# modules/system/supernet/edges.py
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.constants import EdgeKind, FULL_PRECISION
from core.exceptions import NumericalError, QuantizationError
from modules.system.quantization.main import (
    QuantizerState, quantize_weights, quantize_activations, ste_grad, weight_state,
)
from modules.system.tensor_core.layers import QuantStub

DEFAULT_STATE = QuantizerState(clip_max=1.0)


class CoalitionMask:
    """Контекст оценки коалиции: индексы присутствующих кандидатов на каждом ребре"""

    def __init__(self, present: Dict[Tuple[int, str], Tuple[int, ...]]):
        self.present = present


class CalibrationContext:
    """Полноточный проход с записью входов рёбер активаций"""

    def __init__(self):
        self.records: Dict[Tuple[int, str], List[np.ndarray]] = {}

    def record(self, key: Tuple[int, str], x: np.ndarray) -> None:
        self.records.setdefault(key, []).append(x.copy())


def softmax(alpha: np.ndarray) -> np.ndarray:
    shifted = alpha - np.max(alpha)
    e = np.exp(shifted)
    return e / e.sum()


class _Branches:
    """Вычисление ветви-кандидата и её STE-градиента"""

    kind: str
    overrides: Dict[int, np.ndarray]

    def _branch(self, x: np.ndarray, bit: int, state: QuantizerState) -> np.ndarray:
        if bit in self.overrides:
            noise = self.overrides[bit]
            if noise.shape != x.shape:
                raise QuantizationError(f"Planted branch shape {noise.shape} != {x.shape}")
            return noise
        if self.kind == EdgeKind.WEIGHT.value:
            return quantize_weights(x, bit)
        if bit == FULL_PRECISION:
            return x
        return quantize_activations(x, bit, state)

    def _branch_grad(self, grad: np.ndarray, x: np.ndarray, bit: int,
                     state: QuantizerState) -> np.ndarray:
        if bit in self.overrides:
            return np.zeros_like(grad)
        if self.kind == EdgeKind.WEIGHT.value:
            return ste_grad(grad, x, weight_state(x))
        if bit == FULL_PRECISION:
            return grad
        return ste_grad(grad, x, state)


class MixedEdge(_Branches, QuantStub):
    """Ребро суперсети: все кандидаты разрядности с параметрами alpha"""

    def __init__(self, layer: int, kind: str, candidates: Sequence[int],
                 states: Optional[Sequence[QuantizerState]] = None):
        self.layer = int(layer)
        self.kind = EdgeKind(kind).value
        self.candidates: List[int] = [int(b) for b in candidates]
        self.alpha = np.zeros(len(self.candidates))
        self.alpha_grad = np.zeros(len(self.candidates))
        self.states: List[QuantizerState] = list(states or [DEFAULT_STATE] * len(self.candidates))
        self.overrides: Dict[int, np.ndarray] = {}

    @property
    def key(self) -> Tuple[int, str]:
        return (self.layer, self.kind)

    def mixture_weights(self) -> np.ndarray:
        """softmax(alpha) по всем кандидатам"""
        if not np.all(np.isfinite(self.alpha)):
            raise NumericalError(f"Non-finite alpha on edge {self.key}")
        return softmax(self.alpha)

    def _select(self, context: Any) -> Tuple[Tuple[int, ...], np.ndarray, bool]:
        if isinstance(context, CoalitionMask):
            idx = context.present.get(self.key, ())
            weights = np.full(len(idx), 1.0 / len(idx)) if idx else np.zeros(0)
            return idx, weights, False
        return tuple(range(len(self.candidates))), self.mixture_weights(), True

    def forward(self, x, tape, context=None):
        if isinstance(context, CalibrationContext):
            if self.kind == EdgeKind.ACTIVATION.value:
                context.record(self.key, x)
            tape["bypass"] = True
            return x

        idx, weights, trainable = self._select(context)
        if not idx:
            # пустое ребро -- полная точность
            tape["bypass"] = True
            return x

        branches = [self._branch(x, self.candidates[i], self.states[i]) for i in idx]
        out = weights[0] * branches[0]
        for w, branch in zip(weights[1:], branches[1:]):
            out = out + w * branch
        tape.update(bypass=False, x=x, idx=idx, weights=weights,
                    branches=branches, trainable=trainable)
        return out

    def backward(self, grad, tape):
        if tape.get("bypass", True):
            return grad
        x, idx, weights = tape["x"], tape["idx"], tape["weights"]

        dx = np.zeros_like(grad)
        for w, i in zip(weights, idx):
            dx += w * self._branch_grad(grad, x, self.candidates[i], self.states[i])

        if tape["trainable"]:
            g = np.array([np.sum(grad * branch) for branch in tape["branches"]])
            self.alpha_grad = weights * (g - np.dot(weights, g))
        return dx


class FixedEdge(_Branches, QuantStub):
    """Ребро с одной выбранной разрядностью (после дискретизации)"""

    def __init__(self, kind: str, bit: int, state: QuantizerState = DEFAULT_STATE,
                 override: Optional[np.ndarray] = None):
        self.kind = EdgeKind(kind).value
        self.bit = int(bit)
        self.state = state
        self.overrides = {self.bit: override} if override is not None else {}

    def forward(self, x, tape, context=None):
        tape["x"] = x
        return self._branch(x, self.bit, self.state)

    def backward(self, grad, tape):
        return self._branch_grad(grad, tape["x"], self.bit, self.state)
