# modules/system/quantization/main.py
import logging
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from core.constants import FULL_PRECISION, MIN_BITS, MAX_BITS
from core.exceptions import QuantizationError
from core.module_api import ModuleInterface, ModuleMetadata

logger = logging.getLogger('quantization')

CALIBRATION_PERCENTILE = 99.9


@dataclass(frozen=True)
class QuantizerState:
    """Диапазон квантователя.

    clip_max -- верхняя граница сетки активаций; per_tensor_scale -- диапазон
    весов (по умолчанию совпадает с clip_max). signed=True означает
    симметричную сетку на [-clip_max, clip_max].
    """
    clip_max: float
    per_tensor_scale: Optional[float] = None
    signed: bool = False

    def __post_init__(self):
        if not np.isfinite(self.clip_max) or self.clip_max <= 0:
            raise QuantizationError(f"clip_max must be positive, got {self.clip_max}")
        if self.per_tensor_scale is None:
            object.__setattr__(self, "per_tensor_scale", float(self.clip_max))
        elif self.per_tensor_scale <= 0:
            raise QuantizationError(
                f"per_tensor_scale must be positive, got {self.per_tensor_scale}")


def check_bits(bits: int) -> int:
    """Проверка разрядности"""
    if isinstance(bits, bool) or int(bits) != bits or not MIN_BITS <= bits <= MAX_BITS:
        raise QuantizationError(f"bit-width must be an integer in [{MIN_BITS}, {MAX_BITS}], got {bits}")
    return int(bits)


def _symmetric_grid(x: np.ndarray, scale: float, bits: int) -> np.ndarray:
    levels = 2 ** bits - 1
    # np.rint округляет половины к чётному; сетки и тесты на это рассчитаны
    k = np.rint((x + scale) / (2.0 * scale) * levels)
    return -scale + 2.0 * scale * k / levels


def quantize_weights(w: np.ndarray, bits: int) -> np.ndarray:
    """Симметричное равномерное квантование с масштабом max|w|"""
    bits = check_bits(bits)
    w = np.asarray(w, dtype=np.float64)
    if bits == FULL_PRECISION:
        return w.copy()
    scale = float(np.max(np.abs(w))) if w.size else 0.0
    if scale == 0.0:
        return np.zeros_like(w)
    return _symmetric_grid(w, scale, bits)


def weight_state(w: np.ndarray) -> QuantizerState:
    """Состояние весового квантователя: диапазон [-max|w|, max|w|]"""
    scale = float(np.max(np.abs(w))) if np.size(w) else 0.0
    return QuantizerState(clip_max=scale if scale > 0 else 1.0, signed=True)


def quantize_activations(a: np.ndarray, bits: int, state: QuantizerState) -> np.ndarray:
    """Равномерное квантование активаций с насыщением на clip_max"""
    bits = check_bits(bits)
    a = np.asarray(a, dtype=np.float64)
    c = state.clip_max
    lower = -c if state.signed else 0.0
    clipped = np.clip(a, lower, c)
    if bits == FULL_PRECISION:
        return clipped
    if state.signed:
        return _symmetric_grid(clipped, c, bits)
    levels = 2 ** bits - 1
    return np.rint(clipped / c * levels) * c / levels


def ste_grad(upstream: np.ndarray, input: np.ndarray, state: QuantizerState) -> np.ndarray:
    """Straight-through: градиент проходит внутри диапазона и обнуляется снаружи"""
    upstream = np.asarray(upstream, dtype=np.float64)
    x = np.asarray(input)
    if upstream.shape != x.shape:
        raise QuantizationError(f"Shape mismatch: {upstream.shape} vs {x.shape}")
    lower = -state.clip_max if state.signed else 0.0
    mask = (x >= lower) & (x <= state.clip_max)
    return upstream * mask


def calibrate_clip(activations: Iterable[np.ndarray],
                   percentile: float = CALIBRATION_PERCENTILE) -> QuantizerState:
    """clip_max = перцентиль модулей наблюдаемых активаций"""
    chunks = [np.asarray(a, dtype=np.float64).ravel() for a in activations]
    chunks = [c for c in chunks if c.size]
    if not chunks:
        raise QuantizationError("Empty calibration stream")
    values = np.concatenate(chunks)
    signed = bool(np.any(values < 0))
    clip = float(np.percentile(np.abs(values), percentile))
    if clip <= 0.0:
        logger.warning("Calibration observed only zeros, falling back to clip_max=1.0")
        clip = 1.0
    return QuantizerState(clip_max=clip, signed=signed)


class QuantizationModule(ModuleInterface):
    def setup(self, kernel):
        self.kernel = kernel
        self.metadata = ModuleMetadata(
            name="system.quantization",
            version="1.0.0",
            description="Равномерные fake-квантователи и STE",
            dependencies=["system.tensor_core"]
        )
        return self
