# modules/system/tensor_core/layers.py
from typing import Any, Dict, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

Shape = Tuple[int, ...]


class QuantStub:
    """Слот квантователя. По умолчанию тензор проходит без изменений."""

    def forward(self, x: np.ndarray, tape: Dict[str, Any], context: Any = None) -> np.ndarray:
        return x

    def backward(self, grad: np.ndarray, tape: Dict[str, Any]) -> np.ndarray:
        return grad


class Node:
    """Узел графа"""
    kind = "node"
    quantizable = False

    def __init__(self, name: str):
        self.name = name
        self.in_shape: Shape = ()
        self.out_shape: Shape = ()

    def parameters(self) -> Dict[str, np.ndarray]:
        return {}

    def output_shape(self, in_shape: Shape) -> Shape:
        return in_shape

    def forward(self, x: np.ndarray, tape: Dict[str, Any], context: Any = None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray, tape: Dict[str, Any],
                 grads: Dict[str, np.ndarray]) -> np.ndarray:
        raise NotImplementedError


class QuantizableLayer(Node):
    """Слой с весами: квантуются вход (активации) и веса"""
    quantizable = True

    def __init__(self, name: str, weight: np.ndarray, bias: Optional[np.ndarray]):
        super().__init__(name)
        self.weight = weight
        self.bias = bias
        self.weight_quant: QuantStub = QuantStub()
        self.act_quant: QuantStub = QuantStub()

    @property
    def weight_name(self) -> str:
        return f"{self.name}.weight"

    @property
    def bias_name(self) -> str:
        return f"{self.name}.bias"

    def parameters(self) -> Dict[str, np.ndarray]:
        params = {self.weight_name: self.weight}
        if self.bias is not None:
            params[self.bias_name] = self.bias
        return params

    @property
    def fan_in(self) -> int:
        return int(np.prod(self.weight.shape[1:]))

    def macs(self) -> int:
        """Умножений-сложений на один пример"""
        raise NotImplementedError

    def forward(self, x, tape, context=None):
        act_tape: Dict[str, Any] = {}
        weight_tape: Dict[str, Any] = {}
        xq = self.act_quant.forward(x, act_tape, context)
        wq = self.weight_quant.forward(self.weight, weight_tape, context)
        tape.update(x=xq, w=wq, act=act_tape, weight=weight_tape)
        return self._apply(xq, wq, tape)

    def backward(self, grad, tape, grads):
        dx, dw, db = self._gradients(grad, tape)
        grads[self.weight_name] += self.weight_quant.backward(dw, tape["weight"])
        if self.bias is not None:
            grads[self.bias_name] += db
        return self.act_quant.backward(dx, tape["act"])

    def _apply(self, x, w, tape):
        raise NotImplementedError

    def _gradients(self, grad, tape):
        raise NotImplementedError


class Dense(QuantizableLayer):
    kind = "dense"

    def output_shape(self, in_shape):
        return (self.weight.shape[0],)

    def macs(self) -> int:
        return int(self.weight.shape[0] * self.weight.shape[1])

    def _apply(self, x, w, tape):
        out = x @ w.T
        if self.bias is not None:
            out = out + self.bias
        return out

    def _gradients(self, grad, tape):
        dw = grad.T @ tape["x"]
        dx = grad @ tape["w"]
        db = grad.sum(axis=0) if self.bias is not None else None
        return dx, dw, db


class Conv2D(QuantizableLayer):
    kind = "conv2d"

    def __init__(self, name, weight, bias, stride: int = 1, padding: int = 0):
        super().__init__(name, weight, bias)
        self.stride = int(stride)
        self.padding = int(padding)

    @property
    def kernel(self) -> int:
        return int(self.weight.shape[2])

    def output_shape(self, in_shape):
        _, h, w = in_shape
        k, s, p = self.kernel, self.stride, self.padding
        return (self.weight.shape[0], (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)

    def macs(self) -> int:
        out_c, in_c, k, _ = self.weight.shape
        _, oh, ow = self.out_shape
        return int(out_c * oh * ow * in_c * k * k)

    def _apply(self, x, w, tape):
        p, s, k = self.padding, self.stride, self.kernel
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        tape.update(xp_shape=xp.shape, windows=windows, in_hw=x.shape[2:])
        out = np.einsum("nchwij,ocij->nohw", windows, w, optimize=True)
        if self.bias is not None:
            out = out + self.bias[None, :, None, None]
        return out

    def _gradients(self, grad, tape):
        p, s, k = self.padding, self.stride, self.kernel
        w = tape["w"]
        windows = tape["windows"]
        dw = np.einsum("nchwij,nohw->ocij", windows, grad, optimize=True)
        db = grad.sum(axis=(0, 2, 3)) if self.bias is not None else None

        oh, ow = grad.shape[2:]
        dxp = np.zeros(tape["xp_shape"])
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * oh:s, j:j + s * ow:s] += np.einsum(
                    "nohw,oc->nchw", grad, w[:, :, i, j], optimize=True)
        h, wd = tape["in_hw"]
        dx = dxp[:, :, p:p + h, p:p + wd]
        return dx, dw, db


class ReLU(Node):
    kind = "relu"

    def forward(self, x, tape, context=None):
        mask = x > 0
        tape["mask"] = mask
        return x * mask

    def backward(self, grad, tape, grads):
        return grad * tape["mask"]


class Flatten(Node):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, tape, context=None):
        tape["shape"] = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad, tape, grads):
        return grad.reshape(tape["shape"])


class SoftmaxCrossEntropy:
    """Средняя кросс-энтропия по батчу, умноженная на scale"""
    kind = "cross_entropy"

    def __init__(self, scale: float = 1.0):
        self.scale = float(scale)

    def __call__(self, logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
        labels = np.asarray(labels, dtype=np.int64)
        n = logits.shape[0]
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        loss = -log_probs[np.arange(n), labels].mean() * self.scale
        grad = np.exp(log_probs)
        grad[np.arange(n), labels] -= 1.0
        return float(loss), grad * (self.scale / n)


class ConstantLoss:
    """Потеря, не зависящая от выхода сети"""
    kind = "constant"

    def __init__(self, value: float = 0.0):
        self.value = float(value)

    def __call__(self, logits, labels):
        return self.value, np.zeros_like(logits)
