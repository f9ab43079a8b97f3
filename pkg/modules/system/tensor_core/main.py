# modules/system/tensor_core/main.py
import copy
import logging
import threading
from collections import OrderedDict
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from core.exceptions import GraphError, NumericalError, CheckpointError
from core.module_api import ModuleInterface, ModuleMetadata
from modules.system.tensor_core.layers import (
    Node, QuantizableLayer, Dense, Conv2D, ReLU, Flatten,
    SoftmaxCrossEntropy, ConstantLoss, Shape,
)

logger = logging.getLogger('tensor_core')


class ComputeGraph:
    """Последовательный граф с реестром параметров и градиентов.

    Кэш активаций хранится в thread-local, поэтому прямой проход по
    замороженному графу можно выполнять из нескольких потоков.
    """

    def __init__(self, nodes: List[Node], input_shape: Shape, loss=None):
        self.nodes = nodes
        self.input_shape = tuple(input_shape)
        self.loss = loss if loss is not None else SoftmaxCrossEntropy()
        self.params: Dict[str, np.ndarray] = OrderedDict()
        for node in nodes:
            for name, value in node.parameters().items():
                self.params[name] = value
        self.grads: Dict[str, np.ndarray] = OrderedDict(
            (name, np.zeros_like(value)) for name, value in self.params.items())
        self._local = threading.local()

    def __deepcopy__(self, memo):
        cls = self.__class__
        clone = cls.__new__(cls)
        memo[id(self)] = clone
        for key, value in self.__dict__.items():
            if key == "_local":
                continue
            setattr(clone, key, copy.deepcopy(value, memo))
        clone._local = threading.local()
        return clone

    def copy(self) -> "ComputeGraph":
        return copy.deepcopy(self)

    @property
    def quantizable_layers(self) -> List[QuantizableLayer]:
        return [node for node in self.nodes if node.quantizable]

    @property
    def output_size(self) -> int:
        return int(np.prod(self.nodes[-1].out_shape))

    def zero_grad(self) -> None:
        for grad in self.grads.values():
            grad.fill(0.0)

    def state_dict(self) -> Dict[str, np.ndarray]:
        return OrderedDict((name, value.copy()) for name, value in self.params.items())

    def load_state(self, arrays: Dict[str, np.ndarray]) -> None:
        """Загрузка параметров на месте; набор имён и формы должны совпадать"""
        missing = [name for name in self.params if name not in arrays]
        if missing:
            raise CheckpointError(f"Checkpoint lacks parameters: {missing}")
        for name, value in self.params.items():
            incoming = np.asarray(arrays[name], dtype=np.float64)
            if incoming.shape != value.shape:
                raise CheckpointError(
                    f"Shape mismatch for '{name}': {incoming.shape} != {value.shape}")
            value[...] = incoming

    def fingerprint(self) -> bytes:
        """Байтовый слепок всех параметров (для проверки заморозки)"""
        return b"".join(value.tobytes() for value in self.params.values())


def mlp_spec(sizes: Sequence[int], bias: bool = True) -> List[Dict[str, Any]]:
    """Спецификация полносвязной сети: dense/relu ... dense"""
    if len(sizes) < 2:
        raise GraphError("MLP needs at least input and output sizes")
    spec: List[Dict[str, Any]] = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        spec.append({"type": "dense", "in": int(fan_in), "out": int(fan_out), "bias": bias})
        if i < len(sizes) - 2:
            spec.append({"type": "relu"})
    return spec


def _uniform(rng: np.random.Generator, fan_in: int, shape: Tuple[int, ...]) -> np.ndarray:
    limit = np.sqrt(1.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def build_network(layer_spec: Sequence[Dict[str, Any]], seed: int) -> ComputeGraph:
    """Построение графа по списку дескрипторов слоёв"""
    rng = np.random.default_rng(seed)
    descriptors = list(layer_spec)
    if not descriptors:
        raise GraphError("Empty layer specification")

    shape: Optional[Shape] = None
    if descriptors[0].get("type") == "input":
        shape = tuple(int(d) for d in descriptors.pop(0)["shape"])

    nodes: List[Node] = []
    for index, desc in enumerate(descriptors):
        kind = desc.get("type")
        name = f"{kind}{index}"

        if kind == "dense":
            fan_out = int(desc["out"])
            if shape is None:
                if "in" not in desc:
                    raise GraphError(f"Layer {index}: input size unknown")
                shape = (int(desc["in"]),)
            if len(shape) != 1:
                raise GraphError(f"Layer {index}: dense expects flat input, got {shape}")
            fan_in = shape[0]
            if "in" in desc and int(desc["in"]) != fan_in:
                raise GraphError(
                    f"Dimension mismatch at layer {index}: expects {desc['in']}, got {fan_in}")
            weight = _uniform(rng, fan_in, (fan_out, fan_in))
            bias = _uniform(rng, fan_in, (fan_out,)) if desc.get("bias", True) else None
            node: Node = Dense(name, weight, bias)

        elif kind == "conv2d":
            if shape is None or len(shape) != 3:
                raise GraphError(f"Layer {index}: conv2d needs (c, h, w) input, got {shape}")
            in_c = int(desc.get("in_channels", shape[0]))
            if in_c != shape[0]:
                raise GraphError(
                    f"Dimension mismatch at layer {index}: expects {in_c} channels, got {shape[0]}")
            out_c, k = int(desc["out_channels"]), int(desc["kernel"])
            fan_in = in_c * k * k
            weight = _uniform(rng, fan_in, (out_c, in_c, k, k))
            bias = _uniform(rng, fan_in, (out_c,)) if desc.get("bias", True) else None
            node = Conv2D(name, weight, bias, desc.get("stride", 1), desc.get("padding", 0))

        elif kind == "relu":
            node = ReLU(name)
        elif kind == "flatten":
            node = Flatten(name)
        else:
            raise GraphError(f"Unknown layer type: {kind!r}")

        if shape is None:
            raise GraphError(f"Layer {index}: input shape unknown")
        node.in_shape = shape
        node.out_shape = node.output_shape(shape)
        if min(node.out_shape) < 1:
            raise GraphError(f"Layer {index}: empty output shape {node.out_shape}")
        shape = node.out_shape
        nodes.append(node)

    input_shape = nodes[0].in_shape
    graph = ComputeGraph(nodes, input_shape)
    logger.debug(f"Built network: {[n.name for n in nodes]}, "
                 f"{count_parameters(graph)} parameters")
    return graph


def count_parameters(graph: ComputeGraph) -> int:
    return int(sum(value.size for value in graph.params.values()))


def forward(graph: ComputeGraph, batch: np.ndarray, context: Any = None) -> np.ndarray:
    """Прямой проход; кэширует активации для backward"""
    x = np.asarray(batch, dtype=np.float64)
    if x.shape[1:] != graph.input_shape:
        raise GraphError(f"Batch shape {x.shape[1:]} does not match input {graph.input_shape}")

    tapes = []
    for node in graph.nodes:
        tape: Dict[str, Any] = {}
        x = node.forward(x, tape, context)
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"Non-finite value produced by node '{node.name}'")
        tapes.append(tape)

    graph._local.tapes = tapes
    graph._local.logits = x
    return x


def backward(graph: ComputeGraph, labels: np.ndarray) -> Tuple[float, Dict[str, np.ndarray]]:
    """Обратный проход; возвращает значение потери и реестр градиентов"""
    tapes = getattr(graph._local, "tapes", None)
    if tapes is None:
        raise GraphError("backward() called before forward()")

    loss, grad = graph.loss(graph._local.logits, labels)
    if not np.isfinite(loss):
        raise NumericalError(f"Non-finite loss: {loss}")

    graph.zero_grad()
    for node, tape in zip(reversed(graph.nodes), reversed(tapes)):
        grad = node.backward(grad, tape, graph.grads)
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"Non-finite gradient at node '{node.name}'")

    graph._local.tapes = None
    graph._local.input_grad = grad
    return loss, graph.grads


def predict(graph: ComputeGraph, inputs: np.ndarray, context: Any = None,
            batch_size: int = 256) -> np.ndarray:
    """Логиты по всему набору, батчами"""
    outputs = [forward(graph, inputs[start:start + batch_size], context)
               for start in range(0, len(inputs), batch_size)]
    graph._local.tapes = None
    return np.concatenate(outputs, axis=0)


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))


def iter_batches(n: int, batch_size: int,
                 rng: Optional[np.random.Generator] = None) -> Iterable[np.ndarray]:
    """Индексы батчей; при заданном rng порядок перемешивается"""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


class TensorCoreModule(ModuleInterface):
    def setup(self, kernel):
        self.kernel = kernel
        self.metadata = ModuleMetadata(
            name="system.tensor_core",
            version="1.0.0",
            description="Плотные тензоры, граф и обратное распространение"
        )
        return self


__all__ = [
    "ComputeGraph", "build_network", "mlp_spec", "count_parameters", "forward",
    "backward", "predict", "accuracy", "iter_batches", "SoftmaxCrossEntropy",
    "ConstantLoss", "Dense", "Conv2D", "ReLU", "Flatten",
]
