# modules/system/supernet/main.py
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.constants import EdgeKind, SEARCH_SPACES
from core.exceptions import PolicyError, NumericalError
from core.module_api import ModuleInterface, ModuleMetadata
from modules.system.quantization.main import check_bits, calibrate_clip
from modules.system.supernet.edges import (
    MixedEdge, FixedEdge, CoalitionMask, CalibrationContext, softmax,
)
from modules.system.tensor_core.main import ComputeGraph, forward, predict

logger = logging.getLogger('supernet')

KINDS = (EdgeKind.WEIGHT.value, EdgeKind.ACTIVATION.value)


@dataclass(frozen=True)
class SearchSpace:
    """Кандидаты разрядности для весов и активаций"""
    weight_bits: Tuple[int, ...]
    act_bits: Tuple[int, ...]
    name: str = "custom"

    def __post_init__(self):
        for label in ("weight_bits", "act_bits"):
            bits = tuple(check_bits(b) for b in getattr(self, label))
            if not bits:
                raise PolicyError(f"Empty candidate set: {label}")
            if any(a >= b for a, b in zip(bits, bits[1:])):
                raise PolicyError(f"{label} must be strictly ascending without duplicates: {bits}")
            object.__setattr__(self, label, bits)

    @classmethod
    def preset(cls, name: str) -> "SearchSpace":
        if name not in SEARCH_SPACES:
            raise PolicyError(f"Unknown search space preset: {name!r}")
        weights, acts = SEARCH_SPACES[name]
        return cls(weights, acts, name)

    def candidates(self, kind: str) -> Tuple[int, ...]:
        return self.weight_bits if EdgeKind(kind) is EdgeKind.WEIGHT else self.act_bits

    def size(self, layers: int) -> int:
        """Число конфигураций разрядностей на layers слоях"""
        return count_configurations(len(self.weight_bits) * len(self.act_bits), layers)


def count_configurations(candidates_per_layer: Union[int, Sequence[int]], layers: int = 1) -> int:
    """Точное число конфигураций (целое произвольной длины)"""
    if isinstance(candidates_per_layer, int):
        return candidates_per_layer ** layers
    return math.prod(int(c) for c in candidates_per_layer)


@dataclass(frozen=True)
class Player:
    """Игрок: (слой, тип ребра, разрядность)"""
    layer: int
    kind: str
    bit: int

    def __post_init__(self):
        object.__setattr__(self, "kind", EdgeKind(self.kind).value)

    def __str__(self):
        return f"L{self.layer}.{self.kind}.{self.bit}"


Coalition = FrozenSet[Player]


@dataclass(frozen=True)
class LayerBits:
    weight_bits: int
    act_bits: int

    def get(self, kind: str) -> int:
        return self.weight_bits if EdgeKind(kind) is EdgeKind.WEIGHT else self.act_bits


@dataclass(frozen=True)
class QuantPolicy:
    """По одной паре (биты весов, биты активаций) на слой"""
    layers: Tuple[LayerBits, ...]

    @classmethod
    def uniform(cls, n_layers: int, weight_bits: int, act_bits: int) -> "QuantPolicy":
        return cls(tuple(LayerBits(weight_bits, act_bits) for _ in range(n_layers)))

    @classmethod
    def from_pairs(cls, pairs: Iterable[Tuple[int, int]]) -> "QuantPolicy":
        return cls(tuple(LayerBits(int(w), int(a)) for w, a in pairs))

    def bit(self, layer: int, kind: str) -> int:
        return self.layers[layer].get(kind)

    def with_bit(self, layer: int, kind: str, bit: int) -> "QuantPolicy":
        layers = list(self.layers)
        current = layers[layer]
        if EdgeKind(kind) is EdgeKind.WEIGHT:
            layers[layer] = LayerBits(int(bit), current.act_bits)
        else:
            layers[layer] = LayerBits(current.weight_bits, int(bit))
        return QuantPolicy(tuple(layers))

    def pairs(self) -> List[Tuple[int, int]]:
        return [(lb.weight_bits, lb.act_bits) for lb in self.layers]

    def __len__(self):
        return len(self.layers)


def policy_to_dict(policy: QuantPolicy, search_space: str, seed: int,
                   bops: float, **extra: Any) -> Dict[str, Any]:
    """Политика в JSON-схеме {layers, search_space, seed, bops, ...}"""
    data = {
        "layers": [{"index": i, "weight_bits": lb.weight_bits, "act_bits": lb.act_bits}
                   for i, lb in enumerate(policy.layers)],
        "search_space": search_space,
        "seed": int(seed),
        "bops": float(bops),
    }
    data.update(extra)
    return data


def policy_from_dict(data: Dict[str, Any]) -> QuantPolicy:
    try:
        rows = sorted(data["layers"], key=lambda row: int(row["index"]))
        if [int(row["index"]) for row in rows] != list(range(len(rows))):
            raise PolicyError("Policy layer indices must be 0..n-1")
        return QuantPolicy.from_pairs((row["weight_bits"], row["act_bits"]) for row in rows)
    except (KeyError, TypeError) as e:
        raise PolicyError(f"Malformed policy: {e}")


class Supernet:
    """Послойная суперсеть над общими весами графа"""

    def __init__(self, graph: ComputeGraph, space: SearchSpace,
                 layer_spaces: Optional[Dict[int, SearchSpace]] = None):
        self.graph = graph
        self.space = space
        self.layers = graph.quantizable_layers
        self.layer_spaces = {i: (layer_spaces or {}).get(i, space) for i in range(len(self.layers))}
        self.edges: Dict[Tuple[int, str], MixedEdge] = {}
        self.players: List[Player] = []

        for index, layer in enumerate(self.layers):
            layer_space = self.layer_spaces[index]
            for kind in KINDS:
                edge = MixedEdge(index, kind, layer_space.candidates(kind))
                self.edges[edge.key] = edge
                self.players.extend(Player(index, kind, bit) for bit in edge.candidates)
            layer.weight_quant = self.edges[(index, KINDS[0])]
            layer.act_quant = self.edges[(index, KINDS[1])]

        self._player_index = {p: i for i, p in enumerate(self.players)}
        self.calibrated = False

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def edge(self, layer: int, kind: str) -> MixedEdge:
        return self.edges[(layer, EdgeKind(kind).value)]

    def candidates(self, layer: int, kind: str) -> List[int]:
        return self.edge(layer, kind).candidates

    def player_index(self, player: Player) -> int:
        return self._player_index[player]

    def alpha_vector(self) -> np.ndarray:
        """alpha всех игроков в порядке self.players"""
        return np.concatenate([edge.alpha for edge in self.edges.values()])

    def set_alpha_vector(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (len(self.players),):
            raise PolicyError(f"Alpha vector of shape {values.shape}, expected ({len(self.players)},)")
        offset = 0
        for edge in self.edges.values():
            n = len(edge.candidates)
            edge.alpha = values[offset:offset + n].copy()
            offset += n

    def alpha_params(self) -> Dict[str, np.ndarray]:
        return {f"alpha.{layer}.{kind}": edge.alpha for (layer, kind), edge in self.edges.items()}

    def alpha_grads(self) -> Dict[str, np.ndarray]:
        return {f"alpha.{layer}.{kind}": edge.alpha_grad
                for (layer, kind), edge in self.edges.items()}

    def mask(self, coalition: Iterable[Player]) -> CoalitionMask:
        present: Dict[Tuple[int, str], List[int]] = {}
        for player in coalition:
            edge = self.edges[(player.layer, player.kind)]
            present.setdefault(edge.key, []).append(edge.candidates.index(player.bit))
        return CoalitionMask({key: tuple(sorted(idx)) for key, idx in present.items()})

    def layer_macs(self) -> List[int]:
        return [layer.macs() for layer in self.layers]


def build_supernet(graph: ComputeGraph, space: SearchSpace,
                   layer_spaces: Optional[Dict[int, SearchSpace]] = None) -> Supernet:
    """Каждый квантуемый слой получает ребро весов и ребро активаций"""
    if not graph.quantizable_layers:
        raise PolicyError("Graph has no quantizable layers")
    supernet = Supernet(graph, space, layer_spaces)
    logger.info(f"Supernet over {supernet.n_layers} layers, space {space.name}, "
                f"{len(supernet.players)} players")
    return supernet


def calibrate(supernet: Supernet, inputs: np.ndarray, batch_size: int = 256) -> None:
    """Калибровка clip_max рёбер активаций по полноточному проходу"""
    context = CalibrationContext()
    for start in range(0, len(inputs), batch_size):
        forward(supernet.graph, inputs[start:start + batch_size], context)
    supernet.graph._local.tapes = None

    for (layer, kind), edge in supernet.edges.items():
        if kind != EdgeKind.ACTIVATION.value:
            continue
        state = calibrate_clip(context.records[(layer, kind)])
        edge.states = [state] * len(edge.candidates)
        logger.debug(f"Edge {(layer, kind)} clip_max={state.clip_max:.4f} signed={state.signed}")
    supernet.calibrated = True


def mixture_forward(supernet: Supernet, batch: np.ndarray) -> np.ndarray:
    """Выход суперсети: softmax-смесь кандидатов на каждом ребре"""
    for edge in supernet.edges.values():
        if not np.all(np.isfinite(edge.alpha)):
            raise NumericalError(f"Non-finite alpha on edge {edge.key}")
    return forward(supernet.graph, batch, None)


def masked_forward(supernet: Supernet, batch: np.ndarray, coalition: Iterable[Player]) -> np.ndarray:
    """Выход при коалиции: равномерная смесь присутствующих кандидатов"""
    return forward(supernet.graph, batch, supernet.mask(coalition))


def masked_predict(supernet: Supernet, inputs: np.ndarray, coalition: Iterable[Player],
                   batch_size: int = 256) -> np.ndarray:
    return predict(supernet.graph, inputs, supernet.mask(coalition), batch_size)


def discretize(supernet: Supernet) -> QuantPolicy:
    """Winner-take-all: максимальный alpha, ничья -- в пользу меньшей разрядности"""
    pairs = []
    for layer in range(supernet.n_layers):
        chosen = []
        for kind in KINDS:
            edge = supernet.edge(layer, kind)
            if not np.all(np.isfinite(edge.alpha)):
                raise NumericalError(f"Non-finite alpha on edge {edge.key}")
            # кандидаты упорядочены по возрастанию, argmax берёт первый максимум
            chosen.append(edge.candidates[int(np.argmax(edge.alpha))])
        pairs.append(tuple(chosen))
    return QuantPolicy.from_pairs(pairs)


def validate_policy(supernet: Supernet, policy: QuantPolicy) -> None:
    if len(policy) != supernet.n_layers:
        raise PolicyError(f"Policy covers {len(policy)} layers, network has {supernet.n_layers}")
    for layer in range(supernet.n_layers):
        for kind in KINDS:
            bit = policy.bit(layer, kind)
            if bit not in supernet.candidates(layer, kind):
                raise PolicyError(
                    f"Bit {bit} not in candidate set {supernet.candidates(layer, kind)} "
                    f"of layer {layer} ({kind})")


def apply_policy(supernet: Supernet, policy: QuantPolicy) -> ComputeGraph:
    """Сеть фиксированной точности, веса наследуются из суперсети"""
    validate_policy(supernet, policy)
    graph = supernet.graph.copy()
    for index, layer in enumerate(graph.quantizable_layers):
        for kind, slot in zip(KINDS, ("weight_quant", "act_quant")):
            edge = supernet.edge(index, kind)
            bit = policy.bit(index, kind)
            i = edge.candidates.index(bit)
            setattr(layer, slot, FixedEdge(kind, bit, edge.states[i], edge.overrides.get(bit)))
    return graph


def plant_noise(supernet: Supernet, layer: int, bit: int, seed: int, scale: float = 10.0) -> np.ndarray:
    """Заменить ветвь-кандидата весов фиксированным шумом"""
    edge = supernet.edge(layer, EdgeKind.WEIGHT.value)
    if bit not in edge.candidates:
        raise PolicyError(f"Bit {bit} not in candidate set {edge.candidates}")
    weight = supernet.layers[layer].weight
    amplitude = scale * max(float(np.max(np.abs(weight))), 1e-12)
    noise = np.random.default_rng(seed).normal(0.0, amplitude, size=weight.shape)
    edge.overrides[bit] = noise
    logger.info(f"Planted noise branch on layer {layer}, weight bit {bit}")
    return noise


class SupernetModule(ModuleInterface):
    def setup(self, kernel):
        self.kernel = kernel
        self.metadata = ModuleMetadata(
            name="system.supernet",
            version="1.0.0",
            description="Суперсеть разрядностей: смесь, маскирование коалиций, дискретизация",
            dependencies=["system.tensor_core", "system.quantization"]
        )
        return self


__all__ = [
    "SearchSpace", "Player", "Coalition", "LayerBits", "QuantPolicy", "Supernet",
    "MixedEdge", "FixedEdge", "build_supernet", "calibrate", "mixture_forward",
    "masked_forward", "masked_predict", "discretize", "apply_policy", "validate_policy",
    "plant_noise", "count_configurations", "policy_to_dict", "policy_from_dict", "softmax",
]
