# modules/system/game/main.py
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence

import numpy as np

from core.exceptions import DataError, GameSizeError, NumericalError
from core.module_api import ModuleInterface, ModuleMetadata
from modules.system.cost.main import CostBudget, expected_bops
from modules.system.supernet.main import Player, Supernet, masked_predict
from modules.system.tensor_core.main import accuracy

logger = logging.getLogger('game')

MAX_EXACT_PLAYERS = 20


class ValueFunction:
    """Характеристическая функция V(S) с кэшем коалиций.

    Счётчик evaluations учитывает только реальные вызовы fn (промахи кэша).
    """

    def __init__(self, fn: Callable[[FrozenSet[Player]], float],
                 players: Sequence[Player], memoize: bool = True):
        self.fn = fn
        self.players: List[Player] = list(players)
        self.memoize = memoize
        self.evaluations = 0
        self._cache: Dict[FrozenSet[Player], float] = {}
        self._lock = threading.Lock()

    def __call__(self, coalition: Iterable[Player]) -> float:
        key = frozenset(coalition)
        if self.memoize:
            with self._lock:
                if key in self._cache:
                    return self._cache[key]

        value = float(self.fn(key))
        if not math.isfinite(value):
            raise NumericalError(f"Value function returned {value} for coalition of size {len(key)}")

        with self._lock:
            self.evaluations += 1
            if self.memoize:
                self._cache[key] = value
        return value

    @property
    def empty_value(self) -> float:
        return self(frozenset())

    @property
    def grand_value(self) -> float:
        return self(frozenset(self.players))

    def clear(self) -> None:
        with self._lock:
            self._cache.clear()


@dataclass
class ShapleyEstimate:
    """Оценка psi игрока; mean/m2 -- накопители Уэлфорда"""
    player: Player
    samples: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @property
    def psi(self) -> float:
        return self.mean

    @property
    def variance(self) -> float:
        return self.m2 / (self.samples - 1) if self.samples > 1 else 0.0

    def update(self, value: float) -> None:
        self.samples += 1
        delta = value - self.mean
        self.mean += delta / self.samples
        self.m2 += delta * (value - self.mean)


def _check_players(players: Sequence[Player]) -> List[Player]:
    players = list(players)
    if len(set(players)) != len(players):
        raise GameSizeError("Duplicate players in the game")
    return players


def exact_shapley(vf: ValueFunction, players: Sequence[Player]) -> Dict[Player, ShapleyEstimate]:
    """Точные значения Шепли перебором всех 2^n коалиций"""
    players = _check_players(players)
    n = len(players)
    if n > MAX_EXACT_PLAYERS:
        raise GameSizeError(
            f"{n} players exceed the enumeration limit of {MAX_EXACT_PLAYERS}; use mc_shapley")
    if n == 0:
        return {}

    masks = np.arange(1 << n, dtype=np.int64)
    values = np.array([vf(frozenset(players[j] for j in range(n) if (m >> j) & 1))
                       for m in range(1 << n)])
    sizes = np.zeros(1 << n, dtype=np.int64)
    for j in range(n):
        sizes += (masks >> j) & 1
    weights = np.array([math.factorial(k) * math.factorial(n - k - 1) / math.factorial(n)
                        for k in range(n)])

    estimates: Dict[Player, ShapleyEstimate] = {}
    for i, player in enumerate(players):
        without = masks[((masks >> i) & 1) == 0]
        marginals = values[without | (1 << i)] - values[without]
        psi = float(np.sum(weights[sizes[without]] * marginals))
        estimates[player] = ShapleyEstimate(player, samples=len(without), mean=psi)

    logger.debug(f"Exact Shapley over {n} players, {vf.evaluations} evaluations")
    return estimates


def mc_shapley(vf: ValueFunction, players: Sequence[Player], M: int,
               truncation_threshold: float, seed: int,
               threads: int = 1) -> Dict[Player, ShapleyEstimate]:
    """Монте-Карло оценка по M перестановкам с усечением.

    Перестановка k использует генератор default_rng([seed, k]); накопление
    идёт в порядке k, поэтому результат не зависит от числа потоков.
    """
    players = _check_players(players)
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    if not 0.0 <= truncation_threshold <= 1.0:
        raise ValueError(f"truncation_threshold must lie in [0, 1], got {truncation_threshold}")

    n = len(players)
    v_empty = vf.empty_value
    cutoff = truncation_threshold * vf.grand_value

    def run(k: int) -> np.ndarray:
        order = np.random.default_rng([seed, k]).permutation(n)
        marginals = np.zeros(n)
        coalition = set()
        previous = v_empty
        for j in order:
            coalition.add(players[j])
            current = vf(coalition)
            marginals[j] = current - previous
            previous = current
            if truncation_threshold > 0 and current < cutoff:
                # остальные игроки перестановки получают 0
                break
        return marginals

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            rows = list(executor.map(run, range(M)))
    else:
        rows = [run(k) for k in range(M)]

    estimates = {player: ShapleyEstimate(player) for player in players}
    for row in rows:
        for j, player in enumerate(players):
            estimates[player].update(float(row[j]))

    logger.debug(f"MC Shapley: {M} permutations, {n} players, {vf.evaluations} evaluations")
    return estimates


def psi_vector(estimates: Dict[Player, ShapleyEstimate], players: Sequence[Player]) -> np.ndarray:
    return np.array([estimates[p].psi for p in players])


@dataclass(frozen=True)
class MomentumState:
    """Накопленный импульс q и коэффициенты beta, lambda, xi"""
    q: np.ndarray
    beta: float
    lam: float
    xi: float

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if abs(self.beta + self.lam - 1.0) > 1e-12:
            raise ValueError(f"beta + lambda must equal 1, got {self.beta} + {self.lam}")
        if not self.xi > 0:
            raise ValueError(f"xi must be positive, got {self.xi}")

    @classmethod
    def create(cls, n: int, beta: float, xi: float) -> "MomentumState":
        return cls(np.zeros(n), float(beta), 1.0 - float(beta), float(xi))


def momentum_update(state: MomentumState, psi: np.ndarray) -> MomentumState:
    """q = beta * q + lambda * psi / ||psi||"""
    psi = np.asarray(psi, dtype=np.float64)
    norm = float(np.linalg.norm(psi))
    if norm == 0.0:
        logger.warning("Zero Shapley vector, momentum left unchanged")
        return state
    q = state.beta * state.q + state.lam * psi / norm
    return MomentumState(q, state.beta, state.lam, state.xi)


def alpha_update(alpha: np.ndarray, state: MomentumState) -> np.ndarray:
    """alpha + xi * q / ||q||"""
    alpha = np.asarray(alpha, dtype=np.float64)
    norm = float(np.linalg.norm(state.q))
    if norm == 0.0:
        return alpha.copy()
    return alpha + state.xi * state.q / norm


@dataclass
class ConvergenceMonitor:
    """Критерий остановки: scale * sum |psi_min| < epsilon (epsilon = 0 отключает)"""
    epsilon: float
    scale: float = 50.0
    history: List[float] = field(default_factory=list)

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")


def convergence_check(monitor: ConvergenceMonitor, psi_min_per_layer: Sequence[float]) -> bool:
    delta = float(monitor.scale * np.sum(np.abs(np.asarray(psi_min_per_layer, dtype=np.float64))))
    monitor.history.append(delta)
    return delta < monitor.epsilon


def psi_min_per_layer(estimates: Dict[Player, ShapleyEstimate], n_layers: int) -> List[float]:
    """Минимальное psi среди игроков каждого слоя (оба ребра)"""
    minima: List[Optional[float]] = [None] * n_layers
    for player, estimate in estimates.items():
        current = minima[player.layer]
        if current is None or estimate.psi < current:
            minima[player.layer] = estimate.psi
    return [0.0 if m is None else m for m in minima]


def value_eval(supernet: Supernet, coalition: Iterable[Player], val_data,
               cost: CostBudget) -> float:
    """V(S) = точность на val при маске S минус штраф за превышение бюджета"""
    if len(val_data) == 0:
        raise DataError("Empty validation set")
    mask = supernet.mask(coalition)
    logits = masked_predict(supernet, val_data.inputs, coalition)
    acc = accuracy(logits, val_data.labels)
    ratio = expected_bops(supernet, mask.present, cost) / cost.omega0
    return acc - cost.mu * max(0.0, ratio - 1.0)


class SupernetValueFunction(ValueFunction):
    """V(S) над суперсетью с замороженными весами"""

    def __init__(self, supernet: Supernet, val_data, cost: CostBudget, memoize: bool = True):
        self.supernet = supernet
        self.val_data = val_data
        self.cost = cost
        super().__init__(lambda s: value_eval(supernet, s, val_data, cost),
                         supernet.players, memoize)


def shapley_dump_rows(estimates: Dict[Player, ShapleyEstimate], players: Sequence[Player],
                      iteration: int) -> List[Dict[str, object]]:
    """Строки CSV (iteration, layer, kind, bit, psi, samples, variance)"""
    return [{
        "iteration": iteration,
        "layer": p.layer,
        "kind": p.kind,
        "bit": p.bit,
        "psi": estimates[p].psi,
        "samples": estimates[p].samples,
        "variance": estimates[p].variance,
    } for p in players]


class GameModule(ModuleInterface):
    def setup(self, kernel):
        self.kernel = kernel
        self.metadata = ModuleMetadata(
            name="system.game",
            version="1.0.0",
            description="Значения Шепли: точный перебор, Монте-Карло, импульс",
            dependencies=["system.supernet", "system.cost"]
        )
        return self


__all__ = [
    "ValueFunction", "ShapleyEstimate", "MomentumState", "ConvergenceMonitor",
    "exact_shapley", "mc_shapley", "momentum_update", "alpha_update", "convergence_check",
    "psi_min_per_layer", "psi_vector", "value_eval", "SupernetValueFunction",
    "shapley_dump_rows", "MAX_EXACT_PLAYERS",
]
