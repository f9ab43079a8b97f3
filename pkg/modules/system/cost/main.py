# modules/system/cost/main.py
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.constants import FULL_PRECISION
from core.exceptions import BudgetError
from core.module_api import ModuleInterface, ModuleMetadata
from modules.system.supernet.main import KINDS, QuantPolicy, Supernet, discretize

logger = logging.getLogger('cost')


def layer_bops(macs: int, b_w: int, b_a: int) -> float:
    """BOPs слоя: MACs * b_w * b_a"""
    if macs <= 0:
        raise BudgetError(f"MAC count must be positive, got {macs}")
    return float(macs) * float(b_w) * float(b_a)


@dataclass(frozen=True)
class CostBudget:
    """Ограничение Omega(Q) <= Omega0 и MACs по слоям"""
    omega0: float
    macs: Tuple[int, ...]
    mu: float = 1.0

    def __post_init__(self):
        if not self.omega0 > 0:
            raise BudgetError(f"omega0 must be positive, got {self.omega0}")
        if self.mu < 0:
            raise BudgetError(f"mu must be non-negative, got {self.mu}")
        if any(m <= 0 for m in self.macs):
            raise BudgetError(f"MAC counts must be positive: {self.macs}")
        object.__setattr__(self, "macs", tuple(int(m) for m in self.macs))

    @property
    def full_precision_bops(self) -> float:
        return sum(layer_bops(m, FULL_PRECISION, FULL_PRECISION) for m in self.macs)

    @classmethod
    def from_compression(cls, macs: Sequence[int], ratio: float, mu: float = 1.0) -> "CostBudget":
        """Бюджет как целевая степень сжатия относительно 32/32"""
        if ratio <= 0:
            raise BudgetError(f"compression ratio must be positive, got {ratio}")
        full = sum(layer_bops(m, FULL_PRECISION, FULL_PRECISION) for m in macs)
        return cls(full / ratio, tuple(macs), mu)

    @classmethod
    def unconstrained(cls, macs: Sequence[int], mu: float = 1.0) -> "CostBudget":
        full = sum(layer_bops(m, FULL_PRECISION, FULL_PRECISION) for m in macs)
        return cls(full, tuple(macs), mu)


def policy_bops(policy: QuantPolicy, budget: CostBudget) -> Tuple[float, float]:
    """Суммарные BOPs политики и степень сжатия относительно 32/32"""
    if len(policy) > len(budget.macs):
        raise BudgetError(
            f"Missing MAC count for layer {len(budget.macs)} (policy has {len(policy)} layers)")
    if len(policy) < len(budget.macs):
        raise BudgetError(f"Policy covers {len(policy)} of {len(budget.macs)} layers")
    total = sum(layer_bops(m, lb.weight_bits, lb.act_bits)
                for m, lb in zip(budget.macs, policy.layers))
    return total, budget.full_precision_bops / total


@dataclass
class BudgetResult:
    policy: QuantPolicy
    bops: float
    compression: float
    feasible: bool
    demotions: List[Tuple[int, str, int, int]] = field(default_factory=list)


def enforce_budget(supernet: Supernet, budget: CostBudget,
                   policy: Optional[QuantPolicy] = None) -> BudgetResult:
    """Winner-take-all, затем жадное понижение рёбер с наименьшим разрывом alpha.

    На каждом шаге понижается ребро, у которого alpha[текущий] - alpha[ближайший
    меньший] минимален; при равенстве берётся первое ребро в порядке
    (слой, веса раньше активаций).
    """
    policy = policy if policy is not None else discretize(supernet)
    bops, ratio = policy_bops(policy, budget)
    demotions: List[Tuple[int, str, int, int]] = []

    while bops > budget.omega0:
        best = None
        for layer in range(supernet.n_layers):
            for kind in KINDS:
                edge = supernet.edge(layer, kind)
                current = policy.bit(layer, kind)
                i = edge.candidates.index(current)
                if i == 0:
                    continue
                gap = float(edge.alpha[i] - edge.alpha[i - 1])
                if best is None or gap < best[0]:
                    best = (gap, layer, kind, current, edge.candidates[i - 1])
        if best is None:
            break
        _, layer, kind, old_bit, new_bit = best
        policy = policy.with_bit(layer, kind, new_bit)
        demotions.append((layer, kind, old_bit, new_bit))
        bops, ratio = policy_bops(policy, budget)
        logger.debug(f"Demoted layer {layer} {kind}: {old_bit} -> {new_bit}, BOPs={bops:.4g}")

    feasible = bops <= budget.omega0
    if not feasible:
        logger.warning(f"Budget infeasible: minimal policy needs {bops:.4g} BOPs > "
                       f"omega0={budget.omega0:.4g}")
    return BudgetResult(policy, bops, ratio, feasible, demotions)


def expected_bops(supernet: Supernet, present: dict, budget: CostBudget) -> float:
    """E[BOPs | S]: средние разрядности присутствующих кандидатов; пустое ребро -- 32"""
    total = 0.0
    for layer, macs in enumerate(budget.macs):
        means = []
        for kind in KINDS:
            edge = supernet.edge(layer, kind)
            idx = present.get(edge.key, ())
            means.append(sum(edge.candidates[i] for i in idx) / len(idx) if idx
                         else float(FULL_PRECISION))
        total += float(macs) * means[0] * means[1]
    return total


def mixture_bops(supernet: Supernet,
                 budget: CostBudget) -> Tuple[float, Dict[Tuple[int, str], np.ndarray]]:
    """E[BOPs] под softmax(alpha) и его градиент по alpha каждого ребра"""
    total = 0.0
    grads: Dict[Tuple[int, str], np.ndarray] = {}
    for layer, macs in enumerate(budget.macs):
        w_edge, a_edge = (supernet.edge(layer, kind) for kind in KINDS)
        pw, pa = w_edge.mixture_weights(), a_edge.mixture_weights()
        bw = np.asarray(w_edge.candidates, dtype=np.float64)
        ba = np.asarray(a_edge.candidates, dtype=np.float64)
        mean_w, mean_a = float(pw @ bw), float(pa @ ba)
        total += float(macs) * mean_w * mean_a
        grads[w_edge.key] = float(macs) * mean_a * pw * (bw - mean_w)
        grads[a_edge.key] = float(macs) * mean_w * pa * (ba - mean_a)
    return total, grads


def bops_penalty(supernet: Supernet,
                 budget: CostBudget) -> Tuple[float, Dict[Tuple[int, str], np.ndarray]]:
    """mu * max(0, E[BOPs] / omega0 - 1) и градиент по alpha (слагаемое потерь DMPQ)"""
    total, grads = mixture_bops(supernet, budget)
    excess = total / budget.omega0 - 1.0
    if budget.mu == 0 or excess <= 0:
        return 0.0, {key: np.zeros_like(g) for key, g in grads.items()}
    scale = budget.mu / budget.omega0
    return budget.mu * excess, {key: scale * g for key, g in grads.items()}


class CostModule(ModuleInterface):
    def setup(self, kernel):
        self.kernel = kernel
        self.metadata = ModuleMetadata(
            name="system.cost",
            version="1.0.0",
            description="Модель BOPs и ограничение бюджета",
            dependencies=["system.supernet"]
        )
        return self
