# modules/system/analysis/main.py
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.constants import EdgeKind, Method, REFERENCE_TAU_SMPQ
from core.exceptions import PolicyError
from core.module_api import ModuleInterface, ModuleMetadata
from modules.system.cost.main import CostBudget
from modules.system.data.main import Dataset
from modules.system.search.main import SearchConfig, finetune, smpq_search
from modules.system.supernet.main import KINDS, QuantPolicy, Supernet, discretize
from modules.system.tensor_core.optim import TrainConfig

logger = logging.getLogger('analysis')

PREDICTOR_NOTE = "predictor = mean raw alpha of the selected bit-width on every edge"
ABLATION_KINDS = ("samples", "truncation", "momentum")
DEFAULT_ABLATION_VALUES: Dict[str, List[Any]] = {
    "samples": [1, 5, 10, 20],
    "truncation": [0.25, 0.5, 0.75],
    "momentum": [list(pair) for pair in itertools.product((0.25, 0.5, 0.75, 1.0),
                                                          (0.01, 0.05, 0.1, 0.5))],
}


def kendall_tau(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Tau-a: (согласованные - несогласованные) / (n(n-1)/2), ничьи дают 0"""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"Length mismatch: {x.shape} vs {y.shape}")
    n = len(x)
    if n < 2:
        raise ValueError("Kendall tau needs at least 2 observations")
    dx = np.sign(x[:, None] - x[None, :])
    dy = np.sign(y[:, None] - y[None, :])
    s = np.sum(np.triu(dx * dy, k=1))
    return float(s / (n * (n - 1) / 2))


@dataclass(frozen=True)
class RankedPolicySample:
    policy: QuantPolicy
    score: float
    accuracy: float

    def __post_init__(self):
        if not (math.isfinite(self.score) and math.isfinite(self.accuracy)):
            raise ValueError(f"Non-finite sample: score={self.score}, accuracy={self.accuracy}")


def rank_samples(samples: Sequence[RankedPolicySample]) -> float:
    return kendall_tau([s.score for s in samples], [s.accuracy for s in samples])


def predictor_score(supernet: Supernet, policy: QuantPolicy) -> float:
    """Среднее сырое alpha выбранных разрядностей"""
    values = []
    for layer in range(supernet.n_layers):
        for kind in KINDS:
            edge = supernet.edge(layer, kind)
            values.append(float(edge.alpha[edge.candidates.index(policy.bit(layer, kind))]))
    return float(np.mean(values))


def _decode(index: int, radices: Sequence[int]) -> List[int]:
    digits = []
    for radix in reversed(radices):
        index, digit = divmod(index, radix)
        digits.append(digit)
    return digits[::-1]


def sample_policies(supernet: Supernet, k: int, seed: int) -> List[QuantPolicy]:
    """k различных политик, равномерно по пространству конфигураций"""
    edges = [supernet.edge(layer, kind) for layer in range(supernet.n_layers) for kind in KINDS]
    radices = [len(edge.candidates) for edge in edges]
    total = math.prod(radices)
    if total < k:
        raise PolicyError(f"Only {total} distinct policies available, {k} requested")

    rng = np.random.default_rng(seed)
    if total <= 100_000:
        indices = [int(i) for i in rng.choice(total, size=k, replace=False)]
        choices = [_decode(i, radices) for i in indices]
    else:
        seen, choices = set(), []
        while len(choices) < k:
            digits = tuple(int(rng.integers(r)) for r in radices)
            if digits not in seen:
                seen.add(digits)
                choices.append(list(digits))

    policies = []
    for digits in choices:
        bits = [edge.candidates[d] for edge, d in zip(edges, digits)]
        policies.append(QuantPolicy.from_pairs(zip(bits[0::2], bits[1::2])))
    return policies


def _map(fn: Callable, items: Sequence, threads: int) -> List:
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            return list(executor.map(fn, items))
    return [fn(item) for item in items]


def score_policies(supernet: Supernet, policies: Sequence[QuantPolicy], train: Dataset,
                   val: Dataset, train_cfg: TrainConfig,
                   threads: int = 1) -> List[RankedPolicySample]:
    def run(policy: QuantPolicy) -> RankedPolicySample:
        tuned = finetune(supernet, policy, train, val, train_cfg)
        return RankedPolicySample(policy, predictor_score(supernet, policy),
                                  tuned.metrics["val_accuracy"])
    return _map(run, policies, threads)


@dataclass
class CorrelationResult:
    tau_smpq: float
    tau_dmpq: float
    samples_smpq: List[RankedPolicySample] = field(default_factory=list)
    samples_dmpq: List[RankedPolicySample] = field(default_factory=list)

    def rows(self, seed: int) -> List[Dict[str, Any]]:
        return [{"seed": seed, "method": method, "policy": str(s.policy.pairs()),
                 "score": s.score, "accuracy": s.accuracy}
                for method, samples in ((Method.SMPQ.value, self.samples_smpq),
                                        (Method.DMPQ.value, self.samples_dmpq))
                for s in samples]


def correlation_experiment(supernet_smpq: Supernet, supernet_dmpq: Supernet, k: int,
                           train: Dataset, val: Dataset, train_cfg: TrainConfig,
                           seed: int, threads: int = 1) -> CorrelationResult:
    """Kendall tau между предсказателем (alpha) и точностью после дообучения"""
    if k < 5:
        raise ValueError(f"correlation experiment needs k >= 5, got {k}")
    samples = {}
    for method, supernet in ((Method.SMPQ.value, supernet_smpq), (Method.DMPQ.value, supernet_dmpq)):
        policies = sample_policies(supernet, k, seed)
        samples[method] = score_policies(supernet, policies, train, val, train_cfg, threads)
    result = CorrelationResult(
        tau_smpq=rank_samples(samples[Method.SMPQ.value]),
        tau_dmpq=rank_samples(samples[Method.DMPQ.value]),
        samples_smpq=samples[Method.SMPQ.value],
        samples_dmpq=samples[Method.DMPQ.value],
    )
    logger.info(f"Correlation (k={k}, seed={seed}): tau_smpq={result.tau_smpq:.3f}, "
                f"tau_dmpq={result.tau_dmpq:.3f}")
    return result


def correlation_summary(taus_smpq: Sequence[float], taus_dmpq: Sequence[float],
                        seeds: Sequence[int], k: int) -> Dict[str, Any]:
    return {
        "k": k,
        "seeds": list(seeds),
        "tau_smpq": list(taus_smpq),
        "tau_dmpq": list(taus_dmpq),
        "mean_tau_smpq": float(np.mean(taus_smpq)),
        "mean_tau_dmpq": float(np.mean(taus_dmpq)),
        "reference_tau_smpq": REFERENCE_TAU_SMPQ,
        "predictor": PREDICTOR_NOTE,
    }


@dataclass
class PitfallReport:
    layer: int
    kind: str
    rows: List[Dict[str, Any]]
    tau: float
    rank_consistent: bool


def pitfall_probe(supernet: Supernet, layer: int, kind: str, train: Dataset, val: Dataset,
                  train_cfg: TrainConfig, base_policy: Optional[QuantPolicy] = None,
                  threads: int = 1) -> PitfallReport:
    """Точность дискретизации каждой разрядности ребра против её alpha"""
    if not 0 <= layer < supernet.n_layers:
        raise PolicyError(f"Invalid edge: layer {layer} of {supernet.n_layers}")
    kind = EdgeKind(kind).value
    edge = supernet.edge(layer, kind)
    base = base_policy if base_policy is not None else discretize(supernet)

    def run(bit: int) -> float:
        return finetune(supernet, base.with_bit(layer, kind, bit), train, val,
                        train_cfg).metrics["val_accuracy"]

    accuracies = _map(run, edge.candidates, threads)
    rows = [{"bit": bit, "alpha": float(edge.alpha[i]), "accuracy": accuracies[i]}
            for i, bit in enumerate(edge.candidates)]
    if len(rows) < 2:
        return PitfallReport(layer, kind, rows, 1.0, True)

    tau = kendall_tau([r["alpha"] for r in rows], accuracies)
    top_alpha = int(np.argmax([r["alpha"] for r in rows]))
    top_accuracy = int(np.argmax(accuracies))
    consistent = rows[top_alpha]["accuracy"] == rows[top_accuracy]["accuracy"]
    logger.info(f"Pitfall probe on layer {layer} ({kind}): tau={tau:.3f}, "
                f"consistent={consistent}")
    return PitfallReport(layer, kind, rows, tau, bool(consistent))


Edit = Tuple[int, str, int]


@dataclass
class InteractionResult:
    accuracies: Dict[str, float]
    delta_b1: float
    delta_b2: float
    delta_b3: float

    @property
    def gap(self) -> float:
        return self.delta_b3 - (self.delta_b1 + self.delta_b2)


def interaction_probe(supernet: Supernet, base_policy: QuantPolicy, edits: Sequence[Edit],
                      train: Dataset, val: Dataset, train_cfg: TrainConfig,
                      threads: int = 1) -> InteractionResult:
    """B0 (база), B1/B2 (одиночные правки), B3 (обе правки)"""
    if len(edits) != 2:
        raise PolicyError(f"Interaction probe needs exactly 2 edits, got {len(edits)}")
    (l1, k1, b1), (l2, k2, b2) = [(int(l), EdgeKind(k).value, int(b)) for l, k, b in edits]
    if (l1, k1) == (l2, k2):
        raise PolicyError(f"Both edits touch the same edge: layer {l1} ({k1})")

    policies = {
        "B0": base_policy,
        "B1": base_policy.with_bit(l1, k1, b1),
        "B2": base_policy.with_bit(l2, k2, b2),
        "B3": base_policy.with_bit(l1, k1, b1).with_bit(l2, k2, b2),
    }
    names = list(policies)
    accuracies = _map(
        lambda name: finetune(supernet, policies[name], train, val, train_cfg).metrics["val_accuracy"],
        names, threads)
    acc = dict(zip(names, accuracies))
    result = InteractionResult(acc, acc["B1"] - acc["B0"], acc["B2"] - acc["B0"], acc["B3"] - acc["B0"])
    logger.info(f"Interaction probe: dB1={result.delta_b1:.4f}, dB2={result.delta_b2:.4f}, "
                f"dB3={result.delta_b3:.4f}, gap={result.gap:.4f}")
    return result


def ablation_experiment(kind: str, values: Optional[Sequence[Any]],
                        build_supernet: Callable[[], Supernet], train: Dataset, val: Dataset,
                        cfg: SearchConfig, train_cfg: TrainConfig,
                        budget: Optional[CostBudget] = None) -> List[Dict[str, Any]]:
    """Чувствительность SMPQ к M, порогу усечения и паре (beta, xi)"""
    if kind not in ABLATION_KINDS:
        raise ValueError(f"Unknown ablation kind: {kind!r}; expected one of {ABLATION_KINDS}")
    values = list(values) if values is not None else DEFAULT_ABLATION_VALUES[kind]

    rows = []
    for value in values:
        if kind == "samples":
            variant = replace(cfg, method=Method.SMPQ.value, permutations=int(value))
        elif kind == "truncation":
            variant = replace(cfg, method=Method.SMPQ.value, truncation=float(value))
        else:
            beta, xi = value
            variant = replace(cfg, method=Method.SMPQ.value, beta=float(beta), xi=float(xi))
        if budget is not None:
            variant = replace(variant, budget=budget)

        supernet = build_supernet()
        policy, trajectory = smpq_search(supernet, train, val, variant)
        tuned = finetune(supernet, policy, train, val, train_cfg, variant.budget)
        result = trajectory.budget_result
        rows.append({
            "kind": kind,
            "permutations": variant.permutations,
            "truncation": variant.truncation,
            "beta": variant.beta,
            "xi": variant.xi,
            "policy": str(policy.pairs()),
            "bops": result.bops,
            "compression": result.compression,
            "feasible": result.feasible,
            "val_accuracy": tuned.metrics["val_accuracy"],
            "val_error": 1.0 - tuned.metrics["val_accuracy"],
            "evaluations": sum(r.evaluations for r in trajectory.records),
        })
        logger.info(f"Ablation {kind}={value}: val_accuracy={rows[-1]['val_accuracy']:.4f}, "
                    f"evaluations={rows[-1]['evaluations']}")
    return rows


class AnalysisModule(ModuleInterface):
    def setup(self, kernel):
        self.kernel = kernel
        self.metadata = ModuleMetadata(
            name="system.analysis",
            version="1.0.0",
            description="Корреляция Кендалла, проба alpha, взаимодействие рёбер, абляции",
            dependencies=["system.search"]
        )
        return self

    def get_commands(self):
        from modules.system.analysis.commands import (
            cmd_ablation, cmd_correlation, cmd_interaction, cmd_pitfall,
        )
        return {
            "analyze.correlation": cmd_correlation,
            "analyze.pitfall": cmd_pitfall,
            "analyze.interaction": cmd_interaction,
            "analyze.ablation": cmd_ablation,
        }
