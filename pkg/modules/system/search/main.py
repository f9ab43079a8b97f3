# modules/system/search/main.py
import hashlib
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from core.config import RunConfig, derive_seed
from core.constants import AlphaObjective, Method, SearchEvents
from core.events import EventManager
from core.exceptions import ConfigError, NumericalError
from core.module_api import ModuleInterface, ModuleMetadata
from modules.system.cost.main import (
    BudgetResult, CostBudget, bops_penalty, enforce_budget, policy_bops,
)
from modules.system.data.main import Dataset
from modules.system.game.main import (
    ConvergenceMonitor, MomentumState, SupernetValueFunction, alpha_update,
    convergence_check, mc_shapley, momentum_update, psi_min_per_layer, psi_vector,
    shapley_dump_rows,
)
from modules.system.supernet.main import (
    QuantPolicy, Supernet, apply_policy, calibrate, mixture_forward,
)
from modules.system.tensor_core.main import (
    ComputeGraph, accuracy, backward, forward, iter_batches, predict,
)
from modules.system.tensor_core.optim import Adam, Optimizer, TrainConfig, make_optimizer

logger = logging.getLogger('search')


@dataclass(frozen=True)
class SearchConfig:
    """Гиперпараметры поиска (обе ветви: smpq и dmpq)"""
    method: str = Method.SMPQ.value
    epochs: int = 5
    rounds_per_epoch: int = 1
    permutations: int = 10
    truncation: float = 0.5
    beta: float = 0.8
    xi: float = 0.1
    epsilon: float = 0.0
    convergence_scale: float = 50.0
    alpha_lr: float = 0.01
    alpha_objective: str = AlphaObjective.TRAIN.value
    threads: int = 1
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    budget: Optional[CostBudget] = None

    def __post_init__(self):
        if self.method not in [m.value for m in Method]:
            raise ConfigError(f"Unknown search method: {self.method!r}")
        if self.alpha_objective not in [o.value for o in AlphaObjective]:
            raise ConfigError(f"Unknown alpha_objective: {self.alpha_objective!r}")
        for name in ("epochs", "rounds_per_epoch", "permutations", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"'{name}' must be >= 1")
        if not 0.0 <= self.truncation <= 1.0:
            raise ConfigError("'truncation' must lie in [0, 1]")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError("'beta' must lie in [0, 1]")
        if self.xi <= 0:
            raise ConfigError("'xi' must be > 0")
        if self.epsilon < 0 or self.alpha_lr < 0:
            raise ConfigError("'epsilon' and 'alpha_lr' must be >= 0")

    @property
    def lam(self) -> float:
        return 1.0 - self.beta

    @classmethod
    def from_run_config(cls, config: RunConfig, budget: Optional[CostBudget] = None) -> "SearchConfig":
        beta, xi = config.momentum
        train = TrainConfig(
            learning_rate=config.learning_rate,
            batch_size=config.batch_size,
            epochs=config.epochs,
            optimizer=config.optimizer,
            seed=config.seed_for("weights"),
            lr_schedule=config.lr_schedule,
        )
        return cls(
            method=config.method,
            epochs=config.epochs,
            rounds_per_epoch=config.rounds_per_epoch,
            permutations=config.permutations,
            truncation=config.truncation,
            beta=beta,
            xi=xi,
            epsilon=config.epsilon,
            convergence_scale=config.convergence_scale,
            alpha_lr=config.alpha_lr,
            alpha_objective=config.alpha_objective,
            threads=config.threads,
            seed=config.seed,
            train=train,
            budget=budget,
        )


@dataclass
class TrajectoryRecord:
    iteration: int
    epoch: int
    train_loss: float
    val_accuracy: float
    delta_psi: float
    alpha_digest: str
    evaluations: int
    wall_time: float

    def as_row(self, with_wall_time: bool = False) -> Dict[str, Any]:
        row = {
            "iteration": self.iteration,
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_accuracy": self.val_accuracy,
            "delta_psi": self.delta_psi,
            "alpha_digest": self.alpha_digest,
            "evaluations": self.evaluations,
        }
        if with_wall_time:
            row["wall_time"] = self.wall_time
        return row


@dataclass
class SearchTrajectory:
    """Записи по итерациям, дампы Шепли и итог ограничения бюджета"""
    method: str
    records: List[TrajectoryRecord] = field(default_factory=list)
    shapley_rows: List[Dict[str, Any]] = field(default_factory=list)
    converged: bool = False
    budget_result: Optional[BudgetResult] = None

    def append(self, record: TrajectoryRecord) -> None:
        if self.records and record.iteration <= self.records[-1].iteration:
            raise ValueError(
                f"Iteration {record.iteration} after {self.records[-1].iteration}")
        self.records.append(record)

    @property
    def delta_psi(self) -> List[float]:
        return [r.delta_psi for r in self.records]

    def rows(self, with_wall_time: bool = False) -> List[Dict[str, Any]]:
        return [r.as_row(with_wall_time) for r in self.records]

    def timing_rows(self) -> List[Dict[str, Any]]:
        return [{"iteration": r.iteration, "epoch": r.epoch, "wall_time": r.wall_time}
                for r in self.records]


def alpha_digest(supernet: Supernet) -> str:
    return hashlib.sha256(supernet.alpha_vector().tobytes()).hexdigest()[:12]


def _alpha_step(supernet: Supernet, optimizer: Optimizer, lr: float) -> None:
    optimizer.step(supernet.alpha_params(), supernet.alpha_grads(), lr)


def _add_penalty_grads(supernet: Supernet, budget: CostBudget) -> float:
    penalty, grads = bops_penalty(supernet, budget)
    for key, grad in grads.items():
        supernet.edges[key].alpha_grad = supernet.edges[key].alpha_grad + grad
    return penalty


def train_weights_epoch(supernet: Supernet, train_data: Dataset, cfg: SearchConfig,
                        optimizer: Optimizer, epoch: int = 0,
                        rng: Optional[np.random.Generator] = None,
                        alpha_optimizer: Optional[Optimizer] = None,
                        val_data: Optional[Dataset] = None,
                        budget: Optional[CostBudget] = None) -> float:
    """Эпоха обучения общих весов через softmax-смесь.

    Без alpha_optimizer alpha заморожены (SMPQ). С ним alpha делают шаг
    по градиенту потерь train, либо val при alpha_objective == val (DMPQ),
    плюс штраф bops_penalty, если задан budget.
    """
    graph = supernet.graph
    rng = rng if rng is not None else np.random.default_rng(cfg.train.seed)
    lr = cfg.train.lr_at(epoch)
    total, seen = 0.0, 0
    val_batches = None
    if alpha_optimizer is not None and cfg.alpha_objective == AlphaObjective.VAL.value:
        val_batches = iter_batches(len(val_data), cfg.train.batch_size, rng)

    for idx in iter_batches(len(train_data), cfg.train.batch_size, rng):
        mixture_forward(supernet, train_data.inputs[idx])
        loss, _ = backward(graph, train_data.labels[idx])
        if not math.isfinite(loss):
            raise NumericalError(f"Non-finite training loss at epoch {epoch}")
        optimizer.step(graph.params, graph.grads, lr)

        if alpha_optimizer is not None:
            if val_batches is not None:
                vidx = next(val_batches, None)
                if vidx is None:
                    val_batches = iter_batches(len(val_data), cfg.train.batch_size, rng)
                    vidx = next(val_batches)
                mixture_forward(supernet, val_data.inputs[vidx])
                backward(graph, val_data.labels[vidx])
            if budget is not None:
                _add_penalty_grads(supernet, budget)
            _alpha_step(supernet, alpha_optimizer, cfg.alpha_lr)

        total += loss * len(idx)
        seen += len(idx)

    mean = total / seen
    logger.debug(f"Epoch {epoch}: train loss {mean:.5f}")
    return mean


def mixture_accuracy(supernet: Supernet, data: Dataset) -> float:
    return accuracy(predict(supernet.graph, data.inputs, None), data.labels)


def _default_budget(supernet: Supernet, cfg: SearchConfig) -> CostBudget:
    return cfg.budget if cfg.budget is not None else CostBudget.unconstrained(supernet.layer_macs())


def _finish(supernet: Supernet, trajectory: SearchTrajectory, budget: CostBudget,
            events: Optional[EventManager]) -> Tuple[QuantPolicy, SearchTrajectory]:
    result = enforce_budget(supernet, budget)
    trajectory.budget_result = result
    logger.info(f"{trajectory.method.upper()} policy: {result.policy.pairs()}, "
                f"BOPs={result.bops:.4g}, compression={result.compression:.2f}x, "
                f"feasible={result.feasible}")
    if events is not None:
        events.emit(SearchEvents.FINISHED, {"supernet": supernet, "trajectory": trajectory},
                    sender="search")
    return result.policy, trajectory


def smpq_search(supernet: Supernet, train_data: Dataset, val_data: Dataset,
                cfg: SearchConfig,
                events: Optional[EventManager] = None) -> Tuple[QuantPolicy, SearchTrajectory]:
    """Поиск SMPQ: эпоха весов, затем раунд Шепли по замороженным весам"""
    if cfg.method != Method.SMPQ.value:
        raise ConfigError(f"smpq_search called with method {cfg.method!r}")
    if not supernet.calibrated:
        calibrate(supernet, train_data.inputs)

    budget = _default_budget(supernet, cfg)
    players = supernet.players
    rng = np.random.default_rng(derive_seed(cfg.seed, "batches"))
    optimizer = make_optimizer(cfg.train)
    momentum = MomentumState.create(len(players), cfg.beta, cfg.xi)
    monitor = ConvergenceMonitor(cfg.epsilon, cfg.convergence_scale)
    trajectory = SearchTrajectory(Method.SMPQ.value)
    started = time.perf_counter()
    iteration = 0

    for epoch in range(cfg.epochs):
        loss = train_weights_epoch(supernet, train_data, cfg, optimizer, epoch, rng)
        calibrate(supernet, train_data.inputs)

        for _ in range(cfg.rounds_per_epoch):
            frozen = supernet.graph.fingerprint()
            vf = SupernetValueFunction(supernet, val_data, budget)
            estimates = mc_shapley(vf, players, cfg.permutations, cfg.truncation,
                                   derive_seed(cfg.seed, "shapley", iteration), cfg.threads)
            if supernet.graph.fingerprint() != frozen:
                raise NumericalError("Supernet weights changed during a Shapley round")

            momentum = momentum_update(momentum, psi_vector(estimates, players))
            supernet.set_alpha_vector(alpha_update(supernet.alpha_vector(), momentum))
            trajectory.converged = convergence_check(
                monitor, psi_min_per_layer(estimates, supernet.n_layers))

            rows = shapley_dump_rows(estimates, players, iteration)
            trajectory.shapley_rows.extend(rows)
            trajectory.append(TrajectoryRecord(
                iteration=iteration,
                epoch=epoch,
                train_loss=loss,
                val_accuracy=mixture_accuracy(supernet, val_data),
                delta_psi=monitor.history[-1],
                alpha_digest=alpha_digest(supernet),
                evaluations=vf.evaluations,
                wall_time=time.perf_counter() - started,
            ))
            logger.info(f"Round {iteration} (epoch {epoch}): loss={loss:.4f}, "
                        f"V(N)={vf.grand_value:.4f}, delta_psi={monitor.history[-1]:.5g}, "
                        f"evaluations={vf.evaluations}")
            if events is not None:
                events.emit(SearchEvents.SHAPLEY_ROUND,
                            {"iteration": iteration, "rows": rows}, sender="search")
            iteration += 1
            if trajectory.converged:
                break

        if events is not None:
            events.emit(SearchEvents.EPOCH_END, {"epoch": epoch, "supernet": supernet},
                        sender="search")
        if trajectory.converged:
            logger.info(f"Converged after {iteration} rounds: "
                        f"delta_psi={monitor.history[-1]:.5g} < {cfg.epsilon}")
            if events is not None:
                events.emit(SearchEvents.CONVERGED, {"iteration": iteration - 1}, sender="search")
            break

    return _finish(supernet, trajectory, budget, events)


def dmpq_search(supernet: Supernet, train_data: Dataset, val_data: Dataset,
                cfg: SearchConfig,
                events: Optional[EventManager] = None) -> Tuple[QuantPolicy, SearchTrajectory]:
    """Дифференцируемый поиск: alpha обучаются градиентом через смесь"""
    if cfg.method != Method.DMPQ.value:
        raise ConfigError(f"dmpq_search called with method {cfg.method!r}")
    if not supernet.calibrated:
        calibrate(supernet, train_data.inputs)

    budget = _default_budget(supernet, cfg)
    rng = np.random.default_rng(derive_seed(cfg.seed, "batches"))
    optimizer = make_optimizer(cfg.train)
    alpha_optimizer = Adam(cfg.alpha_lr)
    trajectory = SearchTrajectory(Method.DMPQ.value)
    started = time.perf_counter()

    for epoch in range(cfg.epochs):
        loss = train_weights_epoch(supernet, train_data, cfg, optimizer, epoch, rng,
                                   alpha_optimizer=alpha_optimizer, val_data=val_data,
                                   budget=budget)
        calibrate(supernet, train_data.inputs)
        trajectory.append(TrajectoryRecord(
            iteration=epoch,
            epoch=epoch,
            train_loss=loss,
            val_accuracy=mixture_accuracy(supernet, val_data),
            delta_psi=float("nan"),
            alpha_digest=alpha_digest(supernet),
            evaluations=0,
            wall_time=time.perf_counter() - started,
        ))
        logger.info(f"Epoch {epoch}: loss={loss:.4f}, "
                    f"val_accuracy={trajectory.records[-1].val_accuracy:.4f}")
        if events is not None:
            events.emit(SearchEvents.EPOCH_END, {"epoch": epoch, "supernet": supernet},
                        sender="search")

    return _finish(supernet, trajectory, budget, events)


def run_search(supernet: Supernet, train_data: Dataset, val_data: Dataset,
               cfg: SearchConfig,
               events: Optional[EventManager] = None) -> Tuple[QuantPolicy, SearchTrajectory]:
    if cfg.method == Method.DMPQ.value:
        return dmpq_search(supernet, train_data, val_data, cfg, events)
    return smpq_search(supernet, train_data, val_data, cfg, events)


@dataclass
class FinetuneResult:
    graph: ComputeGraph
    metrics: Dict[str, Any]
    losses: List[float] = field(default_factory=list)


def evaluate_graph(graph: ComputeGraph, data: Dataset) -> float:
    return accuracy(predict(graph, data.inputs), data.labels)


def train_graph(graph: ComputeGraph, data: Dataset, train_cfg: TrainConfig) -> List[float]:
    """Обучение сети фиксированной точности; возвращает потери по эпохам"""
    optimizer = make_optimizer(train_cfg)
    rng = np.random.default_rng(train_cfg.seed)
    losses = []
    for epoch in range(train_cfg.epochs):
        lr = train_cfg.lr_at(epoch)
        total = 0.0
        for idx in iter_batches(len(data), train_cfg.batch_size, rng):
            forward(graph, data.inputs[idx])
            loss, _ = backward(graph, data.labels[idx])
            optimizer.step(graph.params, graph.grads, lr)
            total += loss * len(idx)
        losses.append(total / len(data))
    return losses


def finetune(supernet: Supernet, policy: QuantPolicy, train_data: Dataset, val_data: Dataset,
             train_cfg: TrainConfig, budget: Optional[CostBudget] = None) -> FinetuneResult:
    """Дообучение сети с политикой; веса наследуются из суперсети"""
    calibrate(supernet, train_data.inputs)
    graph = apply_policy(supernet, policy)
    budget = budget if budget is not None else CostBudget.unconstrained(supernet.layer_macs())
    losses = train_graph(graph, train_data, train_cfg)
    bops, compression = policy_bops(policy, budget)
    metrics = {
        "train_accuracy": evaluate_graph(graph, train_data),
        "val_accuracy": evaluate_graph(graph, val_data),
        "bops": bops,
        "compression": compression,
        "epochs": train_cfg.epochs,
        "policy": policy.pairs(),
    }
    logger.info(f"Finetuned {policy.pairs()} for {train_cfg.epochs} epochs: "
                f"val_accuracy={metrics['val_accuracy']:.4f}")
    return FinetuneResult(graph, metrics, losses)


class SearchModule(ModuleInterface):
    def setup(self, kernel):
        self.kernel = kernel
        self.metadata = ModuleMetadata(
            name="system.search",
            version="1.0.0",
            description="Поиск политики SMPQ/DMPQ и дообучение",
            dependencies=["system.supernet", "system.game", "system.cost", "system.data"]
        )
        return self

    def get_commands(self):
        from modules.system.search.commands import (
            cmd_eval, cmd_finetune, cmd_search, cmd_shapley_exact,
        )
        return {
            "search": cmd_search,
            "finetune": cmd_finetune,
            "eval": cmd_eval,
            "shapley-exact": cmd_shapley_exact,
        }
