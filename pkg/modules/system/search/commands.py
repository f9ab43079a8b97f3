# modules/system/search/commands.py
import logging
from pathlib import Path
from typing import Any, Dict, Optional

from core.artifacts import ArtifactWriter, read_json
from core.config import RunConfig
from core.exceptions import ArtifactError, CheckpointError, GameSizeError
from modules.system.cost.main import policy_bops
from modules.system.game.main import (
    MAX_EXACT_PLAYERS, SupernetValueFunction, exact_shapley, mc_shapley,
)
from modules.system.search.main import (
    SearchConfig, evaluate_graph, finetune, run_search, train_weights_epoch,
)
from modules.system.search.workspace import load_supernet, prepare, save_supernet
from modules.system.supernet.main import (
    apply_policy, calibrate, policy_from_dict, policy_to_dict,
)
from modules.system.tensor_core.checkpoint import load_checkpoint, save_checkpoint
from modules.system.tensor_core.optim import TrainConfig, make_optimizer

logger = logging.getLogger('commands')

TRAJECTORY_COLUMNS = ["iteration", "epoch", "train_loss", "val_accuracy",
                      "delta_psi", "alpha_digest", "evaluations"]
SHAPLEY_COLUMNS = ["iteration", "layer", "kind", "bit", "psi", "samples", "variance"]


def finetune_config(config: RunConfig, epochs: Optional[int] = None, component: str = "finetune") -> TrainConfig:
    return TrainConfig(
        learning_rate=config.learning_rate,
        batch_size=config.batch_size,
        epochs=config.finetune_epochs if epochs is None else epochs,
        optimizer=config.optimizer,
        seed=config.seed_for(component),
        lr_schedule=config.lr_schedule,
    )


def cmd_search(kernel, config: RunConfig) -> Dict[str, Any]:
    """Поиск политики, дообучение и запись артефактов"""
    ws = prepare(config)
    writer = ArtifactWriter(config.out, config)
    writer.attach(kernel.events, config.checkpoint_every, save_supernet)
    try:
        cfg = SearchConfig.from_run_config(config, ws.budget)
        policy, trajectory = run_search(ws.supernet, ws.train, ws.val, cfg, kernel.events)
    finally:
        writer.detach(kernel.events)

    result = trajectory.budget_result
    writer.write_json("policy", policy_to_dict(
        policy, config.space_name, config.seed, result.bops,
        method=config.method, compression=result.compression, feasible=result.feasible,
        converged=trajectory.converged))
    writer.write_table("trajectory", trajectory.rows(), TRAJECTORY_COLUMNS)
    writer.write_table("timings", trajectory.timing_rows())
    if trajectory.shapley_rows:
        writer.write_table("shapley", trajectory.shapley_rows, SHAPLEY_COLUMNS)
    save_supernet(writer.path("supernet"), ws.supernet)

    tuned = finetune(ws.supernet, policy, ws.train, ws.val, finetune_config(config), ws.budget)
    save_checkpoint(writer.path("final"), tuned.graph.state_dict())
    writer.write_json("metrics", tuned.metrics)

    return {
        "policy": policy.pairs(),
        "bops": result.bops,
        "compression": result.compression,
        "feasible": result.feasible,
        "val_accuracy": tuned.metrics["val_accuracy"],
        "out": str(writer.out),
    }


def _artifacts_dir(config: RunConfig) -> Path:
    directory = Path(config.artifacts or config.out)
    if not directory.is_dir():
        raise ArtifactError(f"Artifact directory not found: {directory}")
    return directory


def cmd_finetune(kernel, config: RunConfig) -> Dict[str, Any]:
    """Дообучение политики из артефактов предыдущего поиска"""
    directory = _artifacts_dir(config)
    policy = policy_from_dict(read_json(directory, "policy"))
    ws = prepare(config)
    supernet_path = directory / "supernet.ckpt"
    if not supernet_path.exists():
        raise ArtifactError(f"Missing artifact: {supernet_path}")
    load_supernet(supernet_path, ws.supernet)

    tuned = finetune(ws.supernet, policy, ws.train, ws.val, finetune_config(config), ws.budget)
    writer = ArtifactWriter(config.out, config)
    save_checkpoint(writer.path("final"), tuned.graph.state_dict())
    writer.write_json("metrics", tuned.metrics)
    return tuned.metrics


def cmd_eval(kernel, config: RunConfig, checkpoint: Optional[str] = None,
             policy_path: Optional[str] = None) -> Dict[str, Any]:
    """Точность, BOPs и сжатие сохранённой сети с политикой"""
    directory = Path(config.artifacts or config.out)
    policy_file = Path(policy_path) if policy_path else directory / "policy.json"
    checkpoint_file = Path(checkpoint) if checkpoint else directory / "final.ckpt"
    policy = policy_from_dict(read_json(policy_file.parent, policy_file.name))
    arrays = load_checkpoint(checkpoint_file)

    ws = prepare(config)
    stored_layers = sum(1 for name in arrays
                        if name.endswith(".weight") and not name.startswith("alpha."))
    if stored_layers != len(policy) or len(policy) != ws.supernet.n_layers:
        raise CheckpointError(
            f"Policy has {len(policy)} layers, checkpoint {stored_layers}, "
            f"network {ws.supernet.n_layers}")

    graph = apply_policy(ws.supernet, policy)
    graph.load_state(arrays)
    bops, compression = policy_bops(policy, ws.budget)
    return {
        "train_accuracy": evaluate_graph(graph, ws.train),
        "val_accuracy": evaluate_graph(graph, ws.val),
        "bops": bops,
        "compression": compression,
    }


def cmd_shapley_exact(kernel, config: RunConfig) -> Dict[str, Any]:
    """Точные psi перебором и отклонение Монте-Карло оценки от них"""
    ws = prepare(config)
    players = ws.supernet.players
    if len(players) > MAX_EXACT_PLAYERS:
        raise GameSizeError(
            f"{len(players)} players exceed the enumeration limit of {MAX_EXACT_PLAYERS}; "
            f"use 'search' (Monte-Carlo estimation) instead")

    cfg = SearchConfig.from_run_config(config, ws.budget)
    optimizer = make_optimizer(cfg.train)
    for epoch in range(cfg.epochs):
        train_weights_epoch(ws.supernet, ws.train, cfg, optimizer, epoch)
    calibrate(ws.supernet, ws.train.inputs)

    vf = SupernetValueFunction(ws.supernet, ws.val, ws.budget)
    exact = exact_shapley(vf, players)
    sampled = mc_shapley(vf, players, config.exact_permutations, 0.0,
                         config.seed_for("shapley-exact"), config.threads)

    rows = [{
        "layer": p.layer,
        "kind": p.kind,
        "bit": p.bit,
        "psi_exact": exact[p].psi,
        "psi_mc": sampled[p].psi,
        "abs_deviation": abs(exact[p].psi - sampled[p].psi),
    } for p in players]
    max_deviation = max(row["abs_deviation"] for row in rows)
    efficiency_gap = sum(e.psi for e in exact.values()) - (vf.grand_value - vf.empty_value)

    writer = ArtifactWriter(config.out, config)
    writer.write_table("shapley_exact.csv", rows)
    summary = {
        "players": len(players),
        "v_empty": vf.empty_value,
        "v_full": vf.grand_value,
        "efficiency_gap": efficiency_gap,
        "max_deviation": max_deviation,
        "permutations": config.exact_permutations,
    }
    writer.write_json("shapley_exact.json", summary)
    logger.info(f"Exact vs MC ({config.exact_permutations} permutations): "
                f"max deviation {max_deviation:.5f}")
    return summary
