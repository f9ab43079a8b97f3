# modules/system/search/workspace.py
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np

from core.config import RunConfig
from core.constants import EdgeKind
from core.exceptions import CheckpointError, GraphError
from modules.system.cost.main import CostBudget
from modules.system.data.main import Dataset, gen_synthetic, load_idx, split
from modules.system.quantization.main import QuantizerState
from modules.system.supernet.main import SearchSpace, Supernet, build_supernet, calibrate
from modules.system.tensor_core.checkpoint import load_checkpoint, save_checkpoint
from modules.system.tensor_core.main import build_network, mlp_spec

logger = logging.getLogger('workspace')


@dataclass
class Workspace:
    """Данные, суперсеть и бюджет одного запуска"""
    config: RunConfig
    train: Dataset
    val: Dataset
    supernet: Supernet
    budget: CostBudget


def load_dataset(config: RunConfig) -> Dataset:
    if config.dataset == "idx":
        return load_idx(config.idx_images, config.idx_labels, classes=config.classes)
    return gen_synthetic(config.dataset, config.n_samples, config.noise,
                         config.seed_for("data"), classes=config.classes)


def network_spec(config: RunConfig, sample_shape) -> List[Dict[str, Any]]:
    if config.layers:
        spec = [dict(d) for d in config.layers]
        if spec[0].get("type") != "input":
            spec.insert(0, {"type": "input", "shape": list(sample_shape)})
        return spec
    sizes = list(config.network)
    if (sizes[0],) != tuple(sample_shape):
        raise GraphError(f"network input size {sizes[0]} does not match samples {sample_shape}")
    return mlp_spec(sizes)


def build_budget(config: RunConfig, supernet: Supernet) -> CostBudget:
    macs = supernet.layer_macs()
    if config.omega0 is not None:
        return CostBudget(config.omega0, tuple(macs), config.mu)
    if config.compression is not None:
        return CostBudget.from_compression(macs, config.compression, config.mu)
    return CostBudget.unconstrained(macs, config.mu)


def prepare(config: RunConfig) -> Workspace:
    """Сборка всего, что нужно команде, из конфигурации и мастер-сида"""
    dataset = load_dataset(config)
    train, val = split(dataset, config.val_fraction, config.seed_for("split"))
    graph = build_network(network_spec(config, dataset.sample_shape), config.seed_for("init"))
    if graph.output_size != dataset.classes:
        raise GraphError(f"Network emits {graph.output_size} logits for {dataset.classes} classes")

    weights, acts = config.bit_lists
    space = SearchSpace(tuple(weights), tuple(acts), config.space_name)
    supernet = build_supernet(graph, space)
    calibrate(supernet, train.inputs)
    budget = build_budget(config, supernet)
    logger.info(f"Workspace: {len(train)} train / {len(val)} val samples, "
                f"{supernet.n_layers} layers, omega0={budget.omega0:.4g}")
    return Workspace(config, train, val, supernet, budget)


def supernet_arrays(supernet: Supernet) -> Dict[str, np.ndarray]:
    """Веса, alpha и диапазоны активаций для чекпоинта"""
    arrays = dict(supernet.graph.state_dict())
    arrays.update({name: value.copy() for name, value in supernet.alpha_params().items()})
    for (layer, kind), edge in supernet.edges.items():
        if kind == EdgeKind.ACTIVATION.value:
            state = edge.states[0]
            arrays[f"clip.{layer}"] = np.array([state.clip_max, float(state.signed)])
    return arrays


def save_supernet(path: Union[str, Path], supernet: Supernet) -> Path:
    return save_checkpoint(path, supernet_arrays(supernet))


def restore_supernet(supernet: Supernet, arrays: Dict[str, np.ndarray]) -> None:
    supernet.graph.load_state(arrays)
    for name, alpha in supernet.alpha_params().items():
        if name not in arrays or arrays[name].shape != alpha.shape:
            raise CheckpointError(f"Checkpoint lacks or mismatches '{name}'")
        alpha[...] = arrays[name]
    for (layer, kind), edge in supernet.edges.items():
        key = f"clip.{layer}"
        if kind == EdgeKind.ACTIVATION.value and key in arrays:
            clip_max, signed = arrays[key]
            edge.states = [QuantizerState(float(clip_max), signed=bool(signed))] * len(edge.candidates)
    supernet.calibrated = True


def load_supernet(path: Union[str, Path], supernet: Supernet) -> Supernet:
    restore_supernet(supernet, load_checkpoint(path))
    return supernet
