#constants.py
from enum import Enum
from typing import Dict, Any, Tuple


class Method(str, Enum):
    SMPQ = "smpq"
    DMPQ = "dmpq"


class EdgeKind(str, Enum):
    WEIGHT = "weight"
    ACTIVATION = "activation"


class OptimizerKind(str, Enum):
    SGD = "sgd"
    ADAM = "adam"


class LrSchedule(str, Enum):
    CONSTANT = "constant"
    COSINE = "cosine"


class SyntheticKind(str, Enum):
    GAUSSIANS = "gaussians"
    MOONS = "moons"
    SPIRALS = "spirals"


class AlphaObjective(str, Enum):
    TRAIN = "train"
    VAL = "val"


# Полная точность: ребро пропускает тензор без квантования
FULL_PRECISION = 32
MIN_BITS = 1
MAX_BITS = 32

# Предустановки пространств поиска: (биты весов, биты активаций)
SEARCH_SPACES: Dict[str, Tuple[Tuple[int, ...], Tuple[int, ...]]] = {
    "S1": ((2, 3, 4, 5, 6, 7, 8), (4,)),
    "S1-table": ((2, 3, 4, 5, 6, 7, 8), (4,)),
    "S1-text": ((2, 3, 4, 5, 6, 7, 8), (2,)),
    "S2": ((1, 2, 3, 4), (2, 3, 4)),
    "S3": ((2, 3, 4, 5, 6, 7, 8), (2, 3, 4, 5, 6, 7, 8)),
}

# Предустановки (beta, xi) для импульса
MOMENTUM_PRESETS: Dict[str, Tuple[float, float]] = {
    "table": (0.8, 0.1),
    "ablation": (0.75, 0.05),
}

# Настройки по умолчанию
DEFAULT_CONFIG: Dict[str, Any] = {
    # Запуск
    "seed": 0,
    "out": "runs/default",
    "threads": 1,
    "log_level": "INFO",

    # Данные
    "dataset": "gaussians",
    "n_samples": 400,
    "noise": 0.5,
    "classes": 2,
    "val_fraction": 0.25,
    "idx_images": None,
    "idx_labels": None,

    # Сеть
    "network": [2, 16, 2],
    "layers": None,

    # Пространство поиска
    "search_space": "S2",
    "weight_bits": None,
    "act_bits": None,

    # Обучение весов
    "optimizer": "adam",
    "learning_rate": 0.01,
    "batch_size": 32,
    "lr_schedule": "constant",

    # Поиск
    "method": "smpq",
    "epochs": 5,
    "rounds_per_epoch": 1,
    "permutations": 10,
    "truncation": 0.5,
    "momentum_preset": "table",
    "beta": None,
    "xi": None,
    "epsilon": 0.0,
    "convergence_scale": 50.0,
    "alpha_lr": 0.01,
    "alpha_objective": "train",

    # Бюджет
    "omega0": None,
    "compression": None,
    "mu": 1.0,

    # Дообучение и эксперименты
    "finetune_epochs": 5,
    "probe_epochs": 10,
    "checkpoint_every": 0,
    "analysis_k": 10,
    "analysis_seeds": [0, 1, 2, 3, 4],
    "artifacts": None,
    "probe_layer": 0,
    "probe_kind": "weight",
    "edits": None,
    "ablation_kind": "samples",
    "ablation_values": None,
    "exact_permutations": 2000,
}

ENV_PREFIX = "SMPQ_"


class SearchEvents:
    EPOCH_END = "search.epoch_end"
    SHAPLEY_ROUND = "search.shapley_round"
    CONVERGED = "search.converged"
    FINISHED = "search.finished"


class ErrorCodes:
    SUCCESS = 0
    UNKNOWN_ERROR = 1
    CONFIG_ERROR = 2
    DATA_ERROR = 3
    NUMERICAL_ERROR = 4


# Формат чекпоинта
CHECKPOINT_MAGIC = b"BSHP"
CHECKPOINT_VERSION = 1

# Имена артефактов в выходной директории
ARTIFACTS = {
    "policy": "policy.json",
    "trajectory": "trajectory.csv",
    "timings": "timings.csv",
    "shapley": "shapley.csv",
    "supernet": "supernet.ckpt",
    "final": "final.ckpt",
    "metrics": "metrics.json",
    "log": "search.log",
}

# Опорное значение tau для SMPQ на ImageNet1K
REFERENCE_TAU_SMPQ = 0.494
