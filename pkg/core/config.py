import hashlib
import logging
import os
from dataclasses import dataclass, fields, asdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml
from dotenv import load_dotenv

from core.constants import (
    DEFAULT_CONFIG, ENV_PREFIX, MOMENTUM_PRESETS, SEARCH_SPACES,
    Method, OptimizerKind, LrSchedule, SyntheticKind, AlphaObjective,
    EdgeKind, MIN_BITS, MAX_BITS,
)
from core.exceptions import ConfigError

logger = logging.getLogger('config')


def derive_seed(master: int, component: str, *indices: int) -> int:
    """Детерминированный 64-битный под-сид компонента"""
    key = ":".join([str(int(master)), component, *(str(int(i)) for i in indices)])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass
class RunConfig:
    """Полная конфигурация запуска (плоский YAML)"""
    seed: int
    out: str
    threads: int
    log_level: str

    dataset: str
    n_samples: int
    noise: float
    classes: int
    val_fraction: float
    idx_images: Optional[str]
    idx_labels: Optional[str]

    network: List[int]
    layers: Optional[List[Dict[str, Any]]]

    search_space: str
    weight_bits: Optional[List[int]]
    act_bits: Optional[List[int]]

    optimizer: str
    learning_rate: float
    batch_size: int
    lr_schedule: str

    method: str
    epochs: int
    rounds_per_epoch: int
    permutations: int
    truncation: float
    momentum_preset: str
    beta: Optional[float]
    xi: Optional[float]
    epsilon: float
    convergence_scale: float
    alpha_lr: float
    alpha_objective: str

    omega0: Optional[float]
    compression: Optional[float]
    mu: float

    finetune_epochs: int
    probe_epochs: int
    checkpoint_every: int
    analysis_k: int
    analysis_seeds: List[int]
    artifacts: Optional[str]
    probe_layer: int
    probe_kind: str
    edits: Optional[List[Dict[str, Any]]]
    ablation_kind: str
    ablation_values: Optional[List[Any]]
    exact_permutations: int

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "RunConfig":
        """Сборка конфигурации поверх значений по умолчанию"""
        known = set(DEFAULT_CONFIG)
        for key in values:
            if key not in known:
                raise ConfigError(f"Unknown config key: '{key}'")

        merged = {**DEFAULT_CONFIG, **values}
        for f in fields(cls):
            merged[f.name] = _coerce(f.name, f.type, merged[f.name])
        config = cls(**merged)
        config.validate()
        return config

    def validate(self) -> None:
        """Проверка значений до начала работы"""
        _check_choice("method", self.method, Method)
        _check_choice("optimizer", self.optimizer, OptimizerKind)
        _check_choice("lr_schedule", self.lr_schedule, LrSchedule)
        _check_choice("alpha_objective", self.alpha_objective, AlphaObjective)
        _check_choice("probe_kind", self.probe_kind, EdgeKind)
        if self.ablation_kind not in ("samples", "truncation", "momentum"):
            raise ConfigError(f"'ablation_kind' must be one of samples, truncation, momentum, "
                              f"got '{self.ablation_kind}'")
        if self.dataset != "idx":
            _check_choice("dataset", self.dataset, SyntheticKind)
        elif not (self.idx_images and self.idx_labels):
            raise ConfigError("dataset 'idx' requires idx_images and idx_labels")

        for name in ("threads", "n_samples", "classes", "batch_size", "epochs",
                     "rounds_per_epoch", "permutations", "analysis_k",
                     "exact_permutations"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"'{name}' must be >= 1")
        for name in ("finetune_epochs", "probe_epochs", "checkpoint_every"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(f"'{name}' must be >= 0")

        if self.learning_rate < 0:
            raise ConfigError("'learning_rate' must be >= 0")
        if self.alpha_lr < 0:
            raise ConfigError("'alpha_lr' must be >= 0")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("'val_fraction' must lie in (0, 1)")
        if not 0.0 <= self.truncation <= 1.0:
            raise ConfigError("'truncation' must lie in [0, 1]")
        if self.noise < 0:
            raise ConfigError("'noise' must be >= 0")
        if self.epsilon < 0:
            raise ConfigError("'epsilon' must be >= 0")
        if self.mu < 0:
            raise ConfigError("'mu' must be >= 0")
        if self.omega0 is not None and self.omega0 <= 0:
            raise ConfigError("'omega0' must be > 0")
        if self.compression is not None and self.compression <= 0:
            raise ConfigError("'compression' must be > 0")
        if self.omega0 is not None and self.compression is not None:
            raise ConfigError("set either 'omega0' or 'compression', not both")

        if self.momentum_preset not in MOMENTUM_PRESETS:
            raise ConfigError(f"Unknown momentum_preset: '{self.momentum_preset}'")
        beta, xi = self.momentum
        if not 0.0 <= beta <= 1.0:
            raise ConfigError("'beta' must lie in [0, 1]")
        if xi <= 0:
            raise ConfigError("'xi' must be > 0")

        if self.weight_bits is None and self.act_bits is None:
            if self.search_space not in SEARCH_SPACES:
                raise ConfigError(f"Unknown search_space: '{self.search_space}'")
        elif self.weight_bits is None or self.act_bits is None:
            raise ConfigError("explicit bit lists need both weight_bits and act_bits")
        for bits in self.bit_lists:
            if not bits:
                raise ConfigError("bit lists must be non-empty")
            for b in bits:
                if not MIN_BITS <= int(b) <= MAX_BITS:
                    raise ConfigError(f"bit-width {b} outside [{MIN_BITS}, {MAX_BITS}]")

        if not self.network and not self.layers:
            raise ConfigError("either 'network' or 'layers' must describe the model")

    @property
    def momentum(self):
        """(beta, xi) с учётом пресета"""
        preset_beta, preset_xi = MOMENTUM_PRESETS[self.momentum_preset]
        beta = preset_beta if self.beta is None else float(self.beta)
        xi = preset_xi if self.xi is None else float(self.xi)
        return beta, xi

    @property
    def bit_lists(self):
        if self.weight_bits is not None:
            return list(self.weight_bits), list(self.act_bits)
        weights, acts = SEARCH_SPACES[self.search_space]
        return list(weights), list(acts)

    @property
    def space_name(self) -> str:
        return "custom" if self.weight_bits is not None else self.search_space

    def seed_for(self, component: str, *indices: int) -> int:
        return derive_seed(self.seed, component, *indices)

    def to_dict(self) -> Dict[str, Any]:
        """Разрешённая конфигурация для записи в артефакты"""
        data = asdict(self)
        data["beta"], data["xi"] = self.momentum
        return data

    def replace(self, **changes: Any) -> "RunConfig":
        data = asdict(self)
        data.update(changes)
        return RunConfig.from_dict(data)


_SCALARS = {int: int, float: float, str: str,
            Optional[float]: float, Optional[str]: str}


def _coerce(name: str, annotation: Any, value: Any) -> Any:
    """Приведение скалярных значений (YAML читает '1e-3' как строку)"""
    if value is None:
        if annotation in (int, float, str):
            raise ConfigError(f"'{name}' must not be null")
        return None
    cast = _SCALARS.get(annotation)
    if cast is None:
        return value
    if cast is not str and isinstance(value, bool):
        raise ConfigError(f"'{name}' must be numeric, got {value!r}")
    try:
        return cast(value)
    except (TypeError, ValueError):
        raise ConfigError(f"'{name}' has invalid value {value!r}")


def _check_choice(name: str, value: Any, enum_cls) -> None:
    allowed = [e.value for e in enum_cls]
    if value not in allowed:
        raise ConfigError(f"'{name}' must be one of {allowed}, got '{value}'")


def _env_overrides(environ: Dict[str, str]) -> Dict[str, Any]:
    """Переопределения из переменных окружения SMPQ_<KEY>"""
    overrides: Dict[str, Any] = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower()
        if key not in DEFAULT_CONFIG:
            logger.warning(f"Ignoring unknown environment variable {name}")
            continue
        try:
            overrides[key] = yaml.safe_load(raw)
        except yaml.YAMLError as e:
            raise ConfigError(f"Cannot parse {name}: {e}")
    return overrides


def load_config(path: Optional[Union[str, Path]] = None,
                overrides: Optional[Dict[str, Any]] = None,
                environ: Optional[Dict[str, str]] = None) -> RunConfig:
    """Загрузка конфигурации: флаги > окружение > файл > умолчания"""
    values: Dict[str, Any] = {}

    if path is not None:
        config_path = Path(path)
        if not config_path.exists():
            raise ConfigError(f"Configuration file not found: {config_path}")
        with open(config_path, 'r', encoding='utf-8') as f:
            try:
                loaded = yaml.safe_load(f)
            except yaml.YAMLError as e:
                raise ConfigError(f"Invalid YAML in {config_path}: {e}")
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError("Configuration must be a flat key-value mapping")
        values.update(loaded)

    if environ is None:
        load_dotenv()
        environ = dict(os.environ)
    values.update(_env_overrides(environ))

    values.update({k: v for k, v in (overrides or {}).items() if v is not None})

    config = RunConfig.from_dict(values)
    logger.debug(f"Resolved config: {config.to_dict()}")
    return config
