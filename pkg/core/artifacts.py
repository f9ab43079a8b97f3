import json
import logging
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from core.config import RunConfig
from core.constants import ARTIFACTS, SearchEvents
from core.events import Event, EventManager
from core.exceptions import ArtifactError


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


class ArtifactWriter:
    """Запись артефактов запуска; каждый файл несёт конфигурацию и сид"""

    def __init__(self, out: Union[str, Path], config: RunConfig):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.config = config
        self.logger = logging.getLogger('artifacts')
        self._shapley_rows: List[Dict[str, Any]] = []
        self._checkpoint_every = 0
        self._checkpoint_fn: Optional[Callable[[Path, Any], None]] = None

    def path(self, name: str) -> Path:
        return self.out / ARTIFACTS.get(name, name)

    @property
    def provenance(self) -> Dict[str, Any]:
        return {"seed": self.config.seed, "config": self.config.to_dict()}

    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        path = self.path(name)
        document = _jsonable({**payload, "provenance": self.provenance})
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(document, f, indent=2, sort_keys=True)
            f.write("\n")
        self.logger.debug(f"Wrote {path}")
        return path

    def write_table(self, name: str, rows: Iterable[Dict[str, Any]],
                    columns: Optional[Sequence[str]] = None) -> Path:
        """CSV с заголовком-комментарием (# seed, # config)"""
        path = self.path(name)
        frame = pd.DataFrame(list(rows), columns=list(columns) if columns else None)
        with open(path, 'w', encoding='utf-8', newline='') as f:
            f.write(f"# seed: {self.config.seed}\n")
            f.write(f"# config: {json.dumps(_jsonable(self.config.to_dict()), sort_keys=True)}\n")
            frame.to_csv(f, index=False)
        self.logger.debug(f"Wrote {path} ({len(frame)} rows)")
        return path

    def attach(self, events: EventManager, checkpoint_every: int = 0,
               checkpoint_fn: Optional[Callable[[Path, Any], None]] = None) -> None:
        """Подписка на события поиска: дампы Шепли и промежуточные чекпоинты"""
        self._checkpoint_every = checkpoint_every
        self._checkpoint_fn = checkpoint_fn
        events.subscribe(SearchEvents.SHAPLEY_ROUND, self._on_shapley_round)
        events.subscribe(SearchEvents.EPOCH_END, self._on_epoch_end)

    def detach(self, events: EventManager) -> None:
        events.unsubscribe(SearchEvents.SHAPLEY_ROUND, self._on_shapley_round)
        events.unsubscribe(SearchEvents.EPOCH_END, self._on_epoch_end)

    def _on_shapley_round(self, event: Event) -> None:
        self._shapley_rows.extend(event.data["rows"])
        self.write_table("shapley", self._shapley_rows)

    def _on_epoch_end(self, event: Event) -> None:
        epoch = event.data["epoch"]
        if not self._checkpoint_every or self._checkpoint_fn is None:
            return
        if (epoch + 1) % self._checkpoint_every == 0:
            path = self.out / f"supernet_epoch{epoch}.ckpt"
            self._checkpoint_fn(path, event.data["supernet"])
            self.logger.info(f"Checkpoint saved: {path}")


def read_json(directory: Union[str, Path], name: str) -> Dict[str, Any]:
    path = Path(directory) / ARTIFACTS.get(name, name)
    if not path.exists():
        raise ArtifactError(f"Missing artifact: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise ArtifactError(f"Corrupted artifact {path}: {e}")


def read_table(directory: Union[str, Path], name: str) -> pd.DataFrame:
    path = Path(directory) / ARTIFACTS.get(name, name)
    if not path.exists():
        raise ArtifactError(f"Missing artifact: {path}")
    return pd.read_csv(path, comment="#")
