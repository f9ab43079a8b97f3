from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List


@dataclass
class ModuleMetadata:
    """Метаданные модуля"""
    name: str
    version: str
    description: str = ""
    dependencies: List[str] = field(default_factory=list)


class ModuleInterface(ABC):
    """Базовый интерфейс для всех модулей"""

    metadata: ModuleMetadata

    @abstractmethod
    def setup(self, kernel: Any) -> "ModuleInterface":
        """Инициализация модуля"""
        pass

    def cleanup(self) -> None:
        """Очистка ресурсов модуля"""
        pass

    def get_commands(self) -> Dict[str, Callable]:
        """Команды модуля: имя -> обработчик"""
        return {}
