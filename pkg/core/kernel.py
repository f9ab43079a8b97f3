import importlib
import logging
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import yaml

from core.config import RunConfig
from core.events import EventManager
from core.module_api import ModuleInterface
from core.registry import Registry


class Kernel:
    # Порядок загрузки системных модулей: зависимости раньше зависимых
    CORE_MODULES = [
        "system.tensor_core",
        "system.quantization",
        "system.supernet",
        "system.cost",
        "system.data",
        "system.game",
        "system.search",
        "system.analysis",
    ]

    def __init__(self, modules_path: Optional[Path] = None):
        self.logger = logging.getLogger('kernel')
        self._modules: Dict[str, ModuleInterface] = {}
        self._services: Dict[str, Any] = {}
        self._modules_path = modules_path or Path(__file__).parent.parent / 'modules'
        self._initialized = False

    def init(self) -> "Kernel":
        """Инициализация ядра: события, реестр, модули"""
        if self._initialized:
            return self
        self._event_manager = EventManager()
        self._services['events'] = self._event_manager
        self._registry = Registry()
        self._services['registry'] = self._registry

        self._load_modules()
        self._check_dependencies()
        self._initialized = True
        return self

    def _load_modules(self) -> None:
        self.logger.debug("Loading core modules...")
        for module_name in self.CORE_MODULES:
            try:
                self._load_module(module_name)
            except Exception as e:
                self.logger.error(f"Failed to load core module {module_name}: {e}")
                raise
        self.logger.debug(f"Loaded {len(self._modules)} modules")

    def _check_dependencies(self) -> None:
        for module_name, module in self._modules.items():
            for dependency in module.metadata.dependencies:
                if dependency not in self._modules:
                    self.logger.warning(
                        f"Module {module_name} depends on {dependency} which is not loaded")

    def _load_module(self, module_name: str) -> None:
        """Импорт main.py модуля, поиск класса ModuleInterface и регистрация команд"""
        module_path = self._modules_path.joinpath(*module_name.split('.'))
        if not (module_path / "main.py").exists():
            raise FileNotFoundError(f"Module file not found: {module_path / 'main.py'}")

        module_config = {}
        config_file = module_path / "config.yml"
        if config_file.exists():
            with open(config_file, 'r', encoding='utf-8') as f:
                module_config = yaml.safe_load(f) or {}

        module = importlib.import_module(f"modules.{module_name}.main")
        for attr_name in dir(module):
            attr = getattr(module, attr_name)
            if (isinstance(attr, type) and issubclass(attr, ModuleInterface)
                    and attr is not ModuleInterface and attr.__module__ == module.__name__):
                instance = attr()
                instance.config = module_config
                instance.setup(self)
                self._modules[module_name] = instance
                self._registry.register_module(module_name, instance,
                                               {"version": instance.metadata.version})
                for command, handler in instance.get_commands().items():
                    if not self._registry.register_command(module_name, command, handler):
                        raise ValueError(f"Command '{command}' registered twice")
                self.logger.debug(f"Loaded module: {module_name}")
                return

        raise ValueError(f"No module class found in {module_name}")

    def run(self, command: str, config: RunConfig, **kwargs: Any) -> Any:
        """Выполнение зарегистрированной команды"""
        self.init()
        handler: Optional[Callable] = self._registry.get_command_handler(command)
        if handler is None:
            raise KeyError(f"Unknown command: {command}")
        self.logger.info(f"Running '{command}' (seed={config.seed}, out={config.out})")
        return handler(self, config, **kwargs)

    def cleanup(self) -> None:
        if not self._initialized:
            return
        for module_name in reversed(list(self._modules)):
            try:
                self._modules[module_name].cleanup()
            except Exception as e:
                self.logger.error(f"Error cleaning up {module_name}: {e}")
        self._registry.cleanup()
        self._modules.clear()
        self._services.clear()
        self._initialized = False

    @property
    def events(self) -> EventManager:
        return self._event_manager

    @property
    def registry(self) -> Registry:
        return self._registry

    @property
    def modules(self) -> Dict[str, Any]:
        return self._modules.copy()

    @property
    def commands(self) -> Dict[str, str]:
        return self._registry.list_commands()

    def get_module(self, name: str) -> Optional[Any]:
        return self._modules.get(name)

    def get_service(self, name: str) -> Optional[Any]:
        return self._services.get(name)

    def register_service(self, name: str, service: Any) -> None:
        self._services[name] = service
