import logging
import threading
from datetime import datetime
from typing import Any, Callable, Dict, Optional


class Registry:
    """Центральный реестр сервисов и команд"""

    def __init__(self):
        self._services: Dict[str, Dict] = {}
        self._commands: Dict[str, Dict] = {}
        self._modules: Dict[str, Dict] = {}
        self._lock = threading.Lock()
        self._logger = logging.getLogger('registry')

    def register_service(self, name: str, service: Any, metadata: Dict = None) -> bool:
        """Регистрация сервиса"""
        with self._lock:
            if name in self._services:
                return False
            self._services[name] = {
                'instance': service,
                'metadata': metadata or {},
                'registered_at': datetime.now()
            }
        self._logger.debug(f"Service registered: {name}")
        return True

    def register_command(self, module_name: str, command: str, handler: Callable,
                         metadata: Dict = None) -> bool:
        """Регистрация команды"""
        with self._lock:
            if command in self._commands:
                return False
            self._commands[command] = {
                'module': module_name,
                'handler': handler,
                'metadata': metadata or {},
                'registered_at': datetime.now()
            }
        self._logger.debug(f"Command registered: {command} by {module_name}")
        return True

    def register_module(self, name: str, module: Any, metadata: Dict = None) -> bool:
        """Регистрация модуля"""
        with self._lock:
            if name in self._modules:
                return False
            self._modules[name] = {
                'instance': module,
                'metadata': metadata or {},
                'registered_at': datetime.now()
            }
        self._logger.debug(f"Module registered: {name}")
        return True

    def get_service(self, name: str) -> Optional[Any]:
        return self._services.get(name, {}).get('instance')

    def get_command_handler(self, command: str) -> Optional[Callable]:
        return self._commands.get(command, {}).get('handler')

    def get_module(self, name: str) -> Optional[Any]:
        return self._modules.get(name, {}).get('instance')

    def list_commands(self) -> Dict[str, str]:
        """Список команд: имя -> модуль"""
        return {name: info['module'] for name, info in self._commands.items()}

    def cleanup(self) -> None:
        """Очистка всех ресурсов"""
        with self._lock:
            self._services.clear()
            self._commands.clear()
            self._modules.clear()
