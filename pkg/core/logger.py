import logging.config
from pathlib import Path
from typing import Optional, Union

from core.constants import ARTIFACTS

DEFAULT_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def setup_logging(level: str = "INFO",
                  path: Optional[Union[str, Path]] = None,
                  fmt: Optional[str] = None) -> None:
    """Настройка системы логирования"""
    handlers = {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "standard",
            "stream": "ext://sys.stderr",
        }
    }

    if path is not None:
        log_dir = Path(path)
        log_dir.mkdir(parents=True, exist_ok=True)
        handlers["file"] = {
            "class": "logging.FileHandler",
            "filename": str(log_dir / ARTIFACTS["log"]),
            "formatter": "standard",
            "encoding": "utf-8",
        }

    logging_config = {
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": {
            "standard": {
                "format": fmt or DEFAULT_FORMAT
            }
        },
        "handlers": handlers,
        "loggers": {
            "": {
                "handlers": list(handlers),
                "level": level.upper()
            }
        }
    }

    logging.config.dictConfig(logging_config)
