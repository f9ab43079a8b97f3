#!/usr/bin/env python3
import json
import logging
import sys
from typing import Any, Dict, Optional

import click

from core.config import load_config
from core.constants import ErrorCodes, Method
from core.exceptions import SearchError
from core.kernel import Kernel
from core.logger import setup_logging

logger = logging.getLogger('manage')

ANALYSES = ("correlation", "pitfall", "interaction", "ablation")


def _fail(error: BaseException, code: int) -> None:
    payload = {"error": type(error).__name__, "code": code, "message": str(error)}
    click.echo(json.dumps(payload), err=True)
    sys.exit(code)


def execute(command: str, options: Dict[str, Any], **kwargs: Any) -> None:
    """Загрузка конфигурации, запуск команды ядра, JSON-результат в stdout"""
    overrides = {key: options.get(key) for key in ("seed", "out", "threads", "method")}
    try:
        config = load_config(options.get("config"), overrides)
    except SearchError as e:
        _fail(e, e.exit_code)
        return
    setup_logging(config.log_level, config.out)

    kernel = Kernel()
    try:
        result = kernel.run(command, config, **kwargs)
    except SearchError as e:
        logger.error(f"{command} failed: {e}")
        _fail(e, e.exit_code)
        return
    except Exception as e:
        logger.exception(f"{command} failed")
        _fail(e, ErrorCodes.UNKNOWN_ERROR)
        return
    finally:
        kernel.cleanup()
    click.echo(json.dumps(result, indent=2, sort_keys=True, default=str))


def run_options(func):
    """Общие флаги всех подкоманд"""
    func = click.option("--method", type=click.Choice([m.value for m in Method]),
                        help="Метод поиска")(func)
    func = click.option("--threads", type=int, help="Максимум потоков")(func)
    func = click.option("--out", type=click.Path(file_okay=False), help="Выходная директория")(func)
    func = click.option("--seed", type=int, help="Мастер-сид")(func)
    func = click.option("--config", "config", type=click.Path(dir_okay=False),
                        help="YAML конфигурация")(func)
    return func


@click.group()
def cli():
    """Поиск политики смешанной точности (SMPQ / DMPQ)"""
    pass


@cli.command()
@run_options
def search(**options):
    """Поиск политики, дообучение, артефакты"""
    execute("search", options)


@cli.command()
@run_options
def finetune(**options):
    """Дообучение политики из артефактов поиска"""
    execute("finetune", options)


@cli.command(name="eval")
@run_options
@click.option("--checkpoint", type=click.Path(dir_okay=False), help="Чекпоинт весов")
@click.option("--policy", "policy_path", type=click.Path(dir_okay=False), help="JSON политики")
def evaluate(checkpoint: Optional[str], policy_path: Optional[str], **options):
    """Точность, BOPs и степень сжатия"""
    execute("eval", options, checkpoint=checkpoint, policy_path=policy_path)


@cli.command(name="shapley-exact")
@run_options
def shapley_exact(**options):
    """Точные значения Шепли и сравнение с Монте-Карло"""
    execute("shapley-exact", options)


@cli.command()
@click.argument("experiment", type=click.Choice(ANALYSES))
@run_options
def analyze(experiment: str, **options):
    """Эксперименты: correlation | pitfall | interaction | ablation"""
    execute(f"analyze.{experiment}", options)


if __name__ == '__main__':
    cli()
