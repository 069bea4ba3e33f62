import logging
from contextlib import contextmanager
from functools import wraps

from django.conf import settings
from django.core.management.base import CommandError

from .errors import EXIT_CONFIG, EXIT_NUMERICAL, ConfigurationError, InvariantFailure, TightBindingError

logger = logging.getLogger(__name__)


def tb_command(handle):
    """Декоратор handle: исключения пакета → CommandError с кодом завершения"""
    @wraps(handle)
    def _wrapped_handle(command, *args, **options):
        try:
            return handle(command, *args, **options)
        except InvariantFailure as exc:
            for failure in exc.failures:
                logger.error(f"Инвариант нарушен: {failure}")
            raise CommandError(str(exc), returncode=exc.exit_code) from exc
        except ConfigurationError as exc:
            raise CommandError(f"Ошибка конфигурации: {exc}", returncode=EXIT_CONFIG) from exc
        except TightBindingError as exc:
            logger.exception(f"Численный сбой в команде {command.name}")
            raise CommandError(f"Численный сбой: {exc}", returncode=exc.exit_code) from exc
        except (ArithmeticError, ValueError, MemoryError) as exc:
            logger.exception(f"Необработанная численная ошибка в команде {command.name}")
            raise CommandError(f"Численный сбой: {exc}", returncode=EXIT_NUMERICAL) from exc
    return _wrapped_handle


@contextmanager
def tb_overrides(overrides):
    """Временная замена ключей TB_SETTINGS на время запуска"""
    saved = dict(settings.TB_SETTINGS)
    settings.TB_SETTINGS.update({k: v for k, v in overrides.items() if v is not None})
    try:
        yield settings.TB_SETTINGS
    finally:
        settings.TB_SETTINGS.clear()
        settings.TB_SETTINGS.update(saved)
