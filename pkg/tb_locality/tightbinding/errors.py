"""Исключения библиотеки и их коды завершения для команд."""

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class TightBindingError(Exception):
    """Базовое исключение пакета"""
    exit_code = EXIT_NUMERICAL


class ConfigurationError(TightBindingError):
    """Неверная конфигурация запуска или входной файл"""
    exit_code = EXIT_CONFIG


class GeometryError(TightBindingError):
    """Недопустимая конфигурация атомов"""


class ModelError(TightBindingError):
    """Неизвестный сорт, отсутствующий канал или недоступная производная"""


class SpectralError(TightBindingError):
    """Сбой задачи на собственные значения"""


class ContourError(TightBindingError):
    """Контур не удовлетворяет ограничениям или квадратура не сошлась"""


class DefectError(TightBindingError):
    """Недопустимый дефект или недостижимое разложение"""


class LocalityError(TightBindingError):
    """Недостаточно данных для подгонки затухания"""


class InvariantFailure(TightBindingError):
    """Нарушен проверяемый инвариант"""
    exit_code = EXIT_INVARIANT

    def __init__(self, message, failures=None):
        super().__init__(message)
        self.failures = list(failures or [])
