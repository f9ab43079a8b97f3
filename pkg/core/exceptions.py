from core.constants import ErrorCodes


class SearchError(Exception):
    """Базовое исключение поиска"""
    exit_code = ErrorCodes.UNKNOWN_ERROR


class ConfigError(SearchError, ValueError):
    """Ошибка конфигурации"""
    exit_code = ErrorCodes.CONFIG_ERROR


class DataError(SearchError):
    """Ошибка данных"""
    exit_code = ErrorCodes.DATA_ERROR


class IdxFormatError(DataError, ValueError):
    """Некорректный IDX файл"""
    pass


class CheckpointError(DataError, ValueError):
    """Некорректный или несовместимый чекпоинт"""
    pass


class ArtifactError(DataError):
    """Отсутствуют артефакты предыдущего запуска"""
    pass


class NumericalError(SearchError, ArithmeticError):
    """Нечисловые значения (NaN/Inf) в вычислениях"""
    exit_code = ErrorCodes.NUMERICAL_ERROR


class GraphError(SearchError, ValueError):
    """Ошибка построения или использования графа"""
    pass


class QuantizationError(SearchError, ValueError):
    """Ошибка квантования"""
    pass


class PolicyError(SearchError, ValueError):
    """Политика не соответствует пространству поиска"""
    pass


class GameSizeError(SearchError, ValueError):
    """Слишком много игроков для точного перебора"""
    pass


class BudgetError(SearchError, ValueError):
    """Ошибка бюджета BOPs"""
    pass
