"""
Иерархия исключений HENG
Библиотека только выбрасывает исключения, коды выхода назначает CLI
"""


class HengError(Exception):
    """Базовое исключение проекта"""
    exit_code = 1


class InputError(HengError):
    """Ошибка формата входного файла (код выхода 2)"""
    exit_code = 2


class DatasetFormatError(InputError):
    """Несовместимый или повреждённый файл датасета"""


class DomainError(HengError):
    """Нарушение предметных ограничений (код выхода 1)"""
    exit_code = 1


class TopologyError(DomainError):
    """Некорректная топология сети"""

    def __init__(self, message: str, violations=None):
        super().__init__(message)
        self.violations = list(violations or [])


class ScenarioError(DomainError):
    """Некорректный сценарий или конфигурация выборки"""


class CflViolationError(ScenarioError):
    """Нарушено условие Куранта v·dt/Δx ≤ 1"""

    def __init__(self, pipe_id: str, courant: float):
        super().__init__(f"CFL violated on pipe {pipe_id}: courant number {courant:.6g} > 1")
        self.pipe_id = pipe_id
        self.courant = courant


class CycleError(ScenarioError):
    """В ориентированном графе труб найден цикл"""


class DimensionError(DomainError):
    """Несовпадение размерностей"""


class TapeError(DomainError):
    """Ошибка обратного прохода по ленте"""


class DivergenceError(DomainError):
    """Обучение разошлось (NaN/Inf в потере или градиенте)"""


class CheckpointMismatchError(DomainError):
    """Чекпоинт не соответствует загруженной сети"""


class QueryError(DomainError):
    """Запрос вне области определения"""
