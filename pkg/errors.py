"""
Exception hierarchy, error formatting and logging utilities.
"""

import logging
from typing import Iterable, List, Optional

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_INPUT = 2
EXIT_DATA_QUALITY = 3
EXIT_MATCHING_IMPOSSIBLE = 4


def setup_logging(
    level: str = "INFO",
    format_string: str = "%(asctime)s [%(levelname)s] %(name)s: %(message)s",
) -> logging.Logger:
    """Configure root logging once and return module logger."""
    root_logger = logging.getLogger()
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    numeric_level = getattr(logging, level.upper(), logging.INFO)
    root_logger.setLevel(numeric_level)

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(logging.Formatter(format_string))
    root_logger.addHandler(console_handler)
    return logging.getLogger(__name__)


class PositioningError(Exception):
    """Base class for every expected failure; carries the CLI exit code."""

    exit_code: int = EXIT_UNEXPECTED


class InputError(PositioningError):
    exit_code = EXIT_INPUT


class DataQualityError(PositioningError):
    exit_code = EXIT_DATA_QUALITY


class MatchingImpossibleError(PositioningError):
    exit_code = EXIT_MATCHING_IMPOSSIBLE


class ParseError(InputError):
    """A value could not be parsed; `line` is the 1-based file line."""

    def __init__(self, line: int, message: str, source: Optional[str] = None):
        self.line = line
        self.source = source
        where = f"{source}:{line}" if source else f"line {line}"
        super().__init__(f"{where}: {message}")


class SchemaError(InputError):
    """A required CSV column is missing."""

    def __init__(self, column: str, source: Optional[str] = None):
        self.column = column
        self.source = source
        suffix = f" in {source}" if source else ""
        super().__init__(f"missing column {column!r}{suffix}")


class LengthMismatchError(InputError):
    pass


class EmptyLogError(InputError):
    pass


class MarkerOutOfRangeError(InputError):
    pass


class DuplicatePathIdError(InputError):
    pass


class EmptyPathError(InputError):
    pass


class WindowTooShortError(InputError):
    pass


class EmptySequenceError(InputError):
    pass


class DegenerateWindowError(InputError):
    pass


class FloorOverflowError(InputError):
    pass


class SourceCollisionError(InputError):
    pass


class CaseMismatchError(InputError):
    """Results and truth disagree on case ids; `case_id` is the first mismatch."""

    def __init__(self, case_id: str, message: str):
        self.case_id = case_id
        super().__init__(message)


class ConfigError(InputError):
    pass


class InvalidMapError(InputError):
    pass


class DegenerateGravityError(DataQualityError):
    """Acceleration too small to resolve the vertical; `rows` are 0-based sample indices."""

    def __init__(self, rows: Iterable[int], message: Optional[str] = None):
        self.rows: List[int] = list(rows)
        super().__init__(message or f"degenerate gravity at sample rows {self.rows}")


class EmptyCandidatesError(MatchingImpossibleError):
    pass


class EmptyMapError(MatchingImpossibleError):
    pass


class ErrorManager:
    """Convert internal exceptions to compact user-facing messages and exit codes."""

    def exit_code(self, error: BaseException) -> int:
        if isinstance(error, PositioningError):
            return error.exit_code
        if isinstance(error, (FileNotFoundError, IsADirectoryError)):
            return EXIT_INPUT
        return EXIT_UNEXPECTED

    def to_user_message(self, error: BaseException) -> str:
        if isinstance(error, SchemaError):
            return f"Ошибка схемы: нет колонки {error.column!r}."

        if isinstance(error, ParseError):
            return f"Ошибка разбора: {error}"

        if isinstance(error, CaseMismatchError):
            return f"Результаты и эталон не совпадают по case_id: {error.case_id!r}."

        if isinstance(error, DegenerateGravityError):
            shown = ", ".join(str(row) for row in error.rows[:20])
            more = " …" if len(error.rows) > 20 else ""
            return (
                "Ускорение слишком мало, вертикаль не определяется.\n"
                f"Проблемные строки: {shown}{more}"
            )

        if isinstance(error, (EmptyCandidatesError, EmptyMapError)):
            return f"Сопоставление невозможно: {error}"

        if isinstance(error, LengthMismatchError):
            return f"Несовпадение длин: {error}"

        if isinstance(error, InputError):
            return f"Некорректные входные данные: {error}"

        if isinstance(error, (FileNotFoundError, IsADirectoryError)):
            return f"Файл не найден: {error}"

        return f"Непредвиденная ошибка: {str(error)[:350]}"


error_manager = ErrorManager()
