"""
Utilities for strict CSV parsing, float formatting and file output.
"""

import csv
import json
import math
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple, Union

from errors import ParseError, SchemaError

PathLike = Union[str, Path]
Row = Tuple[int, Dict[str, str]]


def read_csv_table(path: PathLike, required_columns: Sequence[str]) -> List[Row]:
    """
    Read a UTF-8 CSV with a mandatory header.

    Returns `(line_number, row)` pairs; line numbers are 1-based file lines
    so the header is line 1. Blank lines are skipped.
    """
    source = str(path)
    with open(path, "r", encoding="utf-8", newline="") as file:
        reader = csv.reader(file)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(1, "empty file, header required", source) from None

        columns = [column.strip() for column in header]
        for column in required_columns:
            if column not in columns:
                raise SchemaError(column, source)

        rows: List[Row] = []
        for values in reader:
            if not values or all(not value.strip() for value in values):
                continue
            if len(values) != len(columns):
                raise ParseError(
                    reader.line_num,
                    f"expected {len(columns)} fields, got {len(values)}",
                    source,
                )
            rows.append((reader.line_num, dict(zip(columns, (value.strip() for value in values)))))
        return rows


def parse_float(row: Row, column: str, source: str = "") -> float:
    """Parse a finite float from a parsed CSV row."""
    line, values = row
    raw = values[column]
    try:
        value = float(raw)
    except ValueError:
        message = f"column {column!r}: not a number: {raw!r}"
        raise ParseError(line, message, source or None) from None
    if not math.isfinite(value):
        raise ParseError(line, f"column {column!r}: non-finite value {raw!r}", source or None)
    return value


def parse_int(row: Row, column: str, source: str = "") -> int:
    line, values = row
    raw = values[column]
    try:
        return int(raw)
    except ValueError:
        message = f"column {column!r}: not an integer: {raw!r}"
        raise ParseError(line, message, source or None) from None


def format_float(value: float) -> str:
    """Shortest text that parses back to the identical float."""
    return repr(float(value))


def ensure_parent_dir(path: PathLike) -> None:
    parent = os.path.dirname(os.path.abspath(str(path)))
    os.makedirs(parent, exist_ok=True)


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    """Write a CSV with `\\n` line endings so output is byte-stable across platforms."""
    ensure_parent_dir(path)
    with open(path, "w", encoding="utf-8", newline="") as file:
        writer = csv.writer(file, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def write_json(path: PathLike, payload: Any) -> None:
    ensure_parent_dir(path)
    with open(path, "w", encoding="utf-8", newline="") as file:
        file.write(json.dumps(payload, indent=2, allow_nan=False))
        file.write("\n")


def read_json(path: PathLike) -> Any:
    with open(path, "r", encoding="utf-8") as file:
        return json.load(file)


def resolve_output(explicit: Any, out_dir: PathLike, default_name: str) -> Path:
    """Explicit path wins; otherwise `<out_dir>/<default_name>`."""
    if explicit:
        return Path(explicit)
    return Path(out_dir) / default_name


def format_duration(seconds: float) -> str:
    """Human readable duration for timing logs."""
    seconds = max(0.0, float(seconds))
    if seconds < 1.0:
        return f"{seconds * 1000:.1f} ms"
    minutes, secs = divmod(seconds, 60)
    if minutes:
        return f"{int(minutes)}:{secs:06.3f}"
    return f"{secs:.3f} s"
