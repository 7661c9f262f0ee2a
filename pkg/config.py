"""
Configuration for the magnetic fingerprint positioning engine.

Values come from the environment (main loads a local `.env` first) and can be
overridden per run with a key-value config file (`--config`).
"""

import os
from pathlib import Path
from typing import Dict, Tuple, Union

from dotenv import dotenv_values


def _env_flag(name: str, default: bool = False) -> bool:
    """Parse a boolean environment flag."""
    raw_value = os.getenv(name)
    if raw_value is None:
        return default
    return parse_flag(raw_value)


def parse_flag(raw_value: str) -> bool:
    return raw_value.strip().lower() in {"1", "true", "yes", "on"}


LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
LOG_FORMAT: str = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"

# Default directory for every file a command writes when no explicit path is given.
OUTPUT_DIR: str = os.getenv("MAGFP_OUTPUT_DIR", ".").strip() or "."

# Per-target fan-out of evaluation runs. 1 keeps everything on the calling thread.
MAX_WORKERS: int = int(os.getenv("MAX_WORKERS", "1"))

DEFAULT_WINDOW_LENGTH: int = int(os.getenv("DEFAULT_WINDOW_LENGTH", "20"))
DEFAULT_SPACING_M: float = float(os.getenv("DEFAULT_SPACING_M", "0.30"))
DEFAULT_CELL_M: float = float(os.getenv("DEFAULT_CELL_M", "1.0"))
BENCH_REPETITIONS: int = int(os.getenv("BENCH_REPETITIONS", "3"))
BENCH_PARALLEL: bool = _env_flag("BENCH_PARALLEL", default=False)

# Feature extraction guards.
GRAVITY_EPS: float = 1e-6
MARKER_SLACK_US: int = 1_000_000

# Survey shape of the plant experiment: 24 paths, 1024 points, 20..50 points per path.
REFERENCE_N_PATHS: int = 24
REFERENCE_TOTAL_POINTS: int = 1024
REFERENCE_LENGTH_RANGE: Tuple[int, int] = (20, 50)

# Synthetic floor and field defaults.
FLOOR_BOUNDS: Tuple[float, float, float, float] = (0.0, 0.0, 60.0, 40.0)
FLOOR_CELL_M: float = 10.0
FLOOR_MARGIN_M: float = 0.5
# Fallback serpentine track for surveys that do not fit one path per cell.
TRACK_LANE_GAP_M: float = 1.0
TRACK_MAX_GAP_POINTS: int = 20
FIELD_N_SOURCES: int = int(os.getenv("FIELD_N_SOURCES", "150"))
FIELD_STRENGTH_RANGE: Tuple[float, float] = (200.0, 2000.0)
FIELD_BACKGROUND: Tuple[float, float] = (46.0, 30.0)
FIELD_SOFTENING_M2: float = 0.25
FIELD_MIN_SOURCE_DISTANCE_M: float = 0.05
SURVEY_MAX_ATTEMPTS: int = 16

GRAVITY_MPS2: float = 9.80665

MAP_COLUMNS: Tuple[str, ...] = ("point_id", "path_id", "seq", "x_m", "y_m", "mv", "mh")
SENSOR_LOG_COLUMNS: Tuple[str, ...] = (
    "timestamp_us",
    "mx",
    "my",
    "mz",
    "ax",
    "ay",
    "az",
    "gx",
    "gy",
    "gz",
)
MARKER_COLUMNS: Tuple[str, ...] = ("timestamp_us", "x_m", "y_m")
TARGET_COLUMNS: Tuple[str, ...] = ("case_id", "seq", "x_m", "y_m", "mv", "mh")
PATH_FEATURE_COLUMNS: Tuple[str, ...] = ("x_m", "y_m", "mv", "mh")
HEATMAP_COLUMNS: Tuple[str, ...] = ("x_m", "y_m", "error_m")


def load_run_config(path: Union[str, Path]) -> Dict[str, str]:
    """
    Read a RunConfig file: `KEY=VALUE` lines, `#` comments.

    Keys are normalised to argparse destinations (`dtw-band` -> `dtw_band`).
    Validation against the chosen command happens in the CLI layer.
    """
    config_path = Path(path)
    if not config_path.is_file():
        raise FileNotFoundError(f"config file not found: {config_path}")

    values: Dict[str, str] = {}
    for key, value in dotenv_values(config_path).items():
        if value is None:
            continue
        values[key.strip().lower().replace("-", "_")] = value.strip()
    return values
