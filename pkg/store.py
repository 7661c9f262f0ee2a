"""
Offline-phase fingerprint map: building, windowing and persistence.
"""

import logging
import math
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from config import (
    DEFAULT_SPACING_M,
    MAP_COLUMNS,
    MARKER_COLUMNS,
    PATH_FEATURE_COLUMNS,
    SENSOR_LOG_COLUMNS,
    TARGET_COLUMNS,
)
from errors import (
    DuplicatePathIdError,
    EmptyPathError,
    InputError,
    InvalidMapError,
    ParseError,
    WindowTooShortError,
)
from models import (
    Direction,
    FeatureVec,
    FingerprintMap,
    RefPath,
    RefPoint,
    SensorSample,
    TargetCase,
    Vec2,
    Vec3,
    Window,
    validate_map,
)
from utils import (
    PathLike,
    format_float,
    parse_float,
    parse_int,
    read_csv_table,
    read_json,
    write_csv,
    write_json,
)

logger = logging.getLogger(__name__)

SurveyedPoint = Tuple[Vec2, FeatureVec]
Marker = Tuple[int, Vec2]


def build_map(
    paths: Sequence[Tuple[int, Sequence[SurveyedPoint]]],
    spacing_m: float = DEFAULT_SPACING_M,
    meta: Optional[Mapping[str, str]] = None,
) -> FingerprintMap:
    """
    Assemble a map from surveyed paths.

    `seq` follows input order within each path and `point_id` is assigned
    densely across the whole input in file order.
    """
    seen = set()
    ref_paths: List[RefPath] = []
    next_point_id = 0
    for path_id, surveyed in paths:
        if path_id in seen:
            raise DuplicatePathIdError(f"path_id {path_id} appears more than once")
        seen.add(path_id)
        if not surveyed:
            raise EmptyPathError(f"path {path_id} has no points")

        points = []
        for seq, (pos, feat) in enumerate(surveyed):
            points.append(
                RefPoint(
                    point_id=next_point_id,
                    path_id=path_id,
                    seq=seq,
                    pos=(float(pos[0]), float(pos[1])),
                    feat=feat,
                )
            )
            next_point_id += 1
        ref_paths.append(RefPath(path_id=path_id, points=tuple(points)))

    ref_paths.sort(key=lambda item: item.path_id)
    fp_map = FingerprintMap(paths=tuple(ref_paths), spacing_m=spacing_m, meta=dict(meta or {}))
    violations = validate_map(fp_map)
    if violations:
        raise InvalidMapError("; ".join(violation.message for violation in violations))
    return fp_map


def enumerate_windows(
    fp_map: FingerprintMap, window_length: int, include_reversed: bool = False
) -> List[Window]:
    """
    Every length-M run of consecutive points: L - M + 1 starts per path.

    Paths shorter than M are skipped. With `include_reversed` each window is
    followed by its reversed copy (the round trip of the path).
    """
    if window_length < 2:
        raise WindowTooShortError(f"window length must be >= 2, got {window_length}")

    windows: List[Window] = []
    skipped = 0
    for path in sorted(fp_map.paths, key=lambda item: item.path_id):
        if len(path) < window_length:
            skipped += 1
            continue
        feats = tuple(point.feat for point in path.points)
        coords = tuple(point.pos for point in path.points)
        for start in range(len(path) - window_length + 1):
            window = Window(
                path_id=path.path_id,
                start=start,
                direction=Direction.FORWARD,
                feats=feats[start : start + window_length],
                coords=coords[start : start + window_length],
            )
            windows.append(window)
            if include_reversed:
                windows.append(window.reversed())

    if skipped:
        logger.warning("Skipped %d path(s) shorter than window length %d", skipped, window_length)
    return windows


def count_windows(
    fp_map: FingerprintMap, window_length: int, include_reversed: bool = False
) -> int:
    """Closed form of `len(enumerate_windows(...))`."""
    total = sum(max(0, len(path) - window_length + 1) for path in fp_map.paths)
    return total * 2 if include_reversed else total


def _meta_path(path: PathLike) -> Path:
    return Path(f"{path}.meta.json")


def save_map(fp_map: FingerprintMap, path: PathLike) -> None:
    """Write the map CSV sorted by (path_id, seq) plus a `.meta.json` sidecar."""
    points = sorted(fp_map.points, key=lambda point: (point.path_id, point.seq))
    write_csv(
        path,
        MAP_COLUMNS,
        (
            (
                point.point_id,
                point.path_id,
                point.seq,
                format_float(point.pos[0]),
                format_float(point.pos[1]),
                format_float(point.feat.mv),
                format_float(point.feat.mh),
            )
            for point in points
        ),
    )
    write_json(_meta_path(path), {"spacing_m": fp_map.spacing_m, "meta": dict(fp_map.meta)})


def _infer_spacing(paths: Sequence[RefPath]) -> float:
    steps = [
        math.hypot(curr.pos[0] - prev.pos[0], curr.pos[1] - prev.pos[1])
        for path in paths
        for prev, curr in zip(path.points, path.points[1:])
    ]
    if not steps:
        return DEFAULT_SPACING_M
    return float(np.median(steps))


def load_map(path: PathLike) -> FingerprintMap:
    """Parse a map CSV; the sidecar supplies spacing and metadata when present."""
    source = str(path)
    grouped: Dict[int, List[RefPoint]] = {}
    for row in read_csv_table(path, MAP_COLUMNS):
        point = RefPoint(
            point_id=parse_int(row, "point_id", source),
            path_id=parse_int(row, "path_id", source),
            seq=parse_int(row, "seq", source),
            pos=(parse_float(row, "x_m", source), parse_float(row, "y_m", source)),
            feat=FeatureVec(mv=parse_float(row, "mv", source), mh=parse_float(row, "mh", source)),
        )
        if point.feat.mh < 0:
            raise ParseError(row[0], f"column 'mh': negative value {point.feat.mh!r}", source)
        grouped.setdefault(point.path_id, []).append(point)

    paths = tuple(
        RefPath(path_id=path_id, points=tuple(sorted(points, key=lambda point: point.seq)))
        for path_id, points in sorted(grouped.items())
    )

    spacing_m: Optional[float] = None
    meta: Dict[str, str] = {}
    sidecar = _meta_path(path)
    if sidecar.is_file():
        payload = read_json(sidecar)
        spacing_m = float(payload.get("spacing_m", DEFAULT_SPACING_M))
        meta = {str(key): str(value) for key, value in payload.get("meta", {}).items()}
    if spacing_m is None:
        spacing_m = _infer_spacing(paths)

    fp_map = FingerprintMap(paths=paths, spacing_m=spacing_m, meta=meta)
    logger.info("Loaded map %s: %d paths, %d points", source, len(paths), fp_map.n_points)
    return fp_map


def map_to_dict(fp_map: FingerprintMap) -> Dict[str, object]:
    return {
        "spacing_m": fp_map.spacing_m,
        "meta": dict(fp_map.meta),
        "paths": [
            {
                "path_id": path.path_id,
                "points": [
                    {
                        "point_id": point.point_id,
                        "seq": point.seq,
                        "x_m": point.pos[0],
                        "y_m": point.pos[1],
                        "mv": point.feat.mv,
                        "mh": point.feat.mh,
                    }
                    for point in path.points
                ],
            }
            for path in sorted(fp_map.paths, key=lambda item: item.path_id)
        ],
    }


def save_map_json(fp_map: FingerprintMap, path: PathLike) -> None:
    """JSON mirror of the map CSV with the same fields."""
    write_json(path, map_to_dict(fp_map))


def load_map_json(path: PathLike) -> FingerprintMap:
    payload = read_json(path)
    try:
        paths = tuple(
            RefPath(
                path_id=int(raw_path["path_id"]),
                points=tuple(
                    RefPoint(
                        point_id=int(raw["point_id"]),
                        path_id=int(raw_path["path_id"]),
                        seq=int(raw["seq"]),
                        pos=(float(raw["x_m"]), float(raw["y_m"])),
                        feat=FeatureVec(mv=float(raw["mv"]), mh=float(raw["mh"])),
                    )
                    for raw in raw_path["points"]
                ),
            )
            for raw_path in payload["paths"]
        )
    except (KeyError, TypeError, ValueError) as error:
        raise InputError(f"malformed map JSON {path}: {error}") from None
    return FingerprintMap(
        paths=paths,
        spacing_m=float(payload.get("spacing_m", DEFAULT_SPACING_M)),
        meta={str(key): str(value) for key, value in payload.get("meta", {}).items()},
    )


def _vec3(row: Tuple[int, Dict[str, str]], prefix: str, source: str) -> Vec3:
    x, y, z = (parse_float(row, f"{prefix}{axis}", source) for axis in "xyz")
    return (x, y, z)


def load_sensor_log(path: PathLike) -> List[SensorSample]:
    """Sensor log CSV; gyroscope columns are carried along unused."""
    source = str(path)
    samples: List[SensorSample] = []
    for row in read_csv_table(path, SENSOR_LOG_COLUMNS):
        timestamp = parse_int(row, "timestamp_us", source)
        if timestamp < 0:
            raise ParseError(row[0], f"negative timestamp {timestamp}", source)
        if samples and timestamp < samples[-1].timestamp:
            raise ParseError(row[0], "timestamps must be non-decreasing", source)
        samples.append(
            SensorSample(
                timestamp=timestamp,
                m=_vec3(row, "m", source),
                a=_vec3(row, "a", source),
                g=_vec3(row, "g", source),
                line=row[0],
            )
        )
    return samples


def save_sensor_log(samples: Sequence[SensorSample], path: PathLike) -> None:
    write_csv(
        path,
        SENSOR_LOG_COLUMNS,
        (
            (sample.timestamp, *(format_float(v) for v in (*sample.m, *sample.a, *sample.g)))
            for sample in samples
        ),
    )


def load_markers(path: PathLike) -> List[Marker]:
    source = str(path)
    return [
        (
            parse_int(row, "timestamp_us", source),
            (parse_float(row, "x_m", source), parse_float(row, "y_m", source)),
        )
        for row in read_csv_table(path, MARKER_COLUMNS)
    ]


def save_markers(markers: Sequence[Marker], path: PathLike) -> None:
    write_csv(
        path,
        MARKER_COLUMNS,
        ((t, format_float(pos[0]), format_float(pos[1])) for t, pos in markers),
    )


def save_path_features(rows: Sequence[SurveyedPoint], path: PathLike) -> None:
    write_csv(
        path,
        PATH_FEATURE_COLUMNS,
        (
            (
                format_float(pos[0]),
                format_float(pos[1]),
                format_float(feat.mv),
                format_float(feat.mh),
            )
            for pos, feat in rows
        ),
    )


def load_path_features(path: PathLike) -> List[SurveyedPoint]:
    source = str(path)
    return [
        (
            (parse_float(row, "x_m", source), parse_float(row, "y_m", source)),
            FeatureVec(mv=parse_float(row, "mv", source), mh=parse_float(row, "mh", source)),
        )
        for row in read_csv_table(path, PATH_FEATURE_COLUMNS)
    ]


def load_targets(path: PathLike) -> List[TargetCase]:
    """
    Target CSV: one row per window element, grouped by `case_id` in first-seen order.

    Rows of a case are ordered by `seq`; the window carries no map identity.
    """
    source = str(path)
    grouped: Dict[str, List[Tuple[int, Vec2, FeatureVec]]] = {}
    for row in read_csv_table(path, TARGET_COLUMNS):
        case_id = row[1]["case_id"]
        if not case_id:
            raise ParseError(row[0], "empty case_id", source)
        grouped.setdefault(case_id, []).append(
            (
                parse_int(row, "seq", source),
                (parse_float(row, "x_m", source), parse_float(row, "y_m", source)),
                FeatureVec(mv=parse_float(row, "mv", source), mh=parse_float(row, "mh", source)),
            )
        )

    cases: List[TargetCase] = []
    for case_id, elements in grouped.items():
        elements.sort(key=lambda element: element[0])
        cases.append(
            TargetCase(
                case_id=case_id,
                window=Window.from_sequence(
                    feats=[feat for _, _, feat in elements],
                    coords=[pos for _, pos, _ in elements],
                ),
            )
        )
    return cases


def save_targets(cases: Sequence[TargetCase], path: PathLike) -> None:
    write_csv(
        path,
        TARGET_COLUMNS,
        (
            (
                case.case_id,
                seq,
                format_float(pos[0]),
                format_float(pos[1]),
                format_float(feat.mv),
                format_float(feat.mh),
            )
            for case in cases
            for seq, (pos, feat) in enumerate(zip(case.window.coords, case.window.feats))
        ),
    )
