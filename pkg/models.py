"""
Domain types shared by every stage of the positioning pipeline.

Units: magnetic values in µT, accelerations in m/s², positions in meters,
timestamps in integer microseconds. `seq` indices are 0-based.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import DEFAULT_SPACING_M, DEFAULT_WINDOW_LENGTH
from errors import InputError

Vec2 = Tuple[float, float]
Vec3 = Tuple[float, float, float]


class Direction(Enum):
    """Traversal direction of a window along its path."""

    FORWARD = "forward"
    REVERSED = "reversed"


class Algorithm(Enum):
    """Fingerprint matching algorithms."""

    POINT = "point"
    PATH = "path"
    DTW = "dtw"


_DIRECTION_ORDER: Dict[Direction, int] = {Direction.FORWARD: 0, Direction.REVERSED: 1}


@dataclass(frozen=True)
class SensorSample:
    """One timestamped magnetometer + accelerometer reading in the device frame."""

    timestamp: int
    m: Vec3
    a: Vec3
    # Gyroscope is ingested and written back out, never used by any feature.
    g: Vec3 = (0.0, 0.0, 0.0)
    # CSV file line the sample was read from; None for generated samples.
    line: Optional[int] = field(default=None, compare=False)


@dataclass(frozen=True)
class FeatureVec:
    """Vertical/horizontal magnetic components."""

    mv: float
    mh: float

    def as_tuple(self) -> Tuple[float, float]:
        return (self.mv, self.mh)


@dataclass(frozen=True)
class RefPoint:
    """A surveyed reference position with its feature vector."""

    point_id: int
    path_id: int
    seq: int
    pos: Vec2
    feat: FeatureVec


@dataclass(frozen=True)
class RefPath:
    """An ordered, walkable run of reference points."""

    path_id: int
    points: Tuple[RefPoint, ...]

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class Window:
    """A fixed-length run of consecutive path points, the unit of path matching."""

    path_id: int
    start: int
    direction: Direction
    feats: Tuple[FeatureVec, ...]
    coords: Tuple[Vec2, ...]

    def __post_init__(self) -> None:
        if len(self.feats) != len(self.coords):
            raise InputError(
                f"Window feats/coords length differ: {len(self.feats)} != {len(self.coords)}"
            )

    @property
    def length(self) -> int:
        return len(self.feats)

    @property
    def key(self) -> Tuple[int, int, int]:
        """Canonical ordering key: (path_id, start, forward before reversed)."""
        return (self.path_id, self.start, _DIRECTION_ORDER[self.direction])

    def reversed(self) -> "Window":
        flipped = Direction.REVERSED if self.direction == Direction.FORWARD else Direction.FORWARD
        return Window(
            path_id=self.path_id,
            start=self.start,
            direction=flipped,
            feats=tuple(reversed(self.feats)),
            coords=tuple(reversed(self.coords)),
        )

    def features_array(self) -> np.ndarray:
        return np.array([feat.as_tuple() for feat in self.feats], dtype=float).reshape(-1, 2)

    def identity(self) -> Dict[str, Any]:
        return {"path_id": self.path_id, "start": self.start, "direction": self.direction.value}

    @classmethod
    def from_sequence(
        cls,
        feats: Sequence[FeatureVec],
        coords: Sequence[Vec2],
        path_id: int = -1,
        start: int = 0,
        direction: Direction = Direction.FORWARD,
    ) -> "Window":
        """Wrap a free-standing target sequence (no map identity by default)."""
        return cls(
            path_id=path_id,
            start=start,
            direction=direction,
            feats=tuple(feats),
            coords=tuple((float(x), float(y)) for x, y in coords),
        )


@dataclass(frozen=True)
class TargetCase:
    """A target window tagged with the id it is reported under."""

    case_id: str
    window: Window


@dataclass(frozen=True)
class FingerprintMap:
    """Offline-phase database: every surveyed path and point."""

    paths: Tuple[RefPath, ...]
    spacing_m: float = field(default=DEFAULT_SPACING_M, compare=False)
    meta: Dict[str, str] = field(default_factory=dict, compare=False, hash=False)

    @property
    def n_points(self) -> int:
        return sum(len(path) for path in self.paths)

    @cached_property
    def points(self) -> Tuple[RefPoint, ...]:
        return tuple(point for path in self.paths for point in path.points)

    @cached_property
    def points_by_id(self) -> Tuple[RefPoint, ...]:
        """Points in ascending point_id order (the point-matching tie-break order)."""
        return tuple(sorted(self.points, key=lambda point: point.point_id))

    @cached_property
    def feature_matrix(self) -> np.ndarray:
        """(N, 2) array of (mv, mh), rows aligned with `points_by_id`."""
        rows = [point.feat.as_tuple() for point in self.points_by_id]
        return np.array(rows, dtype=float).reshape(-1, 2)

    def path(self, path_id: int) -> RefPath:
        for path in self.paths:
            if path.path_id == path_id:
                return path
        raise KeyError(path_id)

    def bounds(self) -> Tuple[float, float, float, float]:
        """(min_x, min_y, max_x, max_y) over all reference positions."""
        if not self.points:
            return (0.0, 0.0, 0.0, 0.0)
        xs = [point.pos[0] for point in self.points]
        ys = [point.pos[1] for point in self.points]
        return (min(xs), min(ys), max(xs), max(ys))


@dataclass(frozen=True)
class DtwParams:
    """DTW knobs. `band` is the Sakoe-Chiba half-width; None means unconstrained."""

    band: Optional[int] = None

    def __post_init__(self) -> None:
        if self.band is not None and self.band < 0:
            raise InputError(f"DTW band must be >= 0, got {self.band}")


@dataclass(frozen=True)
class MatchParams:
    """Workload-level matching settings."""

    window_length: int = DEFAULT_WINDOW_LENGTH
    include_reversed: bool = False
    dtw: DtwParams = field(default_factory=DtwParams)
    workers: int = 1

    def echo(self) -> Dict[str, Any]:
        return {
            "window_length": self.window_length,
            "include_reversed": self.include_reversed,
            "dtw_band": self.dtw.band,
            "workers": self.workers,
        }


@dataclass(frozen=True)
class MatchResult:
    """Selected candidate and its score. Exactly one of `window`/`point` is set."""

    algorithm: Algorithm
    score: float
    window: Optional[Window] = None
    point: Optional[RefPoint] = None

    @property
    def coords(self) -> Tuple[Vec2, ...]:
        if self.window is not None:
            return self.window.coords
        if self.point is not None:
            return (self.point.pos,)
        return ()

    def identity(self) -> Dict[str, Any]:
        if self.point is not None:
            return {"point_id": self.point.point_id}
        if self.window is not None:
            return {"window": self.window.identity()}
        return {}


@dataclass(frozen=True)
class WorkloadDescriptor:
    """Size of a matching workload."""

    n_points: int
    n_windows: int
    window_length: int
    n_targets: int

    def to_dict(self) -> Dict[str, int]:
        return {
            "n_points": self.n_points,
            "n_windows": self.n_windows,
            "window_length": self.window_length,
            "n_targets": self.n_targets,
        }


@dataclass(frozen=True)
class CaseError:
    """Positioning error of one target; `true_xy` is the target's first true coordinate."""

    case_id: str
    error_m: float
    true_xy: Vec2


@dataclass(frozen=True)
class Quartiles:
    min: float
    q25: float
    median: float
    q75: float
    max: float

    def to_dict(self) -> Dict[str, float]:
        return {
            "min": self.min,
            "q25": self.q25,
            "median": self.median,
            "q75": self.q75,
            "max": self.max,
        }


@dataclass(frozen=True)
class ErrorReport:
    """Per-case and aggregate positioning error of one algorithm on one workload."""

    algorithm: Algorithm
    per_case: Tuple[CaseError, ...]
    quartiles: Quartiles
    mean: float
    workload: Optional[WorkloadDescriptor] = None
    params: Dict[str, Any] = field(default_factory=dict, compare=False, hash=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "algorithm": self.algorithm.value,
            "per_case": [
                {
                    "case_id": case.case_id,
                    "error_m": case.error_m,
                    "true_x_m": case.true_xy[0],
                    "true_y_m": case.true_xy[1],
                }
                for case in self.per_case
            ],
            "quartiles": self.quartiles.to_dict(),
            "mean": self.mean,
            "workload": self.workload.to_dict() if self.workload else None,
            "params": dict(self.params),
        }


@dataclass(frozen=True)
class TimingReport:
    """Median wall-clock seconds per algorithm for one full workload pass."""

    seconds: Dict[str, float]
    workload: WorkloadDescriptor
    repetitions: int
    parallel: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seconds": dict(self.seconds),
            "workload": self.workload.to_dict(),
            "repetitions": self.repetitions,
            "parallel": self.parallel,
        }


@dataclass(frozen=True)
class Violation:
    """One broken map invariant."""

    kind: str
    message: str
    path_id: Optional[int] = None
    point_id: Optional[int] = None
    seq: Optional[int] = None


def _is_finite(*values: float) -> bool:
    return all(math.isfinite(value) for value in values)


def validate_map(
    fp_map: FingerprintMap,
    window_length: Optional[int] = None,
    spacing_tol: Optional[float] = None,
) -> List[Violation]:
    """
    Check every type invariant of a map and report breaches as data.

    `window_length` enables the "path shorter than window" check and
    `spacing_tol` the fixed-spacing check (synthetic surveys use 1e-6 m).
    """
    violations: List[Violation] = []

    seen_paths: Dict[int, int] = {}
    for path in fp_map.paths:
        seen_paths[path.path_id] = seen_paths.get(path.path_id, 0) + 1
    for path_id, count in seen_paths.items():
        if count > 1:
            violations.append(
                Violation("duplicate_path_id", f"path_id {path_id} used {count} times", path_id)
            )

    seen_point_ids: Dict[int, int] = {}
    seen_slots: Dict[Tuple[int, int], int] = {}
    for path in fp_map.paths:
        for point in path.points:
            seen_point_ids[point.point_id] = seen_point_ids.get(point.point_id, 0) + 1
            slot = (path.path_id, point.seq)
            seen_slots[slot] = seen_slots.get(slot, 0) + 1

            if point.path_id != path.path_id:
                violations.append(
                    Violation(
                        "path_id_mismatch",
                        f"point {point.point_id} says path {point.path_id}, "
                        f"stored in {path.path_id}",
                        path.path_id,
                        point.point_id,
                        point.seq,
                    )
                )
            if not _is_finite(point.pos[0], point.pos[1], point.feat.mv, point.feat.mh):
                violations.append(
                    Violation(
                        "non_finite",
                        f"point {point.point_id} has a non-finite value",
                        path.path_id,
                        point.point_id,
                        point.seq,
                    )
                )
            elif point.feat.mh < 0:
                violations.append(
                    Violation(
                        "negative_mh",
                        f"point {point.point_id} has mh={point.feat.mh!r} < 0",
                        path.path_id,
                        point.point_id,
                        point.seq,
                    )
                )

        seqs = {point.seq for point in path.points}
        if seqs != set(range(len(seqs))):
            violations.append(
                Violation(
                    "seq_gap",
                    f"path {path.path_id} seq values are not 0..{len(seqs) - 1}",
                    path.path_id,
                )
            )

        if window_length is not None and len(path) < window_length:
            violations.append(
                Violation(
                    "path_shorter_than_window",
                    f"path shorter than window: path {path.path_id} has {len(path)} points, "
                    f"window needs {window_length}",
                    path.path_id,
                )
            )

        if spacing_tol is not None:
            for prev, curr in zip(path.points, path.points[1:]):
                step = math.hypot(curr.pos[0] - prev.pos[0], curr.pos[1] - prev.pos[1])
                if abs(step - fp_map.spacing_m) > spacing_tol:
                    violations.append(
                        Violation(
                            "spacing",
                            f"path {path.path_id} seq {prev.seq}->{curr.seq} step {step:.6f} m "
                            f"!= {fp_map.spacing_m} m",
                            path.path_id,
                            curr.point_id,
                            curr.seq,
                        )
                    )

    for point_id, count in seen_point_ids.items():
        if count > 1:
            violations.append(
                Violation(
                    "duplicate_point_id", f"point_id {point_id} used {count} times", None, point_id
                )
            )
    for (path_id, seq), count in seen_slots.items():
        if count > 1:
            violations.append(
                Violation(
                    "duplicate_seq",
                    f"(path_id, seq)=({path_id}, {seq}) used {count} times",
                    path_id,
                    None,
                    seq,
                )
            )

    return violations
