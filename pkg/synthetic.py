"""
Deterministic synthetic magnetic field and survey generator.

Stands in for a surveyed plant floor: point sources play the role of
motors and magnetised metal. Every output is a pure function of its
inputs and seed.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import pdist

from config import (
    DEFAULT_SPACING_M,
    FIELD_BACKGROUND,
    FIELD_MIN_SOURCE_DISTANCE_M,
    FIELD_N_SOURCES,
    FIELD_SOFTENING_M2,
    FIELD_STRENGTH_RANGE,
    FLOOR_BOUNDS,
    FLOOR_CELL_M,
    FLOOR_MARGIN_M,
    GRAVITY_MPS2,
    REFERENCE_LENGTH_RANGE,
    REFERENCE_N_PATHS,
    REFERENCE_TOTAL_POINTS,
    SURVEY_MAX_ATTEMPTS,
    TRACK_LANE_GAP_M,
    TRACK_MAX_GAP_POINTS,
)
from errors import (
    DegenerateWindowError,
    FloorOverflowError,
    InputError,
    InvalidMapError,
    SourceCollisionError,
)
from models import (
    FeatureVec,
    FingerprintMap,
    RefPath,
    SensorSample,
    TargetCase,
    Vec2,
    Window,
    validate_map,
)
from store import build_map, enumerate_windows

logger = logging.getLogger(__name__)

Bounds = Tuple[float, float, float, float]


class WarpOp(Enum):
    DUPLICATE = "dup"
    DROP = "drop"


@dataclass(frozen=True)
class FieldSource:
    """A point disturbance: strength in µT·m², split between vertical and horizontal."""

    pos: Vec2
    strength: float
    vertical_fraction: float


@dataclass(frozen=True)
class FieldModel:
    """Background field plus point sources on a rectangular floor."""

    sources: Tuple[FieldSource, ...] = ()
    background: FeatureVec = FeatureVec(*FIELD_BACKGROUND)
    bounds: Bounds = FLOOR_BOUNDS
    seed: int = 0

    def __post_init__(self) -> None:
        min_x, min_y, max_x, max_y = self.bounds
        for source in self.sources:
            if not math.isfinite(source.strength):
                raise InputError(f"source strength must be finite, got {source.strength!r}")
            if not 0.0 <= source.vertical_fraction <= 1.0:
                raise InputError(
                    f"vertical_fraction must be in [0, 1], got {source.vertical_fraction!r}"
                )
            x, y = source.pos
            if not (min_x <= x <= max_x and min_y <= y <= max_y):
                raise InputError(f"source at {source.pos} lies outside floor bounds {self.bounds}")

    @cached_property
    def _arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        positions = np.array([source.pos for source in self.sources], dtype=float).reshape(-1, 2)
        strengths = np.array([source.strength for source in self.sources], dtype=float)
        fractions = np.array([source.vertical_fraction for source in self.sources], dtype=float)
        return positions, strengths, fractions


def field_at(model: FieldModel, pos: Vec2) -> FeatureVec:
    """Softened inverse-square field: every source adds strength / (d² + 0.25)."""
    if not model.sources:
        return FeatureVec(mv=model.background.mv, mh=abs(model.background.mh))

    positions, strengths, fractions = model._arrays
    offsets = positions - np.asarray(pos, dtype=float)
    d2 = np.sum(offsets * offsets, axis=1)
    nearest = int(np.argmin(d2))
    if d2[nearest] < FIELD_MIN_SOURCE_DISTANCE_M**2:
        raise SourceCollisionError(
            f"position {pos} is within {FIELD_MIN_SOURCE_DISTANCE_M} m of the source at "
            f"{model.sources[nearest].pos}"
        )
    weights = strengths / (d2 + FIELD_SOFTENING_M2)
    mv = model.background.mv + float(np.sum(fractions * weights))
    mh = abs(model.background.mh + float(np.sum((1.0 - fractions) * weights)))
    return FeatureVec(mv=mv, mh=mh)


def random_field_model(
    bounds: Bounds = FLOOR_BOUNDS,
    n_sources: int = FIELD_N_SOURCES,
    strength_range: Tuple[float, float] = FIELD_STRENGTH_RANGE,
    background: FeatureVec = FeatureVec(*FIELD_BACKGROUND),
    seed: int = 0,
) -> FieldModel:
    """Seeded plant-like field: sources of random sign, magnitude and vertical split."""
    rng = np.random.default_rng(seed)
    min_x, min_y, max_x, max_y = bounds
    xs = rng.uniform(min_x, max_x, n_sources)
    ys = rng.uniform(min_y, max_y, n_sources)
    magnitudes = rng.uniform(strength_range[0], strength_range[1], n_sources)
    signs = rng.choice(np.array([-1.0, 1.0]), n_sources)
    fractions = rng.uniform(0.0, 1.0, n_sources)
    sources = tuple(
        FieldSource(
            pos=(float(x), float(y)),
            strength=float(sign * magnitude),
            vertical_fraction=float(fraction),
        )
        for x, y, magnitude, sign, fraction in zip(xs, ys, magnitudes, signs, fractions)
    )
    return FieldModel(sources=sources, background=background, bounds=bounds, seed=seed)


def reference_shape_lengths(
    n_paths: int = REFERENCE_N_PATHS,
    total: int = REFERENCE_TOTAL_POINTS,
    length_range: Tuple[int, int] = REFERENCE_LENGTH_RANGE,
    seed: int = 0,
) -> List[int]:
    """Seeded path lengths within `length_range` that sum to `total`."""
    low, high = length_range
    if not n_paths * low <= total <= n_paths * high:
        raise InputError(
            f"{n_paths} paths of {low}..{high} points cannot sum to {total} points"
        )
    rng = np.random.default_rng(seed)
    lengths = [int(value) for value in rng.integers(low, high + 1, n_paths)]
    remaining = total - sum(lengths)
    while remaining:
        step = 1 if remaining > 0 else -1
        idx = int(rng.integers(n_paths))
        if low <= lengths[idx] + step <= high:
            lengths[idx] += step
            remaining -= step
    return lengths


@dataclass(frozen=True)
class _Layout:
    cols: int
    rows: int
    cap: int
    cell: float
    margin: float


def _plan_layout(
    n_paths: int, lengths: Sequence[int], bounds: Bounds, spacing_m: float
) -> Optional[_Layout]:
    """One floor cell per path, or None when the paths do not fit that way."""
    min_x, min_y, max_x, max_y = bounds
    cols = int((max_x - min_x) // FLOOR_CELL_M)
    rows = int((max_y - min_y) // FLOOR_CELL_M)
    cap = int(math.floor((FLOOR_CELL_M - 2 * FLOOR_MARGIN_M) / spacing_m + 1e-9))
    if n_paths > cols * rows or cap < 1 or max(lengths) - 1 > 2 * cap:
        return None
    return _Layout(cols=cols, rows=rows, cap=cap, cell=FLOOR_CELL_M, margin=FLOOR_MARGIN_M)


@dataclass(frozen=True)
class _Track:
    """
    Serpentine track over the whole floor with equal steps between points.

    Lanes run along x, `lane_steps` apart, joined by short legs along y at
    alternating ends.
    """

    origin: Vec2
    spacing: float
    run_steps: int
    lane_steps: int
    lanes: int

    @property
    def capacity(self) -> int:
        return self.lanes * (self.run_steps + self.lane_steps) - (self.lane_steps - 1)

    def position(self, idx: int) -> Vec2:
        block = self.run_steps + self.lane_steps
        lane, offset = divmod(idx, block)
        if offset <= self.run_steps:
            col = offset if lane % 2 == 0 else self.run_steps - offset
            row = lane * self.lane_steps
        else:
            col = self.run_steps if lane % 2 == 0 else 0
            row = lane * self.lane_steps + offset - self.run_steps
        return (self.origin[0] + col * self.spacing, self.origin[1] + row * self.spacing)


def _plan_track(bounds: Bounds, spacing_m: float) -> _Track:
    min_x, min_y, max_x, max_y = bounds
    width = max(0.0, max_x - min_x - 2 * FLOOR_MARGIN_M)
    height = max(0.0, max_y - min_y - 2 * FLOOR_MARGIN_M)
    lane_steps = max(1, int(math.ceil(TRACK_LANE_GAP_M / spacing_m - 1e-9)))
    return _Track(
        origin=(min_x + FLOOR_MARGIN_M, min_y + FLOOR_MARGIN_M),
        spacing=spacing_m,
        run_steps=int(math.floor(width / spacing_m + 1e-9)),
        lane_steps=lane_steps,
        lanes=int(math.floor(height / (lane_steps * spacing_m) + 1e-9)) + 1,
    )


def _track_slack(track: _Track, lengths: Sequence[int]) -> int:
    """Track points left over once every path and a one-point gap between paths are placed."""
    slack = track.capacity - sum(lengths) - (len(lengths) - 1)
    if slack < 0:
        raise FloorOverflowError(
            f"{sum(lengths)} points in {len(lengths)} paths at {track.spacing} m spacing "
            f"do not fit the floor (track holds {track.capacity} points)"
        )
    return slack


def _lay_out_track(
    track: _Track, lengths: Sequence[int], slack: int, rng: np.random.Generator
) -> List[List[Vec2]]:
    """Consecutive track segments, one per path, with seeded extra gaps."""
    extra = min(slack // (len(lengths) + 1), TRACK_MAX_GAP_POINTS)
    gaps = [int(gap) for gap in rng.integers(0, extra + 1, len(lengths))]
    cursor = 0
    laid = []
    for length, gap in zip(lengths, gaps):
        cursor += gap
        laid.append([track.position(cursor + k) for k in range(length)])
        cursor += length + 1
    return laid


def _lay_out_path(
    cell_idx: int,
    length: int,
    layout: _Layout,
    bounds: Bounds,
    spacing_m: float,
    rng: np.random.Generator,
) -> List[Vec2]:
    """Straight or L-shaped polyline inside its own floor cell."""
    steps = length - 1
    if steps <= layout.cap and rng.random() < 0.5:
        leg_a, leg_b = steps, 0
    else:
        leg_a = int(rng.integers((steps + 1) // 2, min(steps, layout.cap) + 1))
        leg_b = steps - leg_a
    horizontal_first = bool(rng.random() < 0.5)
    dir_a = 1.0 if rng.random() < 0.5 else -1.0
    dir_b = 1.0 if rng.random() < 0.5 else -1.0

    extent_a, extent_b = leg_a * spacing_m, leg_b * spacing_m
    room = layout.cell - 2 * layout.margin
    origin_x = bounds[0] + (cell_idx % layout.cols) * layout.cell + layout.margin
    origin_y = bounds[1] + (cell_idx // layout.cols) * layout.cell + layout.margin
    ext_x, ext_y = (extent_a, extent_b) if horizontal_first else (extent_b, extent_a)
    dir_x, dir_y = (dir_a, dir_b) if horizontal_first else (dir_b, dir_a)
    offset_x = float(rng.uniform(0.0, max(0.0, room - ext_x)))
    offset_y = float(rng.uniform(0.0, max(0.0, room - ext_y)))
    start_x = origin_x + offset_x + (ext_x if dir_x < 0 else 0.0)
    start_y = origin_y + offset_y + (ext_y if dir_y < 0 else 0.0)

    points: List[Vec2] = []
    for k in range(leg_a + 1):
        along = dir_a * k * spacing_m
        if horizontal_first:
            points.append((start_x + along, start_y))
        else:
            points.append((start_x, start_y + along))
    corner_x, corner_y = points[-1]
    for k in range(1, leg_b + 1):
        along = dir_b * k * spacing_m
        if horizontal_first:
            points.append((corner_x, corner_y + along))
        else:
            points.append((corner_x + along, corner_y))
    return points


def generate_survey(
    model: FieldModel,
    n_paths: int,
    length_range: Tuple[int, int],
    spacing_m: float = DEFAULT_SPACING_M,
    seed: int = 0,
    total_points: Optional[int] = None,
) -> FingerprintMap:
    """
    Lay out paths on the floor and sample the field at every point.

    With `total_points` the lengths are drawn to hit that sum exactly. A
    layout that lands on a source or yields two identical feature vectors is
    redrawn from the next derived seed.
    """
    low, high = length_range
    if not 2 <= low <= high <= 10_000:
        raise InputError(f"length range must satisfy 2 <= low <= high <= 10000, got {length_range}")
    if n_paths < 1:
        raise InputError(f"n_paths must be >= 1, got {n_paths}")
    if not spacing_m > 0:
        raise InputError(f"spacing must be > 0, got {spacing_m}")

    if total_points is not None:
        lengths = reference_shape_lengths(n_paths, total_points, length_range, seed)
    else:
        lengths = [int(v) for v in np.random.default_rng(seed).integers(low, high + 1, n_paths)]
    layout = _plan_layout(n_paths, lengths, model.bounds, spacing_m)
    track, slack = None, 0
    if layout is None:
        track = _plan_track(model.bounds, spacing_m)
        slack = _track_slack(track, lengths)
        logger.info("Paths do not fit one per cell; laying them along a floor-wide track")

    for attempt in range(SURVEY_MAX_ATTEMPTS):
        rng = np.random.default_rng([seed, attempt])
        try:
            if layout is not None:
                placed = [
                    _lay_out_path(path_id, length, layout, model.bounds, spacing_m, rng)
                    for path_id, length in enumerate(lengths)
                ]
            elif track is not None:
                placed = _lay_out_track(track, lengths, slack, rng)
            surveyed = []
            for path_id, positions in enumerate(placed):
                surveyed.append((path_id, [(pos, field_at(model, pos)) for pos in positions]))
        except SourceCollisionError as error:
            logger.debug("Layout attempt %d hit a source: %s", attempt, error)
            continue

        fp_map = build_map(
            surveyed,
            spacing_m=spacing_m,
            meta={"generator": "synthetic", "seed": str(seed), "layout_attempt": str(attempt)},
        )
        if fp_map.n_points > 1 and float(np.min(pdist(fp_map.feature_matrix))) <= 0.0:
            logger.debug("Layout attempt %d produced duplicate features", attempt)
            continue

        violations = validate_map(fp_map, spacing_tol=1e-6)
        if violations:
            raise InvalidMapError("; ".join(violation.message for violation in violations))
        logger.info(
            "Generated survey: %d paths, %d points (seed=%d, attempt=%d)",
            len(fp_map.paths),
            fp_map.n_points,
            seed,
            attempt,
        )
        return fp_map

    raise InputError(f"no valid survey layout after {SURVEY_MAX_ATTEMPTS} attempts (seed={seed})")


def generate_reference_floor(seed: int = 0, model: Optional[FieldModel] = None) -> FingerprintMap:
    """24 paths, 1024 points, 20..50 points per path, 0.30 m spacing."""
    model = model or random_field_model(seed=seed)
    return generate_survey(
        model,
        n_paths=REFERENCE_N_PATHS,
        length_range=REFERENCE_LENGTH_RANGE,
        spacing_m=DEFAULT_SPACING_M,
        seed=seed,
        total_points=REFERENCE_TOTAL_POINTS,
    )


def case_id_for(window: Window) -> str:
    return f"{window.path_id}:{window.start}:{window.direction.value}"


def replay_targets(
    fp_map: FingerprintMap, window_length: int, include_reversed: bool = False
) -> List[TargetCase]:
    """Every map window as its own target (exact replay)."""
    return [
        TargetCase(case_id=case_id_for(window), window=window)
        for window in enumerate_windows(fp_map, window_length, include_reversed)
    ]


def _noisy(
    feats: Sequence[FeatureVec], noise_ut: float, rng: np.random.Generator
) -> List[FeatureVec]:
    noise = rng.normal(0.0, noise_ut, (len(feats), 2))
    return [
        FeatureVec(mv=feat.mv + float(dmv), mh=max(0.0, feat.mh + float(dmh)))
        for feat, (dmv, dmh) in zip(feats, noise)
    ]


def warp_replay(
    window: Window,
    ops: Sequence[Tuple[int, WarpOp]],
    noise_ut: float = 0.0,
    seed: int = 0,
) -> Window:
    """
    Time-warp a window: duplicate or drop elements, then add feature noise.

    Indices refer to the original window. Coordinates follow the features,
    and the result keeps the source window's identity.
    """
    length = window.length
    multiplicity = [1] * length
    for idx, op in ops:
        if not 0 <= idx < length:
            raise DegenerateWindowError(f"warp index {idx} outside window of length {length}")
        if op == WarpOp.DROP:
            if idx in (0, length - 1):
                raise DegenerateWindowError(f"cannot drop endpoint index {idx}")
            if multiplicity[idx] != 1:
                raise DegenerateWindowError(f"index {idx} is both dropped and duplicated")
            multiplicity[idx] = 0
        else:
            if multiplicity[idx] == 0:
                raise DegenerateWindowError(f"index {idx} is both dropped and duplicated")
            multiplicity[idx] += 1
    if sum(multiplicity) < 2:
        raise DegenerateWindowError("warped window would have fewer than 2 elements")
    if noise_ut < 0:
        raise DegenerateWindowError(f"noise must be >= 0, got {noise_ut}")

    feats: List[FeatureVec] = []
    coords: List[Vec2] = []
    for idx, count in enumerate(multiplicity):
        feats.extend([window.feats[idx]] * count)
        coords.extend([window.coords[idx]] * count)
    if noise_ut > 0:
        feats = _noisy(feats, noise_ut, np.random.default_rng(seed))

    return Window(
        path_id=window.path_id,
        start=window.start,
        direction=window.direction,
        feats=tuple(feats),
        coords=tuple(coords),
    )


def parse_warp_ops(text: str) -> List[Tuple[int, WarpOp]]:
    """Parse `"dup:3,drop:7"` into warp operations."""
    ops: List[Tuple[int, WarpOp]] = []
    for chunk in filter(None, (part.strip() for part in text.split(","))):
        name, _, raw_idx = chunk.partition(":")
        try:
            op = WarpOp(name.strip().lower())
            idx = int(raw_idx)
        except ValueError:
            raise InputError(f"bad warp op {chunk!r}, expected dup:<i> or drop:<i>") from None
        ops.append((idx, op))
    return ops


def random_warp_ops(length: int, count: int, seed: int = 0) -> List[Tuple[int, WarpOp]]:
    """
    `count` duplications in the first half and `count` drops in the second.

    The replay lags behind and then catches up, so its length stays the same
    while the middle section is shifted by `count` samples.
    """
    half = length // 2
    if count < 1 or half - 1 < count or (length - 1) - half < count:
        raise DegenerateWindowError(f"cannot place {count} dup/drop pairs in length {length}")
    rng = np.random.default_rng(seed)
    dups = sorted(int(i) for i in rng.choice(np.arange(1, half), count, replace=False))
    drops = sorted(int(i) for i in rng.choice(np.arange(half, length - 1), count, replace=False))
    return [(idx, WarpOp.DUPLICATE) for idx in dups] + [(idx, WarpOp.DROP) for idx in drops]


def warped_targets(
    fp_map: FingerprintMap,
    window_length: int,
    n_targets: int,
    max_ops: int = 3,
    noise_ut: float = 0.5,
    include_reversed: bool = False,
    seed: int = 0,
) -> List[TargetCase]:
    """Seeded warped replays of randomly chosen map windows (1..max_ops pairs each)."""
    windows = enumerate_windows(fp_map, window_length, include_reversed)
    if not windows:
        raise InputError("map has no windows to warp")
    rng = np.random.default_rng(seed)
    cases: List[TargetCase] = []
    for idx in range(n_targets):
        window = windows[int(rng.integers(len(windows)))]
        count = int(rng.integers(1, max_ops + 1))
        ops = random_warp_ops(window.length, count, seed=int(rng.integers(2**31)))
        warped = warp_replay(window, ops, noise_ut=noise_ut, seed=int(rng.integers(2**31)))
        cases.append(TargetCase(case_id=f"warp{idx}:{case_id_for(window)}", window=warped))
    return cases


def noisy_resurvey(
    cases: Sequence[TargetCase], noise_ut: float, seed: int = 0
) -> List[TargetCase]:
    """Re-measure targets at the same positions with Gaussian feature noise."""
    if noise_ut < 0:
        raise InputError(f"noise must be >= 0, got {noise_ut}")
    rng = np.random.default_rng(seed)
    resurveyed = []
    for case in cases:
        feats = _noisy(case.window.feats, noise_ut, rng) if noise_ut > 0 else case.window.feats
        resurveyed.append(
            TargetCase(
                case_id=case.case_id,
                window=Window(
                    path_id=case.window.path_id,
                    start=case.window.start,
                    direction=case.window.direction,
                    feats=tuple(feats),
                    coords=case.window.coords,
                ),
            )
        )
    return resurveyed


def _rotate_x(vector: Tuple[float, float, float], angle: float) -> Tuple[float, float, float]:
    x, y, z = vector
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    return (x, y * cos_a - z * sin_a, y * sin_a + z * cos_a)


def render_sensor_log(
    path: RefPath,
    sample_interval_us: int = 10_000,
    samples_per_point: int = 5,
    tilt_deg: float = 0.0,
    start_us: int = 0,
    seed: int = 0,
) -> Tuple[List[SensorSample], List[Tuple[int, Vec2]]]:
    """
    Synthesise the raw log a cart would record along `path`, plus position markers.

    The device heading is a seeded constant; `tilt_deg` rolls the device
    (field and gravity together), which only projected extraction undoes.
    """
    if samples_per_point < 1 or sample_interval_us < 1:
        raise InputError("sample interval and samples per point must be >= 1")
    rng = np.random.default_rng(seed)
    heading = float(rng.uniform(0.0, 2.0 * math.pi))
    tilt = math.radians(tilt_deg)
    gravity = _rotate_x((0.0, 0.0, GRAVITY_MPS2), tilt)

    samples: List[SensorSample] = []
    markers: List[Tuple[int, Vec2]] = []
    timestamp = start_us
    for point in path.points:
        m_device = _rotate_x(
            (point.feat.mh * math.cos(heading), point.feat.mh * math.sin(heading), point.feat.mv),
            tilt,
        )
        markers.append((timestamp, point.pos))
        for _ in range(samples_per_point):
            samples.append(SensorSample(timestamp=timestamp, m=m_device, a=gravity))
            timestamp += sample_interval_us
    return samples, markers
