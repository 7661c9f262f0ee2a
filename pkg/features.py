"""
Orientation-tolerant magnetic features (Mv, Mh) from raw sensor samples.
"""

import logging
import math
from enum import Enum
from typing import List, Sequence, Tuple

import numpy as np

from config import GRAVITY_EPS, MARKER_SLACK_US
from errors import DegenerateGravityError, EmptyLogError, InputError, MarkerOutOfRangeError
from models import FeatureVec, SensorSample, Vec2

logger = logging.getLogger(__name__)

Marker = Tuple[int, Vec2]


class ExtractionMode(Enum):
    """Which feature formula to apply."""

    # Device screen up, z axis along gravity (cart mounting).
    ALIGNED = "aligned"
    # Any orientation: project onto the measured gravity direction.
    PROJECTED = "projected"


def extract_features_projected(sample: SensorSample, eps: float = GRAVITY_EPS) -> FeatureVec:
    """
    Split the field into its component along gravity and the remainder.

    mv is the signed scalar projection of m onto a/|a|. mh is the norm of the
    rejection m - mv * a/|a|, which equals sqrt(|m|^2 - mv^2) and cannot go
    negative. With a = (0, 0, g) the unit vector is exactly (0, 0, 1), so the
    result equals `extract_features_aligned` bit for bit.
    """
    mx, my, mz = sample.m
    ax, ay, az = sample.a
    norm_a = math.sqrt(ax * ax + ay * ay + az * az)
    if not norm_a > eps:
        raise DegenerateGravityError(
            [], f"|a|={norm_a!r} m/s^2 at t={sample.timestamp} cannot resolve the vertical"
        )

    ux, uy, uz = ax / norm_a, ay / norm_a, az / norm_a
    # + 0.0 folds -0.0 into 0.0 so both forms serialise identically.
    mv = mx * ux + my * uy + mz * uz + 0.0
    hx, hy, hz = mx - mv * ux, my - mv * uy, mz - mv * uz
    mh = math.sqrt(hx * hx + hy * hy + hz * hz)
    return FeatureVec(mv=mv, mh=mh)


def extract_features_aligned(sample: SensorSample) -> FeatureVec:
    """Cart form: mv = mz, mh = |(mx, my)|. Acceleration is ignored."""
    mx, my, mz = sample.m
    return FeatureVec(mv=mz + 0.0, mh=math.sqrt(mx * mx + my * my))


def extract_features(
    sample: SensorSample, mode: ExtractionMode = ExtractionMode.ALIGNED
) -> FeatureVec:
    if mode == ExtractionMode.PROJECTED:
        return extract_features_projected(sample)
    return extract_features_aligned(sample)


def nearest_sample_index(timestamps: np.ndarray, t: int) -> int:
    """Index of the sample nearest to `t`; ties and repeated timestamps go to the earlier one."""
    idx = int(np.searchsorted(timestamps, t, side="left"))
    if idx >= len(timestamps):
        idx = len(timestamps) - 1
    elif idx > 0 and t - timestamps[idx - 1] <= timestamps[idx] - t:
        idx -= 1
    return int(np.searchsorted(timestamps, timestamps[idx], side="left"))


def extract_path_features(
    log: Sequence[SensorSample],
    markers: Sequence[Marker],
    mode: ExtractionMode = ExtractionMode.ALIGNED,
    slack_us: int = MARKER_SLACK_US,
) -> List[Tuple[Vec2, FeatureVec]]:
    """
    Tag each position marker with the features of its nearest-in-time sample.

    In projected mode every marker that lands on a degenerate-gravity sample
    is collected and reported together in one `DegenerateGravityError`.
    """
    if not log:
        raise EmptyLogError("sensor log is empty")

    timestamps = np.array([sample.timestamp for sample in log], dtype=np.int64)
    if np.any(np.diff(timestamps) < 0):
        raise InputError("sensor log timestamps must be non-decreasing")
    marker_times = [int(t) for t, _ in markers]
    if any(later < earlier for earlier, later in zip(marker_times, marker_times[1:])):
        raise InputError("markers must be sorted by timestamp")

    first, last = int(timestamps[0]), int(timestamps[-1])
    rows: List[Tuple[Vec2, FeatureVec]] = []
    degenerate: List[int] = []
    for t, pos in markers:
        if t < first - slack_us or t > last + slack_us:
            raise MarkerOutOfRangeError(
                f"marker at t={t} us is outside the log span [{first}, {last}] us by more than "
                f"{slack_us} us"
            )
        idx = nearest_sample_index(timestamps, int(t))
        try:
            feat = extract_features(log[idx], mode)
        except DegenerateGravityError:
            degenerate.append(idx)
            continue
        rows.append(((float(pos[0]), float(pos[1])), feat))

    if degenerate:
        raise DegenerateGravityError(sorted(set(degenerate)))

    logger.debug("Extracted %d marker features in %s mode", len(rows), mode.value)
    return rows
