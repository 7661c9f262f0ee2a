"""
Fingerprint matching: Point, Path and DTW matching.

Candidates are always scored in canonical (path_id, start, direction) order
and reduced with a first-minimum argmin, so the winner never depends on the
order in which the caller listed candidates.
"""

import logging
import math
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.spatial.distance import cdist

from errors import (
    EmptyCandidatesError,
    EmptyMapError,
    EmptySequenceError,
    LengthMismatchError,
)
from models import (
    Algorithm,
    DtwParams,
    FeatureVec,
    FingerprintMap,
    MatchParams,
    MatchResult,
    Window,
)

logger = logging.getLogger(__name__)


def feature_distance(a: FeatureVec, b: FeatureVec) -> float:
    """Euclidean distance in (mv, mh) space."""
    dmv = a.mv - b.mv
    dmh = a.mh - b.mh
    return math.sqrt(dmv * dmv + dmh * dmh)


class CandidateSet:
    """Candidate windows stacked per length for vectorised scoring."""

    def __init__(self, windows: Sequence[Window]):
        if not windows:
            raise EmptyCandidatesError("no candidate windows")
        self.windows: List[Window] = sorted(windows, key=lambda window: window.key)

        by_length: Dict[int, List[int]] = {}
        for idx, window in enumerate(self.windows):
            by_length.setdefault(window.length, []).append(idx)
        self.groups: Dict[int, np.ndarray] = {
            length: np.asarray(indices, dtype=np.intp) for length, indices in by_length.items()
        }
        self.stacks: Dict[int, np.ndarray] = {
            length: np.stack([self.windows[idx].features_array() for idx in indices])
            for length, indices in by_length.items()
        }

    @classmethod
    def of(cls, windows: Union["CandidateSet", Sequence[Window]]) -> "CandidateSet":
        if isinstance(windows, CandidateSet):
            return windows
        return cls(windows)

    def __len__(self) -> int:
        return len(self.windows)

    @property
    def uniform_length(self) -> Optional[int]:
        if len(self.groups) == 1:
            return next(iter(self.groups))
        return None


Candidates = Union[CandidateSet, Sequence[Window]]


def _select(scores: np.ndarray, candidates: CandidateSet, algorithm: Algorithm) -> MatchResult:
    if not np.isfinite(scores).any():
        raise EmptyCandidatesError("no admissible candidate (all scores infinite)")
    idx = int(np.argmin(scores))
    return MatchResult(
        algorithm=algorithm, score=float(scores[idx]), window=candidates.windows[idx]
    )


def point_match(target: FeatureVec, fp_map: FingerprintMap) -> MatchResult:
    """Nearest reference point in feature space; ties go to the smallest point_id."""
    if fp_map.n_points == 0:
        raise EmptyMapError("map has no reference points")
    query = np.array([[target.mv, target.mh]], dtype=float)
    distances = cdist(query, fp_map.feature_matrix)[0]
    idx = int(np.argmin(distances))
    return MatchResult(
        algorithm=Algorithm.POINT,
        score=float(distances[idx]),
        point=fp_map.points_by_id[idx],
    )


def path_scores(target: Window, candidates: CandidateSet) -> np.ndarray:
    """Mean index-wise feature distance against every candidate (canonical order)."""
    if candidates.uniform_length != target.length:
        lengths = sorted(candidates.groups)
        raise LengthMismatchError(
            f"target length {target.length} does not match candidate lengths {lengths}"
        )
    diffs = candidates.stacks[target.length] - target.features_array()[np.newaxis, :, :]
    return np.sqrt(np.sum(diffs * diffs, axis=2)).mean(axis=1)


def path_match(target: Window, windows: Candidates) -> MatchResult:
    """Candidate window with the smallest mean index-wise feature distance."""
    candidates = CandidateSet.of(windows)
    return _select(path_scores(target, candidates), candidates, Algorithm.PATH)


def _dtw_batch(query: np.ndarray, refs: np.ndarray, band: Optional[int]) -> np.ndarray:
    """
    Accumulated DTW cost of `query` (n, 2) against every reference in `refs` (C, m, 2).

    Symmetric three-way step, unit weights, unnormalised. The table is laid
    out as (n + 1, m + 1, C) so each cell update is one contiguous vector op.
    """
    n = query.shape[0]
    count, m = refs.shape[0], refs.shape[1]
    diffs = query[:, np.newaxis, np.newaxis, :] - refs.transpose(1, 0, 2)[np.newaxis, :, :, :]
    cost = np.sqrt(np.sum(diffs * diffs, axis=3))

    table = np.full((n + 1, m + 1, count), np.inf)
    table[0, 0, :] = 0.0
    for i in range(1, n + 1):
        j_lo, j_hi = 1, m
        if band is not None:
            j_lo, j_hi = max(1, i - band), min(m, i + band)
        for j in range(j_lo, j_hi + 1):
            best = np.minimum(np.minimum(table[i - 1, j], table[i, j - 1]), table[i - 1, j - 1])
            table[i, j] = cost[i - 1, j - 1] + best
    return table[n, m].copy()


def dtw_distance(
    a: Sequence[FeatureVec], b: Sequence[FeatureVec], params: Optional[DtwParams] = None
) -> float:
    """DTW accumulated cost between two feature sequences (lengths may differ)."""
    if not a or not b:
        raise EmptySequenceError("DTW needs two non-empty sequences")
    params = params or DtwParams()
    query = np.array([feat.as_tuple() for feat in a], dtype=float)
    ref = np.array([feat.as_tuple() for feat in b], dtype=float)
    return float(_dtw_batch(query, ref[np.newaxis, :, :], params.band)[0])


def dtw_scores(
    target: Window, candidates: CandidateSet, params: Optional[DtwParams] = None
) -> np.ndarray:
    if target.length == 0:
        raise EmptySequenceError("target window is empty")
    params = params or DtwParams()
    query = target.features_array()
    scores = np.empty(len(candidates), dtype=float)
    for length, indices in candidates.groups.items():
        scores[indices] = _dtw_batch(query, candidates.stacks[length], params.band)
    return scores


def dtw_match(
    target: Window, windows: Candidates, params: Optional[DtwParams] = None
) -> MatchResult:
    """Candidate window with the smallest DTW accumulated cost."""
    candidates = CandidateSet.of(windows)
    return _select(dtw_scores(target, candidates, params), candidates, Algorithm.DTW)


def match_target(
    target: Window,
    algorithm: Algorithm,
    fp_map: FingerprintMap,
    candidates: Optional[CandidateSet],
    params: MatchParams,
) -> MatchResult:
    """
    Dispatch one target to the chosen matcher.

    Point matching queries with the target's first element.
    """
    if algorithm == Algorithm.POINT:
        if target.length == 0:
            raise EmptySequenceError("target window is empty")
        return point_match(target.feats[0], fp_map)
    if candidates is None:
        raise EmptyCandidatesError("no candidate windows")
    if algorithm == Algorithm.PATH:
        return path_match(target, candidates)
    return dtw_match(target, candidates, params.dtw)
