"""
Tests for Point, Path and DTW matching.
"""

import math
import random

import numpy as np
import pytest
from scipy.spatial.distance import pdist

from errors import EmptyCandidatesError, EmptyMapError, EmptySequenceError, LengthMismatchError
from matching import (
    CandidateSet,
    dtw_distance,
    dtw_match,
    feature_distance,
    match_target,
    path_match,
    point_match,
)
from models import (
    Algorithm,
    Direction,
    DtwParams,
    FeatureVec,
    FingerprintMap,
    MatchParams,
    Window,
)
from store import build_map, enumerate_windows


def _feats(values):
    return tuple(FeatureVec(float(mv), float(mh)) for mv, mh in values)


def _window(path_id, values, start=0, direction=Direction.FORWARD):
    feats = _feats(values)
    coords = tuple((float(path_id), 0.3 * idx) for idx in range(len(feats)))
    return Window(path_id, start, direction, feats, coords)


def _line(values):
    return [(value, 0.0) for value in values]


def _brute_force_dtw(a, b):
    """Minimum cost over an explicit enumeration of every monotone warping path."""
    cost = [[feature_distance(x, y) for y in b] for x in a]

    def paths(i, j):
        if i == 0 and j == 0:
            yield cost[0][0]
            return
        for di, dj in ((1, 0), (0, 1), (1, 1)):
            pi, pj = i - di, j - dj
            if pi >= 0 and pj >= 0:
                for prefix in paths(pi, pj):
                    yield prefix + cost[i][j]

    return min(paths(len(a) - 1, len(b) - 1))


class TestFeatureDistance:
    @pytest.mark.parametrize(
        "a, b, expected",
        [((5, 5), (5, 5), 0.0), ((0, 0), (3, 4), 5.0), ((1, 2), (4, 6), 5.0)],
    )
    def test_examples(self, a, b, expected):
        assert feature_distance(FeatureVec(*a), FeatureVec(*b)) == expected


class TestPointMatch:
    def _map(self, features):
        return build_map([(0, [((0.3 * idx, 0.0), feat) for idx, feat in enumerate(features)])])

    def test_exact_hit(self):
        features = [FeatureVec(10.0 * idx, 5.0 * idx) for idx in range(12)]
        result = point_match(features[7], self._map(features))
        assert result.point.point_id == 7
        assert result.score == 0.0
        assert result.coords == (result.point.pos,)

    def test_tie_goes_to_smallest_point_id(self):
        features = [FeatureVec(1.0, 1.0), FeatureVec(9.0, 9.0), FeatureVec(1.0, 1.0)]
        assert point_match(FeatureVec(1.0, 1.0), self._map(features)).point.point_id == 0

    def test_agrees_with_brute_force(self):
        rng = np.random.default_rng(11)
        features = [FeatureVec(float(mv), float(mh)) for mv, mh in rng.uniform(0, 100, (200, 2))]
        fp_map = self._map(features)
        for _ in range(50):
            query = FeatureVec(*(float(v) for v in rng.uniform(0, 100, 2)))
            distances = [feature_distance(query, feat) for feat in features]
            expected = min(range(len(distances)), key=lambda idx: (distances[idx], idx))
            assert point_match(query, fp_map).point.point_id == expected

    def test_perturbed_reference_point_is_recovered(self):
        rng = np.random.default_rng(29)
        values = rng.uniform(0, 100, (150, 2))
        half_gap = float(pdist(values).min()) / 2
        fp_map = self._map([FeatureVec(float(mv), float(mh)) for mv, mh in values])
        for idx in rng.choice(len(values), 50, replace=False):
            angle = rng.uniform(0, 2 * math.pi)
            radius = 0.99 * half_gap * rng.uniform()
            mv, mh = values[idx] + radius * np.array([math.cos(angle), math.sin(angle)])
            assert point_match(FeatureVec(float(mv), float(mh)), fp_map).point.point_id == idx

    def test_empty_map(self):
        with pytest.raises(EmptyMapError):
            point_match(FeatureVec(0.0, 0.0), FingerprintMap(paths=()))


class TestPathMatch:
    def _candidates(self):
        return [
            _window(0, _line([0, 10, 20, 30])),
            _window(1, _line([5, 15, 25, 35])),
            _window(2, _line([100, 90, 80, 70])),
        ]

    def test_identical_target_scores_zero(self):
        candidates = self._candidates()
        result = path_match(candidates[1], candidates)
        assert result.window == candidates[1]
        assert result.score == 0.0

    def test_constant_offset_scores_five(self):
        candidates = [_window(0, [(0, 0), (1, 1), (2, 2)])]
        target = Window.from_sequence(
            _feats([(3, 4), (4, 5), (5, 6)]), [(0, 0), (0, 0), (0, 0)]
        )
        assert path_match(target, candidates).score == pytest.approx(5.0)

    def test_winner_independent_of_candidate_order(self):
        candidates = self._candidates()
        target = Window.from_sequence(_feats(_line([4, 14, 24, 34])), [(0, 0)] * 4)
        shuffled = list(candidates)
        random.Random(3).shuffle(shuffled)
        assert path_match(target, candidates) == path_match(target, shuffled)
        assert path_match(target, candidates).window.path_id == 1

    def test_tie_goes_to_canonical_first(self):
        twin_a = _window(4, _line([1, 2, 3]))
        twin_b = _window(2, _line([1, 2, 3]), start=5)
        result = path_match(twin_a, [twin_a, twin_b])
        assert result.window.path_id == 2

    def test_length_mismatch(self):
        target = Window.from_sequence(_feats(_line([1, 2])), [(0, 0), (0, 0)])
        with pytest.raises(LengthMismatchError):
            path_match(target, self._candidates())

    def test_no_candidates(self):
        with pytest.raises(EmptyCandidatesError):
            CandidateSet([])


class TestDtwDistance:
    def test_identical_sequences(self):
        feats = _feats([(1, 2), (3, 4), (5, 6)])
        assert dtw_distance(feats, feats) == 0.0

    def test_duplicated_element_costs_nothing(self):
        x, y = FeatureVec(1.0, 1.0), FeatureVec(7.0, 3.0)
        assert dtw_distance([x, y], [x, x, y]) == 0.0

    def test_band_zero_is_index_wise_sum(self):
        a = _feats([(0, 0), (1, 0), (2, 0)])
        b = _feats([(0, 4), (1, 0), (5, 4)])
        assert dtw_distance(a, b, DtwParams(band=0)) == pytest.approx(4.0 + 0.0 + 5.0)

    def test_empty_sequence(self):
        with pytest.raises(EmptySequenceError):
            dtw_distance([], _feats([(1, 1)]))

    def test_matches_brute_force_enumeration(self):
        rng = np.random.default_rng(5)
        for _ in range(150):
            n, m = (int(v) for v in rng.integers(1, 5, 2))
            a = _feats(rng.uniform(-10, 10, (n, 2)))
            b = _feats(rng.uniform(-10, 10, (m, 2)))
            assert dtw_distance(a, b) == pytest.approx(_brute_force_dtw(a, b), abs=1e-12)

    def test_symmetric(self):
        a = _feats([(0, 0), (3, 1), (2, 2)])
        b = _feats([(1, 1), (4, 0)])
        assert math.isclose(dtw_distance(a, b), dtw_distance(b, a))

    def test_bounded_by_index_wise_sum(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            n = int(rng.integers(1, 12))
            a = _feats(rng.uniform(-50, 50, (n, 2)))
            b = _feats(rng.uniform(-50, 50, (n, 2)))
            pointwise = sum(feature_distance(x, y) for x, y in zip(a, b))
            assert dtw_distance(a, b) <= pointwise + 1e-9

    def test_zero_exactly_when_runs_collapse_equal(self):
        rng = random.Random(23)
        alphabet = _feats([(0, 0), (1, 0), (0, 2)])

        def collapse(seq):
            return [feat for idx, feat in enumerate(seq) if idx == 0 or feat != seq[idx - 1]]

        zeros = 0
        for _ in range(400):
            a = [rng.choice(alphabet) for _ in range(rng.randint(1, 6))]
            b = [rng.choice(alphabet) for _ in range(rng.randint(1, 6))]
            if rng.random() < 0.5:
                # Stretch a by repeating elements so the collapsed runs agree.
                b = [feat for feat in a for _ in range(rng.randint(1, 3))]
            same = collapse(a) == collapse(b)
            zeros += same
            assert (dtw_distance(a, b) == 0.0) == same
        assert zeros > 0


class TestDtwMatch:
    def test_identical_target(self):
        candidates = [_window(0, _line([0, 10, 20])), _window(1, _line([30, 40, 50]))]
        result = dtw_match(candidates[1], candidates)
        assert result.window == candidates[1]
        assert result.score == 0.0

    def test_time_warped_replay_still_matches_source(self):
        source = _window(0, _line([0, 10, 20, 30, 40, 50]))
        shifted = _window(0, _line([10, 20, 30, 40, 50, 60]), start=1)
        other = _window(1, _line([50, 40, 30, 20, 10, 0]))
        warped = Window.from_sequence(_feats(_line([0, 10, 10, 20, 30, 50])), source.coords)

        result = dtw_match(warped, [other, shifted, source])
        assert result.window == source
        assert result.score == pytest.approx(10.0)
        assert path_match(warped, [source]).score > 0.0

    def test_mixed_candidate_lengths(self):
        candidates = [_window(0, _line([0, 10])), _window(1, _line([0, 5, 10, 10]))]
        target = Window.from_sequence(_feats(_line([0, 5, 10])), [(0, 0)] * 3)
        result = dtw_match(target, candidates)
        assert result.window.path_id == 1
        assert result.score == 0.0


class TestMatchTarget:
    def _map(self):
        surveyed = [((0.3 * idx, 0.0), FeatureVec(10.0 * idx, 1.0)) for idx in range(6)]
        return build_map([(0, surveyed)])

    def test_point_uses_first_element(self):
        fp_map = self._map()
        window = enumerate_windows(fp_map, 3)[2]
        result = match_target(window, Algorithm.POINT, fp_map, None, MatchParams(window_length=3))
        assert result.point.seq == 2

    def test_path_and_dtw_need_candidates(self):
        fp_map = self._map()
        window = enumerate_windows(fp_map, 3)[0]
        with pytest.raises(EmptyCandidatesError):
            match_target(window, Algorithm.DTW, fp_map, None, MatchParams(window_length=3))

    @pytest.mark.parametrize("algorithm", [Algorithm.PATH, Algorithm.DTW])
    def test_replay_selects_itself(self, algorithm):
        fp_map = self._map()
        windows = enumerate_windows(fp_map, 3, include_reversed=True)
        candidates = CandidateSet(windows)
        params = MatchParams(window_length=3, include_reversed=True)
        for window in windows:
            assert match_target(window, algorithm, fp_map, candidates, params).window == window
