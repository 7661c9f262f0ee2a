"""
Positioning error, quartile statistics, error heatmap and timing benchmark.
"""

import json
import logging
import math
import time
from dataclasses import dataclass, replace
from functools import partial
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from errors import CaseMismatchError, InputError, LengthMismatchError, ParseError
from managers import run_matches
from matching import CandidateSet, match_target
from models import (
    Algorithm,
    CaseError,
    ErrorReport,
    FingerprintMap,
    MatchParams,
    MatchResult,
    Quartiles,
    TargetCase,
    TimingReport,
    Vec2,
    Window,
    WorkloadDescriptor,
)
from store import count_windows, enumerate_windows
from utils import PathLike, format_duration, write_json

logger = logging.getLogger(__name__)

_CLOCK_RESOLUTION = time.get_clock_info("perf_counter").resolution

Targets = Sequence[Union[TargetCase, Window]]


@dataclass(frozen=True)
class HeatmapCell:
    """Mean error of the cases whose true first coordinate falls in one square cell."""

    x_m: float
    y_m: float
    error_m: float


@dataclass(frozen=True)
class ResultRecord:
    """A match outcome as read back from a results file."""

    case_id: str
    algorithm: Algorithm
    coords: Tuple[Vec2, ...]


def point_error(tar: Vec2, est: Vec2) -> float:
    """Euclidean distance between true and estimated positions, meters."""
    return math.hypot(tar[0] - est[0], tar[1] - est[1])


def path_error(tar: Sequence[Vec2], est: Sequence[Vec2]) -> float:
    """Mean index-wise distance between a true and an estimated path."""
    if len(tar) != len(est):
        raise LengthMismatchError(f"true path has {len(tar)} points, estimate has {len(est)}")
    if not tar:
        raise LengthMismatchError("paths must have at least one point")
    diffs = np.asarray(tar, dtype=float) - np.asarray(est, dtype=float)
    return float(np.mean(np.sqrt(np.sum(diffs * diffs, axis=1))))


def summarize(errors: Sequence[float]) -> Tuple[Quartiles, float]:
    """Quartiles (linear interpolation between order statistics) and mean."""
    if not errors:
        raise InputError("no errors to summarize")
    values = np.asarray(errors, dtype=float)
    borders = np.percentile(values, [0, 25, 50, 75, 100])
    q_min, q25, median, q75, q_max = (float(value) for value in borders)
    # Rounding in the sum can push the mean a hair outside [min, max].
    mean = min(max(float(np.mean(values)), q_min), q_max)
    return Quartiles(min=q_min, q25=q25, median=median, q75=q75, max=q_max), mean


def case_error(algorithm: Algorithm, truth: Sequence[Vec2], estimate: Sequence[Vec2]) -> float:
    """Point matching compares first coordinates; path/DTW use the mean over the path."""
    if algorithm == Algorithm.POINT:
        if not truth or not estimate:
            raise LengthMismatchError("point error needs one true and one estimated coordinate")
        return point_error(truth[0], estimate[0])
    return path_error(truth, estimate)


def as_cases(targets: Targets) -> List[TargetCase]:
    """Tag bare windows with their index as case id; reject duplicate ids."""
    cases = [
        target if isinstance(target, TargetCase) else TargetCase(case_id=str(idx), window=target)
        for idx, target in enumerate(targets)
    ]
    seen = set()
    for case in cases:
        if case.case_id in seen:
            raise InputError(f"duplicate case_id {case.case_id!r}")
        seen.add(case.case_id)
    return cases


def build_candidates(
    fp_map: FingerprintMap, algorithm: Algorithm, params: MatchParams
) -> Optional[CandidateSet]:
    if algorithm == Algorithm.POINT:
        return None
    windows = enumerate_windows(fp_map, params.window_length, params.include_reversed)
    logger.info(
        "Enumerated %d candidate windows (M=%d, reversed=%s)",
        len(windows),
        params.window_length,
        params.include_reversed,
    )
    return CandidateSet(windows)


def describe_workload(
    fp_map: FingerprintMap,
    candidates: Optional[CandidateSet],
    params: MatchParams,
    n_targets: int,
) -> WorkloadDescriptor:
    return WorkloadDescriptor(
        n_points=fp_map.n_points,
        n_windows=len(candidates) if candidates is not None else 0,
        window_length=params.window_length,
        n_targets=n_targets,
    )


def match_workload(
    fp_map: FingerprintMap,
    cases: Sequence[TargetCase],
    algorithm: Algorithm,
    params: MatchParams,
    candidates: Optional[CandidateSet] = None,
) -> Dict[str, MatchResult]:
    """Run one matcher over every case; results keyed by case id."""
    if candidates is None:
        candidates = build_candidates(fp_map, algorithm, params)
    matcher = partial(
        match_target,
        algorithm=algorithm,
        fp_map=fp_map,
        candidates=candidates,
        params=params,
    )
    return run_matches(matcher, cases, max_workers=params.workers)


def _report(
    algorithm: Algorithm,
    per_case: Sequence[CaseError],
    workload: Optional[WorkloadDescriptor],
    params: Mapping[str, Any],
) -> ErrorReport:
    quartiles, mean = summarize([case.error_m for case in per_case])
    return ErrorReport(
        algorithm=algorithm,
        per_case=tuple(per_case),
        quartiles=quartiles,
        mean=mean,
        workload=workload,
        params=dict(params),
    )


def evaluate_workload(
    fp_map: FingerprintMap,
    targets: Targets,
    algorithm: Algorithm,
    params: Optional[MatchParams] = None,
) -> ErrorReport:
    """Match every target and aggregate its positioning error."""
    params = params or MatchParams()
    cases = as_cases(targets)
    if not cases:
        raise InputError("no targets to evaluate")

    candidates = build_candidates(fp_map, algorithm, params)
    started = time.perf_counter()
    results = match_workload(fp_map, cases, algorithm, params, candidates)
    logger.info(
        "%s matching of %d targets took %s",
        algorithm.value,
        len(cases),
        format_duration(time.perf_counter() - started),
    )

    per_case = [
        CaseError(
            case_id=case.case_id,
            error_m=case_error(algorithm, case.window.coords, results[case.case_id].coords),
            true_xy=case.window.coords[0],
        )
        for case in cases
    ]
    workload = describe_workload(fp_map, candidates, params, len(cases))
    return _report(algorithm, per_case, workload, params.echo())


def evaluate_results(
    results: Sequence[ResultRecord],
    truth: Sequence[TargetCase],
    params: Optional[Mapping[str, Any]] = None,
    fp_map: Optional[FingerprintMap] = None,
) -> ErrorReport:
    """
    Score already computed results against the truth targets.

    Case ids must line up one to one and in the same order. The workload
    descriptor takes `window_length` and `include_reversed` from the echoed
    match params; point and window counts are filled in only when the map
    is given.
    """
    if not results:
        raise InputError("results are empty")
    algorithms = {record.algorithm for record in results}
    if len(algorithms) != 1:
        raise InputError(f"results mix algorithms: {sorted(a.value for a in algorithms)}")

    for idx, record in enumerate(results):
        if idx >= len(truth):
            raise CaseMismatchError(record.case_id, f"case {record.case_id!r} has no truth entry")
        if truth[idx].case_id != record.case_id:
            raise CaseMismatchError(
                record.case_id,
                f"result case {record.case_id!r} does not match truth case {truth[idx].case_id!r}",
            )
    if len(truth) > len(results):
        missing = truth[len(results)].case_id
        raise CaseMismatchError(missing, f"truth case {missing!r} has no result")

    algorithm = algorithms.pop()
    per_case = [
        CaseError(
            case_id=record.case_id,
            error_m=case_error(algorithm, case.window.coords, record.coords),
            true_xy=case.window.coords[0],
        )
        for record, case in zip(results, truth)
    ]
    echoed = dict(params or {})
    window_length = echoed.get("window_length") or max(case.window.length for case in truth)
    n_windows = 0
    if fp_map is not None and algorithm != Algorithm.POINT:
        n_windows = count_windows(
            fp_map, int(window_length), bool(echoed.get("include_reversed", False))
        )
    workload = WorkloadDescriptor(
        n_points=fp_map.n_points if fp_map is not None else 0,
        n_windows=n_windows,
        window_length=int(window_length),
        n_targets=len(truth),
    )
    return _report(algorithm, per_case, workload, echoed)


def error_heatmap(
    report: ErrorReport, fp_map: Optional[FingerprintMap] = None, cell_m: float = 1.0
) -> List[HeatmapCell]:
    """
    Bin per-case errors by true first coordinate into square cells.

    The grid is anchored at the map's lower-left bound (the origin when no
    map is given); each emitted row carries the cell centre and its mean
    error. Rows are sorted by (x_m, y_m) and empty cells are omitted.
    """
    if not cell_m > 0:
        raise InputError(f"cell size must be > 0, got {cell_m}")
    if not report.per_case:
        return []

    origin_x, origin_y = 0.0, 0.0
    if fp_map is not None and fp_map.n_points:
        origin_x, origin_y = fp_map.bounds()[:2]

    frame = pd.DataFrame(
        {
            "x": [case.true_xy[0] for case in report.per_case],
            "y": [case.true_xy[1] for case in report.per_case],
            "error_m": [case.error_m for case in report.per_case],
        }
    )
    frame["ix"] = np.floor((frame["x"] - origin_x) / cell_m).astype(np.int64)
    frame["iy"] = np.floor((frame["y"] - origin_y) / cell_m).astype(np.int64)
    grouped = frame.groupby(["ix", "iy"], sort=True)["error_m"].mean().reset_index()

    cells = [
        HeatmapCell(
            x_m=origin_x + (int(row.ix) + 0.5) * cell_m,
            y_m=origin_y + (int(row.iy) + 0.5) * cell_m,
            error_m=float(row.error_m),
        )
        for row in grouped.itertuples(index=False)
    ]
    cells.sort(key=lambda cell: (cell.x_m, cell.y_m))
    return cells


def benchmark(
    fp_map: FingerprintMap,
    targets: Targets,
    algorithms: Sequence[Algorithm],
    params: Optional[MatchParams] = None,
    repetitions: int = 3,
    parallel: bool = False,
) -> TimingReport:
    """
    Median wall-clock time of one full workload pass per algorithm.

    Candidate enumeration is outside the timed region. Runs single-threaded
    unless `parallel` is set, in which case `params.workers` are used.
    """
    if repetitions < 1:
        raise InputError(f"repetitions must be >= 1, got {repetitions}")
    if not algorithms:
        raise InputError("no algorithms to benchmark")
    params = params or MatchParams()
    run_params = params if parallel else replace(params, workers=1)
    cases = as_cases(targets)
    if not cases:
        raise InputError("no targets to benchmark")

    seconds: Dict[str, float] = {}
    n_windows = 0
    for algorithm in algorithms:
        candidates = build_candidates(fp_map, algorithm, run_params)
        if candidates is not None:
            n_windows = len(candidates)
        timings = []
        for _ in range(repetitions):
            started = time.perf_counter()
            match_workload(fp_map, cases, algorithm, run_params, candidates)
            timings.append(max(time.perf_counter() - started, _CLOCK_RESOLUTION))
        seconds[algorithm.value] = float(np.median(timings))
        logger.info(
            "Benchmark %s: median %s over %d run(s)",
            algorithm.value,
            format_duration(seconds[algorithm.value]),
            repetitions,
        )

    workload = WorkloadDescriptor(
        n_points=fp_map.n_points,
        n_windows=n_windows,
        window_length=params.window_length,
        n_targets=len(cases),
    )
    return TimingReport(
        seconds=seconds, workload=workload, repetitions=repetitions, parallel=parallel
    )


def compare_algorithms(
    fp_map: FingerprintMap,
    targets: Targets,
    algorithms: Sequence[Algorithm] = (Algorithm.POINT, Algorithm.PATH, Algorithm.DTW),
    params: Optional[MatchParams] = None,
) -> Dict[Algorithm, ErrorReport]:
    """Evaluate several algorithms on the same workload."""
    return {
        algorithm: evaluate_workload(fp_map, targets, algorithm, params) for algorithm in algorithms
    }


def quartile_table(reports: Mapping[Algorithm, ErrorReport]) -> List[List[Any]]:
    """Rows `border, <alg>...` with min/25%/50%/75%/max and mean, one column per algorithm."""
    borders = (
        ("min", "min"),
        ("25%", "q25"),
        ("50%", "median"),
        ("75%", "q75"),
        ("max", "max"),
    )
    rows: List[List[Any]] = []
    for label, attr in borders:
        rows.append([label] + [getattr(report.quartiles, attr) for report in reports.values()])
    rows.append(["mean"] + [report.mean for report in reports.values()])
    return rows


def recovery_rate(
    results: Mapping[str, MatchResult], sources: Mapping[str, Tuple[int, int, int]]
) -> float:
    """Share of cases whose selected window is the known source window (by canonical key)."""
    if not sources:
        raise InputError("no source windows given")
    hits = 0
    for case_id, source_key in sources.items():
        result = results.get(case_id)
        if result is not None and result.window is not None and result.window.key == source_key:
            hits += 1
    return hits / len(sources)


def feature_trace(
    target: Window, results: Mapping[Algorithm, MatchResult]
) -> Tuple[List[str], List[List[float]]]:
    """
    Index-wise target features next to each algorithm's estimate.

    Returns `(header, rows)`; estimates shorter than the target leave
    trailing cells empty (NaN).
    """
    header = ["index", "target_mv", "target_mh"]
    for algorithm in results:
        header += [f"{algorithm.value}_mv", f"{algorithm.value}_mh"]

    rows: List[List[float]] = []
    for idx, feat in enumerate(target.feats):
        row: List[float] = [idx, feat.mv, feat.mh]
        for result in results.values():
            if result.window is not None and idx < result.window.length:
                est = result.window.feats[idx]
                row += [est.mv, est.mh]
            elif result.point is not None and idx == 0:
                row += [result.point.feat.mv, result.point.feat.mh]
            else:
                row += [math.nan, math.nan]
        rows.append(row)
    return header, rows


def results_payload(
    cases: Sequence[TargetCase],
    results: Mapping[str, MatchResult],
    algorithm: Algorithm,
    params: MatchParams,
) -> Dict[str, Any]:
    """Results JSON body: run parameters plus one entry per case, in case order."""
    entries = []
    for case in cases:
        result = results[case.case_id]
        entry: Dict[str, Any] = {"case_id": case.case_id}
        entry.update(result.identity())
        entry["score"] = result.score
        entry["estimate"] = [[x, y] for x, y in result.coords]
        entries.append(entry)
    return {
        "algorithm": algorithm.value,
        "window_length": params.window_length,
        "include_reversed": params.include_reversed,
        "dtw_band": params.dtw.band,
        "results": entries,
    }


def save_results(
    path: PathLike,
    cases: Sequence[TargetCase],
    results: Mapping[str, MatchResult],
    algorithm: Algorithm,
    params: MatchParams,
) -> None:
    write_json(path, results_payload(cases, results, algorithm, params))


def load_results(path: PathLike) -> Tuple[List[ResultRecord], Dict[str, Any]]:
    """Read a results JSON back as records plus the echoed run parameters."""
    source = str(path)
    with open(path, "r", encoding="utf-8") as file:
        text = file.read()
    if not text.strip():
        raise ParseError(1, "empty results file", source)
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as error:
        raise ParseError(error.lineno, error.msg, source) from None

    try:
        algorithm = Algorithm(payload["algorithm"])
        records = [
            ResultRecord(
                case_id=str(entry["case_id"]),
                algorithm=algorithm,
                coords=tuple((float(x), float(y)) for x, y in entry["estimate"]),
            )
            for entry in payload["results"]
        ]
    except (KeyError, TypeError, ValueError) as error:
        raise InputError(f"malformed results file {source}: {error!r}") from None

    params = {key: payload.get(key) for key in ("window_length", "include_reversed", "dtw_band")}
    return records, params
