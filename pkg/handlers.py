"""
Command handlers for the positioning CLI.
"""

import argparse
import logging
import math
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from config import (
    BENCH_PARALLEL,
    BENCH_REPETITIONS,
    DEFAULT_CELL_M,
    DEFAULT_SPACING_M,
    DEFAULT_WINDOW_LENGTH,
    FIELD_N_SOURCES,
    HEATMAP_COLUMNS,
    MAX_WORKERS,
    OUTPUT_DIR,
    parse_flag,
)
from errors import EXIT_OK, ConfigError, DegenerateGravityError, InputError, InvalidMapError
from evaluation import (
    as_cases,
    benchmark,
    build_candidates,
    compare_algorithms,
    error_heatmap,
    evaluate_results,
    feature_trace,
    load_results,
    match_workload,
    quartile_table,
    save_results,
)
from features import ExtractionMode, extract_path_features
from models import (
    Algorithm,
    DtwParams,
    FingerprintMap,
    MatchParams,
    SensorSample,
    TargetCase,
    validate_map,
)
from store import (
    build_map,
    enumerate_windows,
    load_map,
    load_map_json,
    load_markers,
    load_path_features,
    load_sensor_log,
    load_targets,
    save_map,
    save_map_json,
    save_markers,
    save_path_features,
    save_sensor_log,
    save_targets,
)
from synthetic import (
    case_id_for,
    generate_reference_floor,
    generate_survey,
    noisy_resurvey,
    parse_warp_ops,
    random_field_model,
    render_sensor_log,
    replay_targets,
    warp_replay,
    warped_targets,
)
from utils import format_float, resolve_output, write_csv, write_json

logger = logging.getLogger(__name__)

Handler = Callable[[argparse.Namespace], int]

ALGORITHM_CHOICES = [algorithm.value for algorithm in Algorithm]


def _positive_int(raw: str) -> int:
    try:
        value = int(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {raw!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _non_negative_int(raw: str) -> int:
    try:
        value = int(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {raw!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _sample_line(sample: SensorSample, index: int) -> int:
    """CSV line a sample came from; unread samples count from the line after the header."""
    return sample.line if sample.line is not None else index + 2


def _int_list(raw: str) -> List[int]:
    try:
        return [int(part) for part in raw.replace(" ", ",").split(",") if part]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers: {raw!r}") from None


def common_parser() -> argparse.ArgumentParser:
    """Flags shared by every command."""
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="KEY=VALUE file whose values become flag defaults")
    parent.add_argument(
        "--out-dir", default=OUTPUT_DIR, help="directory for outputs without an explicit path"
    )
    parent.add_argument("--verbose", action="store_true", help="debug logging")
    parent.add_argument(
        "--workers", type=_positive_int, default=MAX_WORKERS, help="per-target matching workers"
    )
    return parent


def _add_matching_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--window", type=_positive_int, default=DEFAULT_WINDOW_LENGTH)
    parser.add_argument("--reversed", action="store_true", help="also match reversed windows")
    parser.add_argument(
        "--dtw-band", type=_non_negative_int, default=None, help="Sakoe-Chiba half-width"
    )


def _match_params(args: argparse.Namespace) -> MatchParams:
    return MatchParams(
        window_length=args.window,
        include_reversed=args.reversed,
        dtw=DtwParams(band=args.dtw_band),
        workers=args.workers,
    )


def _algorithms(values: Sequence[str]) -> List[Algorithm]:
    selected: List[Algorithm] = []
    for value in values:
        algorithm = Algorithm(value)
        if algorithm not in selected:
            selected.append(algorithm)
    return selected


def load_valid_map(path: str) -> FingerprintMap:
    """Load a map CSV (or its JSON mirror) and reject structural violations."""
    fp_map = load_map_json(path) if Path(path).suffix.lower() == ".json" else load_map(path)
    violations = validate_map(fp_map)
    if violations:
        raise InvalidMapError("; ".join(violation.message for violation in violations))
    return fp_map


class CommandHandlers:
    """Registers sub-commands and runs them; every handler returns an exit code."""

    def __init__(self, subparsers: Any, parent: argparse.ArgumentParser):
        self.subparsers = subparsers
        self.parent = parent
        self.parsers: Dict[str, argparse.ArgumentParser] = {}
        self._register_handlers()

    def _add(self, name: str, handler: Handler, help_text: str) -> argparse.ArgumentParser:
        parser = self.subparsers.add_parser(name, parents=[self.parent], help=help_text)
        parser.set_defaults(handler=handler)
        self.parsers[name] = parser
        return parser

    def _register_handlers(self) -> None:
        extract = self._add("extract", self.handle_extract, "sensor log + markers -> features")
        extract.add_argument("sensor_log")
        extract.add_argument("markers")
        extract.add_argument(
            "--mode", choices=[mode.value for mode in ExtractionMode], default="aligned"
        )
        extract.add_argument("--output")

        build = self._add("build", self.handle_build, "path feature CSVs -> map CSV")
        build.add_argument("features", nargs="+")
        build.add_argument("--path-ids", type=_int_list, default=None)
        build.add_argument("--spacing", type=float, default=DEFAULT_SPACING_M)
        build.add_argument("--output")
        build.add_argument("--json", help="also write the JSON mirror of the map")

        match = self._add("match", self.handle_match, "match targets against a map")
        match.add_argument("map")
        match.add_argument("targets")
        match.add_argument(
            "--algorithm",
            choices=ALGORITHM_CHOICES,
            default=Algorithm.DTW.value,
            help="point matches only the first element of each target window and "
            "is scored against the first coordinate of that window",
        )
        _add_matching_flags(match)
        match.add_argument("--output")

        evaluate = self._add("evaluate", self.handle_evaluate, "score results against truth")
        evaluate.add_argument("results")
        evaluate.add_argument("truth")
        evaluate.add_argument("--map", help="anchor the heatmap grid at this map's bounds")
        evaluate.add_argument("--cell", type=float, default=DEFAULT_CELL_M)
        evaluate.add_argument("--report")
        evaluate.add_argument("--heatmap")

        bench = self._add("bench", self.handle_bench, "time each matcher on a workload")
        bench.add_argument("map")
        bench.add_argument("targets")
        bench.add_argument(
            "--algorithms", nargs="+", choices=ALGORITHM_CHOICES, default=ALGORITHM_CHOICES
        )
        bench.add_argument("--reps", type=_positive_int, default=BENCH_REPETITIONS)
        bench.add_argument(
            "--parallel",
            action=argparse.BooleanOptionalAction,
            default=BENCH_PARALLEL,
            help="run the worker pool while timing (--no-parallel overrides BENCH_PARALLEL)",
        )
        _add_matching_flags(bench)
        bench.add_argument("--output")

        compare = self._add("compare", self.handle_compare, "quartile table of all matchers")
        compare.add_argument("map")
        compare.add_argument("targets")
        compare.add_argument(
            "--algorithms", nargs="+", choices=ALGORITHM_CHOICES, default=ALGORITHM_CHOICES
        )
        _add_matching_flags(compare)
        compare.add_argument("--output")
        compare.add_argument("--json")
        compare.add_argument("--trace-case", help="case id whose feature trace is written")
        compare.add_argument("--trace")

        synth = self._add("synth", self.handle_synth, "seeded synthetic survey and targets")
        synth.add_argument("--paper-shape", action="store_true")
        synth.add_argument("--paths", type=_positive_int, default=1)
        synth.add_argument("--len", dest="length", type=_positive_int, nargs="+", default=[20])
        synth.add_argument("--spacing", type=float, default=DEFAULT_SPACING_M)
        synth.add_argument("--sources", type=_non_negative_int, default=FIELD_N_SOURCES)
        synth.add_argument("--seed", type=int, default=0)
        synth.add_argument("--output")
        synth.add_argument("--json", help="also write the JSON mirror of the map")
        synth.add_argument("--targets", help="write exact replay targets here")
        synth.add_argument("--target-noise", type=float, default=0.0)
        synth.add_argument("--window", type=_positive_int, default=DEFAULT_WINDOW_LENGTH)
        synth.add_argument("--reversed", action="store_true")
        synth.add_argument("--warp", help='explicit ops, e.g. "dup:3,drop:7"')
        synth.add_argument("--warp-source", default=None, help="window as path:start[:direction]")
        synth.add_argument("--warp-random", type=_positive_int, default=None)
        synth.add_argument("--warp-count", type=_positive_int, default=100)
        synth.add_argument("--warp-noise", type=float, default=0.5)
        synth.add_argument("--warped", help="output for warped targets")
        synth.add_argument("--sensor-log", type=int, default=None, metavar="PATH_ID")
        synth.add_argument("--tilt-deg", type=float, default=0.0)

    # ---------- config file ----------

    def apply_config(self, command: str, values: Mapping[str, str]) -> None:
        """Turn RunConfig values into parser defaults so explicit flags still win."""
        parser = self.parsers[command]
        actions: Dict[str, argparse.Action] = {}
        for action in parser._actions:
            if action.dest in ("help", "config") or not action.option_strings:
                continue
            actions[action.dest] = action
            for option in action.option_strings:
                negated = option.startswith("--no-")
                if negated and isinstance(action, argparse.BooleanOptionalAction):
                    continue
                actions[option.lstrip("-").replace("-", "_")] = action

        defaults: Dict[str, Any] = {}
        for key, raw in values.items():
            action = actions.get(key)
            if action is None:
                raise ConfigError(f"unknown config key {key!r} for command {command!r}")
            defaults[action.dest] = self._convert(action, key, raw)
        parser.set_defaults(**defaults)
        logger.debug("Applied %d config value(s) to %s", len(defaults), command)

    @staticmethod
    def _convert(action: argparse.Action, key: str, raw: str) -> Any:
        try:
            if action.nargs == 0:
                return parse_flag(raw)
            convert = action.type or str
            if action.nargs in ("+", "*"):
                value: Any = [convert(part) for part in raw.replace(",", " ").split()]
                checked = value
            else:
                value = convert(raw)
                checked = [value]
        except (ValueError, argparse.ArgumentTypeError) as error:
            raise ConfigError(f"config key {key!r}: {error}") from None
        if action.choices is not None:
            for item in checked:
                if item not in action.choices:
                    raise ConfigError(f"config key {key!r}: {item!r} not in {list(action.choices)}")
        return value

    # ---------- handlers ----------

    def handle_extract(self, args: argparse.Namespace) -> int:
        log = load_sensor_log(args.sensor_log)
        markers = load_markers(args.markers)
        try:
            rows = extract_path_features(log, markers, ExtractionMode(args.mode))
        except DegenerateGravityError as error:
            lines = [_sample_line(log[row], row) for row in error.rows]
            raise DegenerateGravityError(
                lines, f"degenerate gravity at {args.sensor_log} lines {lines}"
            ) from None

        output = resolve_output(args.output, args.out_dir, "path_features.csv")
        save_path_features(rows, output)
        logger.info("Wrote %d feature rows to %s", len(rows), output)
        return EXIT_OK

    def handle_build(self, args: argparse.Namespace) -> int:
        path_ids = args.path_ids if args.path_ids is not None else list(range(len(args.features)))
        if len(path_ids) != len(args.features):
            raise InputError(
                f"{len(path_ids)} path ids given for {len(args.features)} feature files"
            )
        surveyed = [
            (path_id, load_path_features(path)) for path_id, path in zip(path_ids, args.features)
        ]
        fp_map = build_map(surveyed, spacing_m=args.spacing, meta={"generator": "survey"})

        output = resolve_output(args.output, args.out_dir, "map.csv")
        save_map(fp_map, output)
        if args.json:
            save_map_json(fp_map, args.json)
        logger.info("Built map %s: %d paths, %d points", output, len(fp_map.paths), fp_map.n_points)
        return EXIT_OK

    def handle_match(self, args: argparse.Namespace) -> int:
        fp_map = load_valid_map(args.map)
        cases = as_cases(load_targets(args.targets))
        if not cases:
            raise InputError(f"no targets in {args.targets}")
        algorithm = Algorithm(args.algorithm)
        params = _match_params(args)

        candidates = build_candidates(fp_map, algorithm, params)
        results = match_workload(fp_map, cases, algorithm, params, candidates)

        output = resolve_output(args.output, args.out_dir, "results.json")
        save_results(output, cases, results, algorithm, params)
        logger.info("Wrote %d %s results to %s", len(results), algorithm.value, output)
        return EXIT_OK

    def handle_evaluate(self, args: argparse.Namespace) -> int:
        records, params = load_results(args.results)
        truth = load_targets(args.truth)
        fp_map = load_valid_map(args.map) if args.map else None
        report = evaluate_results(records, truth, params, fp_map)
        cells = error_heatmap(report, fp_map, cell_m=args.cell)

        report_path = resolve_output(args.report, args.out_dir, "report.json")
        heatmap_path = resolve_output(args.heatmap, args.out_dir, "heatmap.csv")
        write_json(report_path, report.to_dict())
        write_csv(
            heatmap_path,
            HEATMAP_COLUMNS,
            (
                (format_float(cell.x_m), format_float(cell.y_m), format_float(cell.error_m))
                for cell in cells
            ),
        )
        logger.info(
            "%s: mean error %.3f m over %d case(s); report %s, heatmap %s",
            report.algorithm.value,
            report.mean,
            len(report.per_case),
            report_path,
            heatmap_path,
        )
        return EXIT_OK

    def handle_bench(self, args: argparse.Namespace) -> int:
        fp_map = load_valid_map(args.map)
        targets = load_targets(args.targets)
        timing = benchmark(
            fp_map,
            targets,
            _algorithms(args.algorithms),
            _match_params(args),
            repetitions=args.reps,
            parallel=args.parallel,
        )
        output = resolve_output(args.output, args.out_dir, "timing.json")
        write_json(output, timing.to_dict())
        logger.info("Wrote timing report to %s", output)
        return EXIT_OK

    def handle_compare(self, args: argparse.Namespace) -> int:
        fp_map = load_valid_map(args.map)
        cases = as_cases(load_targets(args.targets))
        algorithms = _algorithms(args.algorithms)
        params = _match_params(args)
        reports = compare_algorithms(fp_map, cases, algorithms, params)

        output = resolve_output(args.output, args.out_dir, "quartiles.csv")
        header = ["border"] + [algorithm.value for algorithm in reports]
        write_csv(
            output,
            header,
            (
                [row[0]] + [format_float(value) for value in row[1:]]
                for row in quartile_table(reports)
            ),
        )
        json_path = resolve_output(args.json, args.out_dir, "compare.json")
        write_json(
            json_path, {algorithm.value: report.to_dict() for algorithm, report in reports.items()}
        )

        if args.trace_case:
            self._write_trace(args, fp_map, cases, algorithms, params)
        logger.info("Wrote quartile table to %s", output)
        return EXIT_OK

    def _write_trace(
        self,
        args: argparse.Namespace,
        fp_map: FingerprintMap,
        cases: Sequence[TargetCase],
        algorithms: Sequence[Algorithm],
        params: MatchParams,
    ) -> None:
        chosen = [case for case in cases if case.case_id == args.trace_case]
        if not chosen:
            raise InputError(f"trace case {args.trace_case!r} not among the targets")
        results = {
            algorithm: match_workload(fp_map, chosen, algorithm, params)[args.trace_case]
            for algorithm in algorithms
        }
        header, rows = feature_trace(chosen[0].window, results)
        trace_path = resolve_output(args.trace, args.out_dir, "trace.csv")
        write_csv(
            trace_path,
            header,
            (
                [int(row[0])] + ["" if math.isnan(v) else format_float(v) for v in row[1:]]
                for row in rows
            ),
        )
        logger.info("Wrote feature trace of %s to %s", args.trace_case, trace_path)

    def handle_synth(self, args: argparse.Namespace) -> int:
        if args.paper_shape:
            fp_map = generate_reference_floor(seed=args.seed)
        else:
            length_range = self._length_range(args.length)
            model = random_field_model(n_sources=args.sources, seed=args.seed)
            fp_map = generate_survey(
                model, args.paths, length_range, spacing_m=args.spacing, seed=args.seed
            )

        output = resolve_output(args.output, args.out_dir, "map.csv")
        save_map(fp_map, output)
        if args.json:
            save_map_json(fp_map, args.json)
        logger.info("Wrote synthetic map %s (%d points)", output, fp_map.n_points)

        if args.targets:
            cases = replay_targets(fp_map, args.window, include_reversed=args.reversed)
            if args.target_noise > 0:
                cases = noisy_resurvey(cases, args.target_noise, seed=args.seed)
            save_targets(cases, args.targets)
            logger.info("Wrote %d replay targets to %s", len(cases), args.targets)

        if args.warp or args.warp_random:
            warped = self._warped_cases(args, fp_map)
            warped_path = resolve_output(args.warped, args.out_dir, "warped_targets.csv")
            save_targets(warped, warped_path)
            logger.info("Wrote %d warped targets to %s", len(warped), warped_path)

        if args.sensor_log is not None:
            self._write_sensor_log(args, fp_map)
        return EXIT_OK

    @staticmethod
    def _length_range(values: Sequence[int]) -> Tuple[int, int]:
        if len(values) == 1:
            return values[0], values[0]
        if len(values) == 2:
            return values[0], values[1]
        raise InputError(f"--len takes LO [HI], got {list(values)}")

    def _warped_cases(self, args: argparse.Namespace, fp_map: FingerprintMap) -> List[TargetCase]:
        if args.warp_random:
            return warped_targets(
                fp_map,
                args.window,
                args.warp_count,
                max_ops=args.warp_random,
                noise_ut=args.warp_noise,
                include_reversed=args.reversed,
                seed=args.seed,
            )

        windows = {
            case_id_for(window): window
            for window in enumerate_windows(fp_map, args.window, include_reversed=True)
        }
        if not windows:
            raise InputError(f"map has no windows of length {args.window}")
        source_id = self._source_id(args.warp_source) if args.warp_source else next(iter(windows))
        if source_id not in windows:
            raise InputError(f"warp source {args.warp_source!r} is not a window of the map")
        warped = warp_replay(
            windows[source_id], parse_warp_ops(args.warp), noise_ut=args.warp_noise, seed=args.seed
        )
        return [TargetCase(case_id=f"warp:{source_id}", window=warped)]

    @staticmethod
    def _source_id(raw: str) -> str:
        parts = raw.split(":")
        if len(parts) == 2:
            parts.append("forward")
        if len(parts) != 3:
            raise InputError(f"warp source must be path:start[:direction], got {raw!r}")
        return ":".join(parts)

    def _write_sensor_log(self, args: argparse.Namespace, fp_map: FingerprintMap) -> None:
        try:
            path = fp_map.path(args.sensor_log)
        except KeyError:
            raise InputError(f"map has no path {args.sensor_log}") from None
        samples, markers = render_sensor_log(path, tilt_deg=args.tilt_deg, seed=args.seed)
        log_path = Path(args.out_dir) / f"sensor_log_{args.sensor_log}.csv"
        markers_path = Path(args.out_dir) / f"markers_{args.sensor_log}.csv"
        save_sensor_log(samples, log_path)
        save_markers(markers, markers_path)
        logger.info("Wrote sensor log %s and markers %s", log_path, markers_path)


def build_parser() -> Tuple[argparse.ArgumentParser, CommandHandlers]:
    parser = argparse.ArgumentParser(
        prog="magfp", description="Magnetic fingerprint indoor positioning"
    )
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True
    handlers = CommandHandlers(subparsers, common_parser())
    return parser, handlers


def parse_arguments(
    argv: Optional[Sequence[str]], config_loader: Callable[[str], Mapping[str, str]]
) -> argparse.Namespace:
    """Parse, then re-parse with the config file's values as defaults when one is given."""
    parser, handlers = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        handlers.apply_config(args.command, config_loader(args.config))
        args = parser.parse_args(argv)
    return args
