"""
End-to-end tests of the command-line handlers through main().
"""

import json

import pytest

from errors import EXIT_DATA_QUALITY, EXIT_INPUT, EXIT_MATCHING_IMPOSSIBLE, EXIT_OK
from handlers import build_parser
from main import main
from models import FeatureVec, SensorSample
from store import (
    build_map,
    load_map,
    load_path_features,
    load_sensor_log,
    load_targets,
    save_map,
    save_markers,
    save_sensor_log,
    save_targets,
)
from synthetic import replay_targets


def _write_small_map(tmp_path):
    paths = []
    for path_id in range(2):
        surveyed = [
            ((0.3 * idx, 3.0 * path_id), FeatureVec(7.0 * idx + path_id, 4.0 + 2.0 * path_id))
            for idx in range(6)
        ]
        paths.append((path_id, surveyed))
    fp_map = build_map(paths)
    map_path = tmp_path / "map.csv"
    save_map(fp_map, map_path)
    return fp_map, map_path


def _write_log(tmp_path, accelerations):
    samples = [
        SensorSample(timestamp=10 * idx, m=(3.0, 4.0, 12.0 + idx), a=a)
        for idx, a in enumerate(accelerations)
    ]
    markers = [(10 * idx, (0.3 * idx, 0.0)) for idx in range(len(samples))]
    save_sensor_log(samples, tmp_path / "log.csv")
    save_markers(markers, tmp_path / "markers.csv")
    return tmp_path / "log.csv", tmp_path / "markers.csv"


class TestExtract:
    def test_aligned_three_rows(self, tmp_path):
        log, markers = _write_log(tmp_path, [(0.0, 0.0, 9.8)] * 3)
        out = tmp_path / "features.csv"
        assert main(["extract", str(log), str(markers), "--output", str(out)]) == EXIT_OK

        rows = load_path_features(out)
        assert len(rows) == 3
        assert rows[0][1] == FeatureVec(12.0, 5.0)

    def test_modes_write_identical_bytes(self, tmp_path):
        log, markers = _write_log(tmp_path, [(0.0, 0.0, 9.8)] * 3)
        aligned, projected = tmp_path / "a.csv", tmp_path / "p.csv"
        main(["extract", str(log), str(markers), "--output", str(aligned)])
        main(["extract", str(log), str(markers), "--mode", "projected", "--output", str(projected)])
        assert aligned.read_bytes() == projected.read_bytes()

    def test_degenerate_gravity_exit_code(self, tmp_path, capsys):
        log, markers = _write_log(tmp_path, [(0.0, 0.0, 9.8), (0.0, 0.0, 0.0), (0.0, 0.0, 9.8)])
        code = main(
            ["extract", str(log), str(markers), "--mode", "projected", "--out-dir", str(tmp_path)]
        )
        assert code == EXIT_DATA_QUALITY
        # Sample index 1 is on CSV line 3.
        assert "3" in capsys.readouterr().err

    def test_degenerate_gravity_names_file_line_past_blank_lines(self, tmp_path, capsys):
        log, markers = _write_log(tmp_path, [(0.0, 0.0, 9.8), (0.0, 0.0, 0.0), (0.0, 0.0, 9.8)])
        header, *rows = log.read_text(encoding="utf-8").splitlines()
        # Two blank lines push the degenerate sample from line 3 to line 5.
        log.write_text("\n".join([header, rows[0], "", "", *rows[1:]]) + "\n", encoding="utf-8")

        code = main(
            ["extract", str(log), str(markers), "--mode", "projected", "--out-dir", str(tmp_path)]
        )
        assert code == EXIT_DATA_QUALITY
        err = capsys.readouterr().err
        assert "строки: 5" in err
        assert "строки: 3" not in err

    def test_loaded_samples_carry_file_lines(self, tmp_path):
        log, _ = _write_log(tmp_path, [(0.0, 0.0, 9.8)] * 2)
        header, *rows = log.read_text(encoding="utf-8").splitlines()
        log.write_text("\n".join([header, "", *rows]) + "\n", encoding="utf-8")
        assert [sample.line for sample in load_sensor_log(log)] == [3, 4]

    def test_missing_column(self, tmp_path):
        log = tmp_path / "log.csv"
        log.write_text("timestamp_us,mx,my\n0,1,2\n", encoding="utf-8")
        markers = tmp_path / "markers.csv"
        markers.write_text("timestamp_us,x_m,y_m\n0,0,0\n", encoding="utf-8")
        assert main(["extract", str(log), str(markers)]) == EXIT_INPUT

    def test_missing_file(self, tmp_path):
        assert main(["extract", str(tmp_path / "nope.csv"), str(tmp_path / "m.csv")]) == EXIT_INPUT


def test_build_from_feature_files(tmp_path):
    for idx in range(2):
        log, markers = _write_log(tmp_path, [(0.0, 0.0, 9.8)] * 4)
        main(["extract", str(log), str(markers), "--output", str(tmp_path / f"f{idx}.csv")])
    out = tmp_path / "built.csv"
    code = main(
        ["build", str(tmp_path / "f0.csv"), str(tmp_path / "f1.csv"), "--path-ids", "4,9",
         "--output", str(out)]
    )
    assert code == EXIT_OK
    fp_map = load_map(out)
    assert [path.path_id for path in fp_map.paths] == [4, 9]
    assert fp_map.n_points == 8


class TestMatchAndEvaluate:
    def test_path_replay_evaluates_to_zero(self, tmp_path):
        fp_map, map_path = _write_small_map(tmp_path)
        targets = tmp_path / "targets.csv"
        save_targets(replay_targets(fp_map, 3), targets)
        results = tmp_path / "results.json"

        assert main(
            ["match", str(map_path), str(targets), "--algorithm", "path", "--window", "3",
             "--output", str(results)]
        ) == EXIT_OK
        payload = json.loads(results.read_text(encoding="utf-8"))
        assert payload["algorithm"] == "path"
        assert payload["window_length"] == 3
        assert all(entry["score"] == 0.0 for entry in payload["results"])
        assert "window" in payload["results"][0]

        assert main(
            ["evaluate", str(results), str(targets), "--out-dir", str(tmp_path)]
        ) == EXIT_OK
        report = json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))
        assert report["mean"] == 0.0
        assert (tmp_path / "heatmap.csv").read_text(encoding="utf-8").startswith("x_m,y_m,error_m")

    def test_report_carries_workload(self, tmp_path):
        fp_map, map_path = _write_small_map(tmp_path)
        targets = tmp_path / "targets.csv"
        save_targets(replay_targets(fp_map, 3), targets)
        results = tmp_path / "results.json"
        assert main(
            ["match", str(map_path), str(targets), "--algorithm", "path", "--window", "3",
             "--output", str(results)]
        ) == EXIT_OK

        assert main(
            ["evaluate", str(results), str(targets), "--map", str(map_path),
             "--out-dir", str(tmp_path)]
        ) == EXIT_OK
        report = json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))
        assert report["workload"] == {
            "n_points": 12,
            "n_windows": 8,
            "window_length": 3,
            "n_targets": 8,
        }

    def test_point_match_reports_point_id(self, tmp_path):
        fp_map, map_path = _write_small_map(tmp_path)
        point = fp_map.points_by_id[7]
        targets = tmp_path / "targets.csv"
        targets.write_text(
            "case_id,seq,x_m,y_m,mv,mh\n"
            f"p7,0,{point.pos[0]!r},{point.pos[1]!r},{point.feat.mv!r},{point.feat.mh!r}\n",
            encoding="utf-8",
        )
        results = tmp_path / "results.json"
        assert main(
            ["match", str(map_path), str(targets), "--algorithm", "point", "--output", str(results)]
        ) == EXIT_OK
        entry = json.loads(results.read_text(encoding="utf-8"))["results"][0]
        assert entry["point_id"] == 7
        assert entry["score"] == 0.0

    def test_no_windows_is_matching_impossible(self, tmp_path):
        _, map_path = _write_small_map(tmp_path)
        targets = tmp_path / "targets.csv"
        targets.write_text("case_id,seq,x_m,y_m,mv,mh\nt,0,0,0,1,1\n", encoding="utf-8")
        code = main(
            ["match", str(map_path), str(targets), "--algorithm", "dtw", "--window", "10",
             "--out-dir", str(tmp_path)]
        )
        assert code == EXIT_MATCHING_IMPOSSIBLE

    def test_empty_results_file(self, tmp_path):
        results = tmp_path / "results.json"
        results.write_text("", encoding="utf-8")
        truth = tmp_path / "truth.csv"
        truth.write_text("case_id,seq,x_m,y_m,mv,mh\nt,0,0,0,1,1\n", encoding="utf-8")
        code = main(["evaluate", str(results), str(truth), "--out-dir", str(tmp_path)])
        assert code == EXIT_INPUT

    def test_case_mismatch(self, tmp_path, capsys):
        results = tmp_path / "results.json"
        results.write_text(
            json.dumps({"algorithm": "path", "results": [{"case_id": "x", "estimate": [[0, 0]]}]}),
            encoding="utf-8",
        )
        truth = tmp_path / "truth.csv"
        truth.write_text("case_id,seq,x_m,y_m,mv,mh\nt,0,0,0,1,1\n", encoding="utf-8")
        code = main(["evaluate", str(results), str(truth), "--out-dir", str(tmp_path)])
        assert code == EXIT_INPUT
        assert "'x'" in capsys.readouterr().err

    def test_algorithm_help_documents_point_scoring(self):
        _, handlers = build_parser()
        action = next(
            action for action in handlers.parsers["match"]._actions if action.dest == "algorithm"
        )
        assert "first element" in action.help
        assert "first coordinate" in action.help


class TestBenchAndCompare:
    def test_bench_writes_timings(self, tmp_path):
        fp_map, map_path = _write_small_map(tmp_path)
        targets = tmp_path / "targets.csv"
        save_targets(replay_targets(fp_map, 3), targets)
        out = tmp_path / "timing.json"
        assert main(
            ["bench", str(map_path), str(targets), "--window", "3", "--reps", "2",
             "--output", str(out)]
        ) == EXIT_OK
        timing = json.loads(out.read_text(encoding="utf-8"))
        assert set(timing["seconds"]) == {"point", "path", "dtw"}
        assert timing["repetitions"] == 2

    @pytest.mark.parametrize(
        "flags, expected", [([], True), (["--no-parallel"], False), (["--parallel"], True)]
    )
    def test_parallel_switch_overrides_env_default(self, tmp_path, monkeypatch, flags, expected):
        monkeypatch.setattr("handlers.BENCH_PARALLEL", True)
        fp_map, map_path = _write_small_map(tmp_path)
        targets = tmp_path / "targets.csv"
        save_targets(replay_targets(fp_map, 3), targets)
        out = tmp_path / "timing.json"
        argv = ["bench", str(map_path), str(targets), "--window", "3", "--reps", "1"]
        assert main(argv + flags + ["--output", str(out)]) == EXIT_OK
        assert json.loads(out.read_text(encoding="utf-8"))["parallel"] is expected

    def test_parallel_off_from_config(self, tmp_path, monkeypatch):
        monkeypatch.setattr("handlers.BENCH_PARALLEL", True)
        fp_map, map_path = _write_small_map(tmp_path)
        targets = tmp_path / "targets.csv"
        save_targets(replay_targets(fp_map, 3), targets)
        config = tmp_path / "run.env"
        config.write_text("parallel=false\nwindow=3\nreps=1\n", encoding="utf-8")
        out = tmp_path / "timing.json"
        argv = ["bench", str(map_path), str(targets), "--config", str(config), "--output", str(out)]
        assert main(argv) == EXIT_OK
        assert json.loads(out.read_text(encoding="utf-8"))["parallel"] is False

    def test_zero_reps_rejected(self, tmp_path):
        _, map_path = _write_small_map(tmp_path)
        assert main(["bench", str(map_path), "t.csv", "--reps", "0"]) == EXIT_INPUT

    def test_unknown_flag_rejected(self, tmp_path):
        _, map_path = _write_small_map(tmp_path)
        assert main(["bench", str(map_path), "t.csv", "--turbo"]) == EXIT_INPUT

    def test_compare_with_trace(self, tmp_path):
        fp_map, map_path = _write_small_map(tmp_path)
        cases = replay_targets(fp_map, 3)
        targets = tmp_path / "targets.csv"
        save_targets(cases, targets)
        assert main(
            ["compare", str(map_path), str(targets), "--window", "3", "--trace-case",
             cases[0].case_id, "--out-dir", str(tmp_path)]
        ) == EXIT_OK

        table = (tmp_path / "quartiles.csv").read_text(encoding="utf-8").splitlines()
        assert table[0] == "border,point,path,dtw"
        borders = [line.split(",")[0] for line in table[1:]]
        assert borders == ["min", "25%", "50%", "75%", "max", "mean"]
        trace = (tmp_path / "trace.csv").read_text(encoding="utf-8").splitlines()
        assert trace[0].startswith("index,target_mv,target_mh,point_mv")
        assert len(trace) == 4


class TestSynth:
    def test_minimal_map(self, tmp_path):
        out = tmp_path / "map.csv"
        assert main(["synth", "--paths", "1", "--len", "20", "--output", str(out)]) == EXIT_OK
        assert load_map(out).n_points == 20

    def test_seeded_runs_are_byte_identical(self, tmp_path):
        for name in ("a", "b"):
            assert main(
                ["synth", "--paths", "3", "--len", "20", "30", "--seed", "7",
                 "--output", str(tmp_path / f"{name}.csv"),
                 "--targets", str(tmp_path / f"{name}_targets.csv")]
            ) == EXIT_OK
        for suffix in (".csv", "_targets.csv"):
            assert (tmp_path / f"a{suffix}").read_bytes() == (tmp_path / f"b{suffix}").read_bytes()

    def test_explicit_warp(self, tmp_path):
        warped = tmp_path / "warped.csv"
        code = main(
            ["synth", "--paths", "1", "--len", "20", "--out-dir", str(tmp_path),
             "--warp", "dup:3,drop:7", "--warp-noise", "0", "--warped", str(warped)]
        )
        assert code == EXIT_OK
        cases = load_targets(warped)
        assert len(cases) == 1
        assert cases[0].case_id == "warp:0:0:forward"
        assert cases[0].window.length == 20

    def test_sensor_log_export(self, tmp_path):
        code = main(
            ["synth", "--paths", "2", "--len", "20", "--out-dir", str(tmp_path),
             "--sensor-log", "1"]
        )
        assert code == EXIT_OK
        assert (tmp_path / "sensor_log_1.csv").is_file()
        assert (tmp_path / "markers_1.csv").is_file()

    def test_floor_overflow(self, tmp_path):
        code = main(["synth", "--paths", "1", "--len", "10000", "--out-dir", str(tmp_path)])
        assert code == EXIT_INPUT

    def test_more_paths_than_cells(self, tmp_path):
        out = tmp_path / "map.csv"
        assert main(["synth", "--paths", "30", "--len", "2", "--output", str(out)]) == EXIT_OK
        assert len(load_map(out).paths) == 30


class TestConfigFile:
    def test_values_become_defaults(self, tmp_path):
        config = tmp_path / "run.env"
        config.write_text("# run config\npaths=2\nlen=20,22\nseed=5\n", encoding="utf-8")
        out = tmp_path / "map.csv"
        assert main(["synth", "--config", str(config), "--output", str(out)]) == EXIT_OK
        fp_map = load_map(out)
        assert len(fp_map.paths) == 2
        assert fp_map.meta["seed"] == "5"

    def test_explicit_flag_wins(self, tmp_path):
        config = tmp_path / "run.env"
        config.write_text("paths=2\n", encoding="utf-8")
        out = tmp_path / "map.csv"
        main(["synth", "--config", str(config), "--paths", "1", "--output", str(out)])
        assert len(load_map(out).paths) == 1

    def test_unknown_key(self, tmp_path):
        config = tmp_path / "run.env"
        config.write_text("turbo=1\n", encoding="utf-8")
        assert main(["synth", "--config", str(config), "--out-dir", str(tmp_path)]) == EXIT_INPUT

    def test_missing_config_file(self, tmp_path):
        code = main(["synth", "--config", str(tmp_path / "none.env"), "--out-dir", str(tmp_path)])
        assert code == EXIT_INPUT


@pytest.mark.parametrize("argv", [[], ["frobnicate"]])
def test_bad_command_line(argv):
    assert main(argv) == EXIT_INPUT
