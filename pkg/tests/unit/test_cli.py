import argparse
import os
import tempfile
import unittest
from pathlib import Path
from unittest import mock
from src.shared_enum_vars import ParaSolvers, SweepAxes
from src.cli import build_arg_parser, main, _int_list, EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT


SMALL_SYSTEM = [
    "--set", "geometry.banks_per_rank=4",
    "--set", "geometry.subarrays_per_bank=8",
    "--set", "geometry.rows_per_subarray=4",
    "--set", "geometry.columns_per_row=16",
    "--set", "simulation.scale_refresh_window=true",
    "--set", "simulation.compute_weighted_speedup=false",
]


class TestArgParser(unittest.TestCase):
    def setUp(self) -> None:
        self.parser = build_arg_parser()

    def test_sweep(self) -> None:
        args = self.parser.parse_args(["sweep", "--axis", "slack", "--values", "0,2,4", "--workers", "2"])
        self.assertIs(SweepAxes.SLACK, args.axis)
        self.assertEqual([0, 2, 4], args.values)
        self.assertEqual(2, args.workers)

    def test_overrides_collected(self) -> None:
        args = self.parser.parse_args(["simulate", "--set", "scheduler.mode=NoRefresh", "--set", "trace.seed=3"])
        self.assertEqual(["scheduler.mode=NoRefresh", "trace.seed=3"], args.overrides)
        self.assertIsNone(args.config)

    def test_para_solve(self) -> None:
        args = self.parser.parse_args(["para-solve", "--n-rh", "64,128", "--solver", "exact"])
        self.assertEqual([64, 128], args.n_rh)
        self.assertIs(ParaSolvers.EXACT, args.solver)

    def test_command_required(self) -> None:
        with mock.patch("sys.stderr"):
            self.assertRaises(SystemExit, self.parser.parse_args, [])

    def test_unknown_axis(self) -> None:
        with mock.patch("sys.stderr"):
            self.assertRaises(SystemExit, self.parser.parse_args, ["sweep", "--axis", "banks", "--values", "1"])

    def test_int_list(self) -> None:
        self.assertEqual([16, 3], _int_list("0x10,3"))
        self.assertRaises(argparse.ArgumentTypeError, _int_list, "1,two")


class TestMain(unittest.TestCase):
    def setUp(self) -> None:
        self.directory = tempfile.TemporaryDirectory()
        self.path = Path(self.directory.name)
        environment = mock.patch.dict(os.environ, {"HIRA_SIM_LOG_DIR": str(self.path / "log"),
                                                   "HIRA_SIM_DEBUG": "0"})
        environment.start()
        self.addCleanup(environment.stop)
        stderr = mock.patch("sys.stderr")
        stderr.start()
        self.addCleanup(stderr.stop)

    def tearDown(self) -> None:
        self.directory.cleanup()

    def test_para_solve(self) -> None:
        output = self.path / "para.csv"
        self.assertEqual(EXIT_OK, main(["para-solve", "--n-rh", "1024", "--slack", "0", "-o", str(output)]))
        lines = output.read_text(encoding="utf-8").splitlines()
        self.assertEqual("# hira-sim para-table v1", lines[0])
        self.assertTrue(lines[2].startswith("1024,0,0.066"))

    def test_exact_solver_output(self) -> None:
        output = self.path / "exact.csv"
        argv = ["para-solve", "--n-rh", "64", "--slack", "2", "--solver", "exact", "-o", str(output)] + SMALL_SYSTEM
        self.assertEqual(EXIT_OK, main(argv))
        lines = output.read_text(encoding="utf-8").splitlines()
        self.assertEqual(["# hira-sim para-exact v1", "N_RH,slack_multiple,p_th"], lines[:2])
        self.assertTrue(lines[2].startswith("64,2,"))

    def test_unreachable_target(self) -> None:
        self.assertEqual(EXIT_CONFIG, main(["para-solve", "--n-rh", "2", "-o", str(self.path / "para.csv")]))

    def test_invalid_config_value(self) -> None:
        self.assertEqual(EXIT_CONFIG, main(["simulate", "--set", "scheduler.foo=1"]))

    def test_missing_config_file(self) -> None:
        self.assertEqual(EXIT_CONFIG, main(["simulate", "-c", str(self.path / "missing.toml")]))

    def test_simulate(self) -> None:
        metrics = self.path / "metrics.csv"
        events = self.path / "events.csv"
        argv = ["simulate", "--metrics", str(metrics), "--event-log", str(events),
                "--set", "trace.requests_per_source=30"] + SMALL_SYSTEM
        self.assertEqual(EXIT_OK, main(argv))
        self.assertEqual("# hira-sim metrics v1", metrics.read_text(encoding="utf-8").splitlines()[0])
        self.assertEqual("# hira-sim event-log v1", events.read_text(encoding="utf-8").splitlines()[0])
        log_files = list((self.path / "log").iterdir())
        self.assertEqual(1, len(log_files))
        self.assertIn("[FINISHED]", log_files[0].read_text(encoding="utf-8"))

    def test_corrupted_pairs_table_exits_with_invariant_code(self) -> None:
        argv = ["simulate", "--metrics", str(self.path / "metrics.csv"), "--set", "trace.kind='hammer'",
                "--set", "trace.hammer_count=20", "--set", "scheduler.spt_faults=[[0, 1]]"] + SMALL_SYSTEM
        self.assertEqual(EXIT_INVARIANT, main(argv))

    def test_threshold(self) -> None:
        output = self.path / "threshold.csv"
        argv = ["threshold", "--victims", "5", "-o", str(output), "--set", "chip.n_rh_true=16"] + SMALL_SYSTEM
        self.assertEqual(EXIT_OK, main(argv))
        self.assertEqual("5,16,32,2", output.read_text(encoding="utf-8").splitlines()[2])

    def test_coverage(self) -> None:
        output = self.path / "coverage.csv"
        argv = ["coverage", "--block", "2", "-o", str(output)] + SMALL_SYSTEM
        self.assertEqual(EXIT_OK, main(argv))
        lines = output.read_text(encoding="utf-8").splitlines()
        self.assertEqual(["rowA,coverage", "0,0.666667"], lines[1:3])


if __name__ == "__main__":
    unittest.main()
