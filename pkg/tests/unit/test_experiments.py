import io
import tempfile
import unittest
from pathlib import Path
from src.shared_enum_vars import SweepAxes
from src.schema import ExperimentConfig, Geometry, ParaParams
from src.para_analysis import solve_p_th, solve_p_th_exact
from src.sim_logger import SimLogger
from src.experiments import (
    resolve_p_th, run_experiment, apply_axis, default_variants, run_sweep, write_sweep_csv, run_security_trials,
    SWEEP_HEADER
)


def small_config(**sections) -> ExperimentConfig:
    config = ExperimentConfig(
        geometry=Geometry(banks_per_rank=4, subarrays_per_bank=8, rows_per_subarray=4, columns_per_row=16),
        simulation={"scale_refresh_window": True},
        trace={"kind": "random", "sources": 2, "requests_per_source": 50, "gap": 8, "seed": 5},
    )
    return config.with_changes(**sections) if sections else config


class TestResolvePth(unittest.TestCase):
    def test_para_off(self) -> None:
        self.assertIsNone(resolve_p_th(ExperimentConfig()))

    def test_configured_probability(self) -> None:
        config = ExperimentConfig().with_changes(scheduler={"para_enabled": True, "p_th": 0.25})
        self.assertEqual(0.25, resolve_p_th(config))

    def test_closed_form(self) -> None:
        config = ExperimentConfig().with_changes(scheduler={"para_enabled": True})
        expected = solve_p_th(ParaParams(N_RH=1024, N_RefSlack=2 * 46250)).p_th
        actual = resolve_p_th(config)
        self.assertEqual(expected, actual)

    def test_exact(self) -> None:
        config = small_config(scheduler={"para_enabled": True}, para={"N_RH": 64, "solver": "exact"})
        expected = solve_p_th_exact(64, 31_250_000 // 46250, 1e-15, 2)
        actual = resolve_p_th(config)
        self.assertEqual(expected, actual)

    def test_solver_result_logged(self) -> None:
        with tempfile.TemporaryDirectory() as directory:
            logger = SimLogger(debug=False, log_dir=directory)
            resolve_p_th(ExperimentConfig().with_changes(scheduler={"para_enabled": True}), logger)
            self.assertIn("[SOLVER_RESULT] N_RH=1024", logger.log_path.read_text(encoding="utf-8"))


class TestRunExperiment(unittest.TestCase):
    def test_weighted_speedup(self) -> None:
        report = run_experiment(small_config())
        self.assertEqual([50, 50], report.requests_served)
        self.assertGreater(report.weighted_speedup, 0.0)
        self.assertGreater(report.normalized_weighted_speedup, 0.0)

    def test_ideal_system_normalizes_to_one(self) -> None:
        report = run_experiment(small_config(scheduler={"mode": "NoRefresh"}))
        self.assertAlmostEqual(1.0, report.normalized_weighted_speedup)

    def test_speedup_skipped(self) -> None:
        report = run_experiment(small_config(simulation={"compute_weighted_speedup": False}))
        self.assertEqual(0.0, report.weighted_speedup)

    def test_event_log_written(self) -> None:
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "events.csv"
            run_experiment(small_config(simulation={"compute_weighted_speedup": False}), event_log_path=path)
            lines = path.read_text(encoding="utf-8").splitlines()
        self.assertEqual("# hira-sim event-log v1", lines[0])
        self.assertGreater(len(lines), 2)


class TestSweepAxes(unittest.TestCase):
    def setUp(self) -> None:
        self.config = small_config()

    def test_capacity(self) -> None:
        self.assertEqual(32, apply_axis(self.config, SweepAxes.CAPACITY, 256).geometry.rows_per_subarray)
        self.assertRaises(ValueError, apply_axis, self.config, SweepAxes.CAPACITY, 4)

    def test_n_rh(self) -> None:
        config = apply_axis(self.config, SweepAxes.N_RH, 128)
        self.assertEqual((128, 128, True), (config.para.N_RH, config.chip.n_rh_true, config.scheduler.para_enabled))

    def test_system_shape(self) -> None:
        self.assertEqual(2, apply_axis(self.config, SweepAxes.CHANNELS, 2).geometry.channels)
        self.assertEqual(2, apply_axis(self.config, SweepAxes.RANKS, 2).geometry.ranks_per_channel)

    def test_slack(self) -> None:
        self.assertEqual(4 * 46250, apply_axis(self.config, SweepAxes.SLACK, 4).scheduler.tRefSlack)

    def test_default_variants(self) -> None:
        self.assertEqual(["BaselineREF", "HiRA-2"], list(default_variants(self.config)))


class TestRunSweep(unittest.TestCase):
    def test_failing_point_reported(self) -> None:
        config = small_config(simulation={"compute_weighted_speedup": False},
                              trace={"requests_per_source": 20})
        with tempfile.TemporaryDirectory() as directory:
            logger = SimLogger(debug=False, log_dir=directory)
            rows = run_sweep(SweepAxes.SLACK, [2, 40], config, workers=1, logger=logger)
            self.assertEqual(4, logger.lines_written)

        self.assertEqual([(2, "BaselineREF"), (2, "HiRA-2"), (40, "BaselineREF"), (40, "HiRA-2")],
                         [(row["value"], row["mode"]) for row in rows])
        self.assertEqual(["", "", ""], [row["error"] for row in rows[:3]])
        self.assertTrue(rows[3]["error"].startswith("ValidationError"))
        self.assertEqual(0, rows[1]["deadline_violations"])

    def test_csv(self) -> None:
        rows = [{"axis": "slack", "value": 2, "mode": "HiRA-2", "weighted_speedup": 1.23456789, "error": ""}]
        buffer = io.StringIO()
        write_sweep_csv(rows, buffer)
        lines = buffer.getvalue().splitlines()
        self.assertEqual("# hira-sim sweep v1", lines[0])
        self.assertEqual(",".join(SWEEP_HEADER), lines[1])
        self.assertTrue(lines[2].startswith("slack,2,HiRA-2,1.23457,"))


class TestSecurityTrials(unittest.TestCase):
    def setUp(self) -> None:
        self.config = small_config(chip={"n_rh_true": 64}, trace={"hammer_count": 400, "gap": 0})

    def test_para_always_refreshing_prevents_flips(self) -> None:
        result = run_security_trials(self.config, 2, p_th=1.0)
        self.assertEqual((2, 0, 0), (result.trials, result.flipped_trials, result.total_flips))

    def test_no_preventive_refresh_flips(self) -> None:
        result = run_security_trials(self.config, 2, p_th=0.0)
        self.assertEqual(2, result.flipped_trials)
        self.assertEqual(0.0, result.p_th)

    def test_solver_probability_prevents_flips(self) -> None:
        config = small_config(chip={"n_rh_true": 64}, trace={"hammer_count": 256, "gap": 0},
                              para={"N_RH": 64, "target_p_RH": 1e-5, "in_flight_activations": 2})
        expected = resolve_p_th(config.with_changes(scheduler={"para_enabled": True}))

        result = run_security_trials(config, 1000)
        self.assertEqual(expected, result.p_th)
        self.assertTrue(0.0 < result.p_th < 1.0)
        self.assertEqual((1000, 0, 0), (result.trials, result.flipped_trials, result.total_flips))


class TestPerformanceDirection(unittest.TestCase):
    @classmethod
    def setUpClass(cls) -> None:
        # fixed tREFW: every capacity step doubles the refresh rate, and REF grows with the rows it covers
        base = ExperimentConfig(
            geometry=Geometry(banks_per_rank=4, subarrays_per_bank=8, rows_per_subarray=4, columns_per_row=16),
            timing={"tREFW": 31_250_000},
            chip={"scaled_trfc": True},
            trace={"kind": "random", "sources": 4, "requests_per_source": 1000, "gap": 0, "seed": 11},
        )
        cls.rows = run_sweep(SweepAxes.CAPACITY, [32, 64, 128, 256], base, workers=1)

    def speedups(self, mode: str) -> list[float]:
        return [row["weighted_speedup"] for row in self.rows if row["mode"] == mode]

    def test_every_point_ran(self) -> None:
        self.assertEqual(8, len(self.rows))
        self.assertEqual([""] * 8, [row["error"] for row in self.rows])
        self.assertEqual([0] * 8, [row["deadline_violations"] for row in self.rows])

    def test_hira_beats_baseline(self) -> None:
        for rows, hira, baseline in zip([32, 64, 128, 256], self.speedups("HiRA-2"), self.speedups("BaselineREF")):
            with self.subTest(rows=rows):
                self.assertGreater(hira, baseline)

    def test_gain_grows_with_capacity(self) -> None:
        gains = [hira / baseline for hira, baseline in zip(self.speedups("HiRA-2"), self.speedups("BaselineREF"))]
        self.assertTrue(all(a < b for a, b in zip(gains, gains[1:])), gains)

    def test_para_ordering_at_low_threshold(self) -> None:
        base = small_config(chip={"n_rh_true": 64}, para={"N_RH": 64},
                            trace={"sources": 4, "requests_per_source": 600, "gap": 0, "seed": 13})
        variants = {
            "HiRA-2": {"para_enabled": True, "tRefSlack_multiple": 2},
            "HiRA-0": {"para_enabled": True, "tRefSlack_multiple": 0},
            "PARA": {"para_enabled": True, "tRefSlack_multiple": 0, "hira_parallelism": False},
        }
        speedup = {label: run_experiment(base.with_changes(scheduler=changes)).weighted_speedup
                   for label, changes in variants.items()}
        self.assertGreater(speedup["HiRA-2"], speedup["HiRA-0"])
        self.assertGreaterEqual(speedup["HiRA-0"], speedup["PARA"])


if __name__ == "__main__":
    unittest.main()
