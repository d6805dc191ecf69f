import io
import unittest
import numpy as np
from src.shared_enum_vars import SchedulerModes
from src.schema import ExperimentConfig, Geometry
from src.simulator import MemorySystem, write_event_log, write_metrics


def small_config(mode: str = "HiRA", channels: int = 1, **sections) -> ExperimentConfig:
    config = ExperimentConfig(
        geometry=Geometry(channels=channels, banks_per_rank=4, subarrays_per_bank=8, rows_per_subarray=4,
                          columns_per_row=16),
        simulation={"scale_refresh_window": True, "compute_weighted_speedup": False},
        trace={"kind": "random", "sources": 2, "requests_per_source": 100, "gap": 8, "seed": 3},
    )
    scheduler = {"mode": mode, **sections.pop("scheduler", {})}
    return config.with_changes(scheduler=scheduler, **sections)


class TestMemorySystem(unittest.TestCase):
    def test_every_mode_serves_all_requests(self) -> None:
        for mode in SchedulerModes:
            with self.subTest(mode=mode.value):
                report = MemorySystem(small_config(mode.value)).run()
                self.assertIs(mode, report.mode)
                self.assertEqual([100, 100], report.requests_served)
                self.assertEqual([0, 0], report.requests_in_flight)
                self.assertEqual(0, report.deadline_violations)
                self.assertEqual(0, report.corruption_events)
                self.assertGreater(report.cycles, 0)
                self.assertTrue(0.0 < report.command_bus_occupancy <= 1.0)

    def test_hira_performs_periodic_refreshes(self) -> None:
        report = MemorySystem(small_config()).run()
        self.assertGreater(report.periodic_refreshes, 0)
        self.assertEqual(report.periodic_refreshes,
                         report.hira_refresh_access + 2 * report.hira_refresh_refresh + report.standalone_refreshes)
        self.assertEqual(0, report.ref_commands)

    def test_no_refresh_mode(self) -> None:
        report = MemorySystem(small_config("NoRefresh")).run()
        self.assertEqual((0, 0), (report.periodic_refreshes, report.ref_commands))

    def test_two_channels(self) -> None:
        system = MemorySystem(small_config(channels=2))
        report = system.run()
        self.assertEqual(2, len(system.controllers))
        self.assertEqual([100, 100], report.requests_served)

    def test_empty_trace(self) -> None:
        report = MemorySystem(small_config(), trace=[]).run()
        self.assertEqual((0, 0), (report.duration_ps, report.cycles))
        self.assertEqual([], report.requests_served)
        self.assertEqual(0.0, report.command_bus_occupancy)

    def test_duration_limit(self) -> None:
        config = small_config(simulation={"duration_ps": 200_000})
        report = MemorySystem(config).run()
        self.assertEqual(200_000, report.duration_ps)
        self.assertLess(sum(report.requests_served), 200)


class TestRowHammer(unittest.TestCase):
    def hammer_config(self, **scheduler) -> ExperimentConfig:
        return small_config("NoRefresh", chip={"n_rh_true": 64},
                            trace={"kind": "hammer", "hammer_count": 400, "gap": 0}, scheduler=scheduler)

    def test_unprotected_hammering_flips_victim(self) -> None:
        report = MemorySystem(self.hammer_config()).run()
        self.assertGreater(report.rowhammer_flips, 0)
        self.assertEqual(0, report.preventive_refreshes)

    def test_para_protects_victim(self) -> None:
        report = MemorySystem(self.hammer_config(para_enabled=True), p_th=1.0).run()
        self.assertEqual(0, report.rowhammer_flips)
        self.assertGreater(report.preventive_refreshes, 0)
        self.assertEqual([400], report.requests_served)


class TestSchedulerSafety(unittest.TestCase):
    RUNS = 1000

    @staticmethod
    def seeded_config(seed: int) -> ExperimentConfig:
        rng = np.random.default_rng(seed)

        def pick(options: list):
            return options[int(rng.integers(len(options)))]

        scheduler = {"mode": "HiRA", "tRefSlack_multiple": pick([0, 2, 4, 8]), "seed": seed, "strict": False,
                     "para_enabled": pick([False, True])}
        if scheduler["para_enabled"]:
            scheduler["p_th"] = pick([0.1, 0.5, 1.0])
        geometry = Geometry(ranks_per_channel=pick([1, 2]), banks_per_rank=4, subarrays_per_bank=8,
                            rows_per_subarray=4, columns_per_row=16)
        # the longest gap stretches a run past one refresh window
        trace = {"kind": pick(["random", "stream", "rowhit", "hammer"]), "sources": pick([1, 2, 3]),
                 "requests_per_source": 30, "gap": pick([0, 8, 64, 1000]), "write_fraction": pick([0.0, 0.3]),
                 "seed": seed}
        return ExperimentConfig(geometry=geometry, scheduler=scheduler, trace=trace,
                                simulation={"scale_refresh_window": True, "compute_weighted_speedup": False})

    def test_seeded_runs_keep_every_guarantee(self) -> None:
        crossed_window = 0
        for seed in range(self.RUNS):
            config = self.seeded_config(seed)
            # any tFAW or other timing violation raises inside the chip
            report = MemorySystem(config).run()
            crossed_window += report.duration_ps > config.timing.tREFW
            with self.subTest(seed=seed):
                self.assertEqual(0, report.deadline_violations)
                self.assertEqual(0, report.retention_expiries)
                self.assertEqual(0, report.corruption_events)
                self.assertEqual(report.requests_generated, report.requests_served)
                self.assertLessEqual(report.refresh_table_peak, 68)
        self.assertGreater(crossed_window, 0)


class TestOutputs(unittest.TestCase):
    def test_event_log(self) -> None:
        system = MemorySystem(small_config(), record_events=True)
        system.run()
        events = system.event_log()
        self.assertEqual(sorted(e[0] for e in events), [e[0] for e in events])
        self.assertTrue({"ACT", "RD"} <= {e[1] for e in events})
        buffer = io.StringIO()
        write_event_log(events, buffer)
        lines = buffer.getvalue().splitlines()
        self.assertEqual("# hira-sim event-log v1", lines[0])
        self.assertEqual("time_ps,event,bank,rowA,rowB,kind", lines[1])
        self.assertEqual(len(events) + 2, len(lines))

    def test_events_not_recorded_by_default(self) -> None:
        system = MemorySystem(small_config())
        system.run()
        self.assertEqual([], system.event_log())

    def test_metrics_csv(self) -> None:
        report = MemorySystem(small_config()).run()
        buffer = io.StringIO()
        write_metrics([report], buffer)
        lines = buffer.getvalue().splitlines()
        self.assertEqual("# hira-sim metrics v1", lines[0])
        self.assertTrue(lines[1].startswith("mode,tRefSlack,duration_ps"))
        self.assertTrue(lines[2].startswith("HiRA,92500,"))
        self.assertIn("100;100", lines[2])


if __name__ == "__main__":
    unittest.main()
