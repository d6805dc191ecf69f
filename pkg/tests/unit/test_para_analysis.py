import io
import math
import numpy as np
import unittest
from src.schema import ParaParams
from src.para_analysis import (
    failed_attempt_prob, window_too_small, n_f_max, log_p_rh, log_p_rh_terms, p_rh, legacy_p_rh, k_factor,
    solve_p_th, legacy_solve_p_th, exact_success_dp, wilson_interval, monte_carlo_p_rh, solve_p_th_exact,
    para_table, write_para_table, UnreachableTargetError, TableSizeError, UndefinedEstimateError
)


TRC = 46250


def ddr4(n_rh: int, slack_multiple: int = 0, in_flight: int = 0) -> ParaParams:
    return ParaParams(N_RH=n_rh, tRC=TRC, N_RefSlack=slack_multiple * TRC, in_flight_activations=in_flight)


class TestSuccessProbability(unittest.TestCase):
    def test_small_window_closed_form(self) -> None:
        self.assertAlmostEqual(0.66796875, p_rh(0.5, ParaParams(N_RH=2, tREFW=4, tRC=1)))

    def test_term_sum_matches_closed_form(self) -> None:
        params = ddr4(128, 2)
        self.assertAlmostEqual(log_p_rh(0.48, params), log_p_rh_terms(0.48, params), places=9)

    def test_window_shorter_than_threshold(self) -> None:
        params = ParaParams(N_RH=10, tREFW=5, tRC=1)
        self.assertTrue(window_too_small(params))
        self.assertEqual(-math.inf, log_p_rh(0.1, params))
        self.assertEqual(0, n_f_max(params))

    def test_n_f_max(self) -> None:
        self.assertEqual(687091, n_f_max(ddr4(9600)))

    def test_failed_attempt(self) -> None:
        self.assertAlmostEqual(0.75 ** 3 * 0.25, failed_attempt_prob(3, 0.5))
        self.assertRaises(ValueError, failed_attempt_prob, 5, 0.5, 5)
        self.assertRaises(ValueError, failed_attempt_prob, 0, 0.5)

    def test_probability_bounds(self) -> None:
        self.assertRaises(ValueError, p_rh, 0.0, ddr4(64))
        self.assertRaises(ValueError, p_rh, 1.5, ddr4(64))

    def test_slack_raises_success_probability(self) -> None:
        self.assertLess(p_rh(0.48, ddr4(128, 0)), p_rh(0.48, ddr4(128, 8)))

    def test_legacy(self) -> None:
        self.assertAlmostEqual(0.75 ** 4, legacy_p_rh(0.5, 4))


class TestKFactor(unittest.TestCase):
    def test_values(self) -> None:
        for p_th, n_rh, expected in ((0.0663, 1024, 1.0331), (0.4730, 128, 1.2204), (0.8341, 64, 1.3212),
                                     (0.001, 50000, 1.0005)):
            with self.subTest(n_rh=n_rh):
                self.assertAlmostEqual(expected, k_factor(p_th, ddr4(n_rh)), delta=1e-3)

    def test_k_relates_both_estimates(self) -> None:
        params = ddr4(256)
        self.assertAlmostEqual(p_rh(0.3, params), k_factor(0.3, params) * legacy_p_rh(0.3, 256), places=12)

    def test_legacy_thresholds_give_reported_k(self) -> None:
        self.assertAlmostEqual(1.0331, k_factor(legacy_solve_p_th(1024), ddr4(1024)), delta=1e-3)
        self.assertAlmostEqual(1.3212, k_factor(legacy_solve_p_th(64), ddr4(64)), delta=1e-3)
        self.assertAlmostEqual(1.2204, k_factor(legacy_solve_p_th(128), ddr4(1024)), delta=1e-3)


class TestProperties(unittest.TestCase):
    def test_success_probability_falls_with_p_th(self) -> None:
        for n_rh in (64, 128, 1024):
            for multiple in (0, 4):
                with self.subTest(n_rh=n_rh, slack=multiple):
                    params = ddr4(n_rh, multiple)
                    values = [log_p_rh(p_th, params) for p_th in np.linspace(0.01, 1.0, 10)]
                    self.assertTrue(all(a > b for a, b in zip(values, values[1:])))

    def test_success_probability_rises_as_threshold_falls(self) -> None:
        values = [log_p_rh(0.3, ddr4(n_rh)) for n_rh in (1024, 512, 256, 128, 64)]
        self.assertTrue(all(a < b for a, b in zip(values, values[1:])))

    def test_legacy_gap_widens(self) -> None:
        achieved = [p_rh(legacy_solve_p_th(n_rh), ddr4(n_rh)) for n_rh in (1024, 512, 256, 128, 64)]
        self.assertTrue(all(value > 1e-15 for value in achieved))
        self.assertTrue(all(a < b for a, b in zip(achieved, achieved[1:])))

    def test_term_sum_agrees_everywhere(self) -> None:
        for n_rh, multiple, p_th in ((64, 0, 0.84), (128, 8, 0.5), (1024, 2, 0.07), (9600, 0, 0.01)):
            with self.subTest(n_rh=n_rh):
                params = ddr4(n_rh, multiple)
                self.assertAlmostEqual(log_p_rh(p_th, params), log_p_rh_terms(p_th, params), delta=1e-12)

    def test_monte_carlo_covers_exact_chain(self) -> None:
        shapes = [(1, 3), (2, 3), (2, 6), (3, 5), (3, 10), (4, 12), (4, 20), (5, 16), (6, 12), (6, 20)]
        covered, points = 0, 0
        for p_th in np.linspace(0.1, 1.0, 10):
            for n_rh, t_slots in shapes:
                exact = exact_success_dp(float(p_th), n_rh, t_slots)
                if exact < 1e-3:
                    continue
                points += 1
                estimate = monte_carlo_p_rh(float(p_th), n_rh, t_slots, trials=200_000, seed=points,
                                            confidence=0.99)
                covered += estimate.covers(exact)
        self.assertEqual(100, points)
        self.assertGreaterEqual(covered, 95)


class TestSolvers(unittest.TestCase):
    def test_closed_form_solver(self) -> None:
        self.assertAlmostEqual(0.0664, solve_p_th(ddr4(1024)).p_th, delta=1e-3)
        self.assertAlmostEqual(0.839, solve_p_th(ddr4(64)).p_th, delta=1e-3)

    def test_slack_grid(self) -> None:
        expected = [0.475, 0.482, 0.489, 0.503]
        actual = [solve_p_th(ddr4(128, multiple)).p_th for multiple in (0, 2, 4, 8)]
        for e, a in zip(expected, actual):
            self.assertAlmostEqual(e, a, delta=2e-3)
        self.assertEqual(sorted(actual), actual)

    def test_in_flight_activations_curve(self) -> None:
        expected = {(1024, 0): 0.068, (64, 0): 0.860, (128, 0): 0.48, (128, 2): 0.49, (128, 4): 0.50, (128, 8): 0.52}
        tolerance = {1024: 0.005, 64: 0.005, 128: 0.01}
        for (n_rh, multiple), p_th in expected.items():
            with self.subTest(n_rh=n_rh, slack=multiple):
                actual = solve_p_th(ddr4(n_rh, multiple, in_flight=2)).p_th
                self.assertAlmostEqual(p_th, actual, delta=tolerance[n_rh])

    def test_in_flight_activations_raise_deadline(self) -> None:
        params = ddr4(128, 4, in_flight=2)
        self.assertEqual(6, params.HC_deadline)
        self.assertEqual(n_f_max(ddr4(128, 6)), n_f_max(params))
        self.assertEqual(solve_p_th(ddr4(128, 6)).p_th, solve_p_th(params).p_th)

    def test_solution_meets_target(self) -> None:
        params = ddr4(512, 2)
        solution = solve_p_th(params)
        self.assertLessEqual(solution.p_rh, params.target_p_RH)
        self.assertGreater(p_rh(solution.p_th - 1e-5, params), params.target_p_RH)
        self.assertEqual(n_f_max(params), solution.n_f_max)

    def test_legacy_solver(self) -> None:
        for n_rh, expected in ((1024, 0.0663), (64, 0.8341), (128, 0.4730)):
            with self.subTest(n_rh=n_rh):
                self.assertAlmostEqual(expected, legacy_solve_p_th(n_rh), delta=5e-4)

    def test_legacy_underestimates(self) -> None:
        self.assertLess(legacy_solve_p_th(128), solve_p_th(ddr4(128)).p_th)

    def test_unreachable_target(self) -> None:
        self.assertRaises(UnreachableTargetError, solve_p_th, ddr4(2))
        self.assertRaises(UnreachableTargetError, legacy_solve_p_th, 1)

    def test_window_too_small_needs_no_para(self) -> None:
        solution = solve_p_th(ParaParams(N_RH=10, tREFW=5, tRC=1))
        self.assertEqual(0.0, solution.p_th)


class TestExactChain(unittest.TestCase):
    def test_small_chain(self) -> None:
        self.assertAlmostEqual(0.703125, exact_success_dp(0.5, 2, 4))

    def test_too_few_slots(self) -> None:
        self.assertEqual(0.0, exact_success_dp(0.5, 5, 4))

    def test_cell_limit(self) -> None:
        self.assertRaises(TableSizeError, exact_success_dp, 0.5, 1000, 1000, cell_limit=10)

    def test_exact_solver(self) -> None:
        target = 1e-6
        p_th = solve_p_th_exact(64, 1351, target)
        self.assertLessEqual(exact_success_dp(p_th, 64, 1351), target)
        self.assertGreater(exact_success_dp(p_th - 1e-4, 64, 1351), target)

    def test_exact_solver_deadline(self) -> None:
        self.assertGreater(solve_p_th_exact(64, 1351, 1e-6, hc_deadline=8), solve_p_th_exact(64, 1351, 1e-6))
        self.assertRaises(ValueError, solve_p_th_exact, 64, 1351, 1e-6, 64)


class TestMonteCarlo(unittest.TestCase):
    def test_estimate_covers_exact_value(self) -> None:
        estimate = monte_carlo_p_rh(0.5, 2, 4, trials=20000, seed=11, confidence=0.999)
        self.assertTrue(estimate.covers(0.703125))
        self.assertEqual(20000, estimate.trials)

    def test_reproducible(self) -> None:
        self.assertEqual(monte_carlo_p_rh(0.3, 4, 20, 500, seed=3), monte_carlo_p_rh(0.3, 4, 20, 500, seed=3))

    def test_no_trials(self) -> None:
        self.assertRaises(UndefinedEstimateError, monte_carlo_p_rh, 0.5, 2, 4, 0, 1)

    def test_wilson_interval_edges(self) -> None:
        low, high = wilson_interval(0, 10)
        self.assertAlmostEqual(0.0, low)
        self.assertGreater(high, 0.0)
        low, high = wilson_interval(10, 10)
        self.assertAlmostEqual(1.0, high)
        self.assertRaises(UndefinedEstimateError, wilson_interval, 0, 0)


class TestParaTable(unittest.TestCase):
    def test_rows(self) -> None:
        rows = para_table([64, 128], [0, 2], tREFW=64_000_000_000, tRC=TRC)
        self.assertEqual(4, len(rows))
        self.assertEqual((128, 2), (rows[3]["N_RH"], rows[3]["slack_multiple"]))
        self.assertEqual(rows[2]["legacy_p_th"], rows[3]["legacy_p_th"])

    def test_csv(self) -> None:
        buffer = io.StringIO()
        write_para_table(para_table([128], [0], tREFW=64_000_000_000, tRC=TRC), buffer)
        lines = buffer.getvalue().splitlines()
        self.assertEqual("# hira-sim para-table v1", lines[0])
        self.assertEqual("N_RH,slack_multiple,p_th,p_rh,k,legacy_p_th,legacy_p_rh", lines[1])
        self.assertTrue(lines[2].startswith("128,0,0.47"))


if __name__ == "__main__":
    unittest.main()
