import tempfile
import unittest
from pathlib import Path
import numpy as np
from src.schema import IsolationConfig
from src.isolation_map import IsolationMap, SubarrayPairsTable


class TestIsolationMap(unittest.TestCase):
    def test_adjacent_share(self) -> None:
        isolation_map = IsolationMap.adjacent_share(8)
        self.assertFalse(isolation_map.isolated(3, 4))
        self.assertFalse(isolation_map.isolated(3, 2))
        self.assertFalse(isolation_map.isolated(3, 3))
        self.assertTrue(isolation_map.isolated(3, 5))
        self.assertEqual([0, 1, 5, 6, 7], isolation_map.partners(3))

    def test_adjacent_share_coverage(self) -> None:
        isolation_map = IsolationMap.adjacent_share(8)
        self.assertAlmostEqual(5 / 8, isolation_map.coverage_of(3))
        self.assertAlmostEqual(6 / 8, isolation_map.coverage_of(0))

    def test_symmetry_required(self) -> None:
        matrix = np.zeros((3, 3), dtype=bool)
        matrix[0, 2] = True
        self.assertRaises(ValueError, IsolationMap, matrix)

    def test_irreflexive(self) -> None:
        self.assertRaises(ValueError, IsolationMap, np.eye(3, dtype=bool))

    def test_square(self) -> None:
        self.assertRaises(ValueError, IsolationMap, np.zeros((2, 3), dtype=bool))

    def test_matrix_read_only(self) -> None:
        isolation_map = IsolationMap.adjacent_share(4)
        with self.assertRaises(ValueError):
            isolation_map.matrix[0, 3] = False

    def test_from_pairs(self) -> None:
        isolation_map = IsolationMap.from_pairs(4, [(0, 2), (3, 1)])
        self.assertTrue(isolation_map.isolated(2, 0))
        self.assertTrue(isolation_map.isolated(1, 3))
        self.assertFalse(isolation_map.isolated(0, 1))

    def test_from_pairs_rejects_self_pair(self) -> None:
        self.assertRaises(ValueError, IsolationMap.from_pairs, 4, [(1, 1)])

    def test_from_pairs_rejects_out_of_range(self) -> None:
        self.assertRaises(ValueError, IsolationMap.from_pairs, 4, [(1, 4)])

    def test_target_coverage_reproducible(self) -> None:
        first = IsolationMap.target_coverage(64, 0.32, seed=7)
        second = IsolationMap.target_coverage(64, 0.32, seed=7)
        self.assertEqual(first, second)
        self.assertTrue(np.array_equal(first.matrix, first.matrix.T))
        self.assertLess(abs(first.mean_coverage() - 0.32), 0.05)

    def test_target_coverage_single_subarray(self) -> None:
        self.assertEqual(0.0, IsolationMap.target_coverage(1, 0.5, seed=0).mean_coverage())

    def test_file_round_trip(self) -> None:
        isolation_map = IsolationMap.adjacent_share(6)
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "map.txt"
            isolation_map.to_file(path)
            loaded = IsolationMap.from_file(path)
        self.assertEqual(isolation_map, loaded)

    def test_file_missing_header(self) -> None:
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "map.txt"
            path.write_text("# no header\n0 2\n", encoding="utf-8")
            self.assertRaises(ValueError, IsolationMap.from_file, path)

    def test_from_config_file_size_mismatch(self) -> None:
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "map.txt"
            IsolationMap.adjacent_share(6).to_file(path)
            config = IsolationConfig(strategy="file", path=str(path))
            self.assertRaises(ValueError, IsolationMap.from_config, config, 8)

    def test_from_config_default(self) -> None:
        self.assertEqual(IsolationMap.adjacent_share(8), IsolationMap.from_config(IsolationConfig(), 8))


class TestSubarrayPairsTable(unittest.TestCase):
    def setUp(self) -> None:
        self.isolation_map = IsolationMap.adjacent_share(8)
        self.table = SubarrayPairsTable(self.isolation_map)

    def test_starts_as_copy(self) -> None:
        self.assertTrue(self.table.matches(self.isolation_map))
        self.assertEqual(self.isolation_map.partners(3), self.table.partners(3))

    def test_corrupt_flips_both_directions(self) -> None:
        self.table.corrupt([(3, 4)])
        self.assertTrue(self.table.isolated(3, 4))
        self.assertTrue(self.table.isolated(4, 3))
        self.assertIn(4, self.table.partners(3))
        self.assertFalse(self.table.matches(self.isolation_map))

    def test_corrupt_does_not_touch_chip_map(self) -> None:
        self.table.corrupt([(0, 5)])
        self.assertTrue(self.isolation_map.isolated(0, 5))
        self.assertFalse(self.table.isolated(0, 5))

    def test_corrupt_self_pair(self) -> None:
        self.assertRaises(ValueError, self.table.corrupt, [(2, 2)])


if __name__ == "__main__":
    unittest.main()
