import io
import tempfile
import unittest
from pathlib import Path
from src.shared_enum_vars import RequestOps
from src.schema import Geometry, TraceConfig, TraceRequest
from src.address_mapping import decode_address
from src.traces import (
    generate_trace, parse_trace, read_trace, write_trace, split_by_source, default_victim, TraceFormatError
)


GEOMETRY = Geometry(channels=2, banks_per_rank=4, subarrays_per_bank=8, rows_per_subarray=4, columns_per_row=16)


class TestGenerators(unittest.TestCase):
    def test_random_is_reproducible(self) -> None:
        config = TraceConfig(kind="random", sources=2, requests_per_source=50, seed=7)
        self.assertEqual(generate_trace(config, GEOMETRY), generate_trace(config, GEOMETRY))
        other = generate_trace(config.copy(update={"seed": 8}), GEOMETRY)
        self.assertNotEqual(generate_trace(config, GEOMETRY), other)

    def test_random_addresses_in_range(self) -> None:
        trace = generate_trace(TraceConfig(kind="random", sources=3, requests_per_source=100), GEOMETRY)
        self.assertEqual(300, len(trace))
        for request in trace:
            decode_address(request.address, GEOMETRY)
            self.assertEqual(0, request.address % GEOMETRY.column_bytes)

    def test_stream_walks_columns_of_one_bank(self) -> None:
        trace = generate_trace(TraceConfig(kind="stream", sources=2, requests_per_source=20), GEOMETRY)
        first = [decode_address(r.address, GEOMETRY) for r in trace if r.source == 0]
        self.assertEqual(list(range(16)) + [0, 1, 2, 3], [d.column for d in first])
        self.assertEqual(1, len({(d.channel, d.rank, d.bank) for d in first}))
        self.assertEqual((first[0].row + 1) % 32, first[16].row)
        second = decode_address(next(r for r in trace if r.source == 1).address, GEOMETRY)
        self.assertEqual(1, second.channel)

    def test_rowhit_bursts_stay_in_row(self) -> None:
        trace = generate_trace(TraceConfig(kind="rowhit", sources=1, requests_per_source=16, burst=8), GEOMETRY)
        decoded = [decode_address(r.address, GEOMETRY) for r in trace]
        for burst in (decoded[:8], decoded[8:]):
            self.assertEqual(1, len({(d.channel, d.rank, d.bank, d.row) for d in burst}))

    def test_hammer_alternates_aggressors(self) -> None:
        config = TraceConfig(kind="hammer", hammer_bank=2, hammer_count=6)
        decoded = [decode_address(r.address, GEOMETRY) for r in generate_trace(config, GEOMETRY)]
        self.assertEqual([1, 3, 1, 3, 1, 3], [d.row for d in decoded])
        self.assertEqual({2}, {d.bank for d in decoded})
        self.assertEqual(2, default_victim(GEOMETRY))

    def test_hammer_needs_both_neighbours(self) -> None:
        self.assertRaises(ValueError, generate_trace, TraceConfig(kind="hammer", hammer_victim=0), GEOMETRY)
        self.assertRaises(ValueError, generate_trace, TraceConfig(kind="hammer", hammer_bank=4), GEOMETRY)

    def test_write_fraction(self) -> None:
        config = TraceConfig(kind="random", sources=1, requests_per_source=200, write_fraction=1.0)
        self.assertEqual({RequestOps.WRITE}, {r.op for r in generate_trace(config, GEOMETRY)})


class TestTraceFile(unittest.TestCase):
    def test_parse(self) -> None:
        lines = ["# hira-sim trace v1", "", "24 R 0x40", "0 W 1f80 3"]
        expected = [TraceRequest(gap=24, op=RequestOps.READ, address=0x40),
                    TraceRequest(gap=0, source=3, op=RequestOps.WRITE, address=0x1F80)]
        actual = parse_trace(lines)
        self.assertEqual(expected, actual)

    def test_malformed_line_number(self) -> None:
        with self.assertRaises(TraceFormatError) as context:
            parse_trace(["24 R 0x40", "24 X 0x40"])
        self.assertEqual(2, context.exception.line)

    def test_address_outside_geometry(self) -> None:
        with self.assertRaises(TraceFormatError) as context:
            parse_trace([f"1 R {GEOMETRY.capacity_bytes:#x}"], GEOMETRY)
        self.assertEqual(1, context.exception.line)

    def test_write_then_read_file(self) -> None:
        trace = generate_trace(TraceConfig(kind="random", sources=2, requests_per_source=5), GEOMETRY)
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "trace.txt"
            write_trace(trace, path)
            self.assertEqual("# hira-sim trace v1", path.read_text(encoding="utf-8").splitlines()[0])
            self.assertEqual(trace, read_trace(path, GEOMETRY))
            self.assertEqual(trace, generate_trace(TraceConfig(kind="file", path=str(path)), GEOMETRY))

    def test_write_line_format(self) -> None:
        buffer = io.StringIO()
        write_trace([TraceRequest(gap=3, source=1, op=RequestOps.WRITE, address=0x80)], buffer)
        self.assertEqual("3 W 0x80 1", buffer.getvalue().splitlines()[1])


class TestSplitBySource(unittest.TestCase):
    def test_order_kept_per_source(self) -> None:
        a, b, c = (TraceRequest(gap=i, source=s, address=0) for i, s in ((0, 1), (1, 0), (2, 1)))
        expected = {0: [b], 1: [a, c]}
        actual = split_by_source([a, b, c])
        self.assertEqual(expected, actual)
        self.assertEqual([0, 1], list(actual))


if __name__ == "__main__":
    unittest.main()
