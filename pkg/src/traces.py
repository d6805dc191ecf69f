import re
from pathlib import Path
from typing import Iterable, TextIO
import numpy as np
from src.shared_enum_vars import RequestOps, TraceKinds
from src.schema import Geometry, TraceConfig, TraceRequest
from src.address_mapping import encode_address, decode_address, AddressRangeError


TRACE_HEADER = "# hira-sim trace v1"
LINE_PATTERN = re.compile(r"^(\d+)\s+([RW])\s+(0[xX][0-9a-fA-F]+|[0-9a-fA-F]+)(?:\s+(\d+))?$")


class TraceFormatError(Exception):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


def default_victim(geometry: Geometry) -> int:
    # middle of the first subarray, so both aggressors share its sense amplifiers
    return geometry.rows_per_subarray // 2


def _bank_coordinates(geometry: Geometry, index: int) -> dict:
    """Spread index over every bank of the system, channel varying fastest."""
    channel = index % geometry.channels
    rank, bank = divmod((index // geometry.channels) % geometry.banks_per_channel, geometry.banks_per_rank)
    return {"channel": channel, "rank": rank, "bank": bank}


def _ops(rng: np.random.Generator, count: int, write_fraction: float) -> list[RequestOps]:
    if write_fraction <= 0:
        return [RequestOps.READ] * count
    writes = rng.random(count) < write_fraction
    return [RequestOps.WRITE if w else RequestOps.READ for w in writes]


def _stream(config: TraceConfig, geometry: Geometry, rng: np.random.Generator) -> list[TraceRequest]:
    requests = []
    columns = geometry.columns_per_row
    for source in range(config.sources):
        coordinates = _bank_coordinates(geometry, source)
        first_row = int(rng.integers(geometry.rows_per_bank))
        ops = _ops(rng, config.requests_per_source, config.write_fraction)
        for i in range(config.requests_per_source):
            row = (first_row + i // columns) % geometry.rows_per_bank
            address = encode_address(geometry, row=row, column=i % columns, **coordinates)
            requests.append(TraceRequest(gap=config.gap, source=source, op=ops[i], address=address))
    return requests


def _random(config: TraceConfig, geometry: Geometry, rng: np.random.Generator) -> list[TraceRequest]:
    requests = []
    lines = geometry.capacity_bytes // geometry.column_bytes
    for source in range(config.sources):
        ops = _ops(rng, config.requests_per_source, config.write_fraction)
        lines_drawn = rng.integers(lines, size=config.requests_per_source)
        for op, line in zip(ops, lines_drawn):
            requests.append(TraceRequest(gap=config.gap, source=source, op=op,
                                         address=int(line) * geometry.column_bytes))
    return requests


def _rowhit(config: TraceConfig, geometry: Geometry, rng: np.random.Generator) -> list[TraceRequest]:
    requests = []
    for source in range(config.sources):
        ops = _ops(rng, config.requests_per_source, config.write_fraction)
        coordinates = row = column = None
        for i in range(config.requests_per_source):
            if i % config.burst == 0:
                coordinates = _bank_coordinates(geometry, int(rng.integers(geometry.total_banks)))
                row = int(rng.integers(geometry.rows_per_bank))
                column = int(rng.integers(geometry.columns_per_row))
            address = encode_address(geometry, row=row, column=(column + i % config.burst) % geometry.columns_per_row,
                                     **coordinates)
            requests.append(TraceRequest(gap=config.gap, source=source, op=ops[i], address=address))
    return requests


def _hammer(config: TraceConfig, geometry: Geometry) -> list[TraceRequest]:
    victim = default_victim(geometry) if config.hammer_victim is None else config.hammer_victim
    aggressors = [victim - 1, victim + 1]
    if aggressors[0] < 0 or aggressors[1] >= geometry.rows_per_bank:
        raise ValueError(f"victim row {victim} has no neighbour on both sides.")
    if config.hammer_bank >= geometry.banks_per_channel:
        raise ValueError(f"hammer bank {config.hammer_bank} is outside the channel.")

    rank, bank = divmod(config.hammer_bank, geometry.banks_per_rank)
    addresses = [encode_address(geometry, rank=rank, bank=bank, row=row) for row in aggressors]
    count = config.requests_per_source if config.hammer_count is None else config.hammer_count
    # alternating rows keeps every request a row conflict, so each one costs an ACT
    return [TraceRequest(gap=config.gap, source=0, op=RequestOps.READ, address=addresses[i % 2])
            for i in range(count)]


def generate_trace(config: TraceConfig, geometry: Geometry) -> list[TraceRequest]:
    """
    Synthetic workload of the configured kind, reproducible from config.seed. Requests of every source are listed
    source by source; each source replays its own requests in order.
        stream  - consecutive columns of consecutive rows, one bank per source
        random  - uniform column-aligned addresses over the whole capacity
        rowhit  - bursts of config.burst columns inside a random row
        hammer  - double-sided hammering of hammer_victim in hammer_bank from a single source
    """
    rng = np.random.default_rng(config.seed)
    match config.kind:
        case TraceKinds.STREAM:
            return _stream(config, geometry, rng)
        case TraceKinds.RANDOM:
            return _random(config, geometry, rng)
        case TraceKinds.ROWHIT:
            return _rowhit(config, geometry, rng)
        case TraceKinds.HAMMER:
            return _hammer(config, geometry)
        case TraceKinds.FILE:
            return read_trace(config.path, geometry)
        case _:
            raise ValueError(f"Unrecognised trace kind {config.kind}.")


def parse_trace(lines: Iterable[str], geometry: Geometry | None = None) -> list[TraceRequest]:
    """
    One request per line: "<gap> <R|W> <hex address> [source]". Blank lines and lines starting with '#' are skipped.

    :raises TraceFormatError: with the number of the offending line
    """
    requests = []
    for number, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        match = LINE_PATTERN.match(line)
        if match is None:
            raise TraceFormatError(f"cannot parse '{line}'.", number)

        gap, op, address, source = match.groups()
        address = int(address, 16)
        if geometry is not None:
            try:
                decode_address(address, geometry)
            except AddressRangeError as e:
                raise TraceFormatError(str(e), number) from e
        requests.append(TraceRequest(gap=int(gap), op=RequestOps(op), address=address,
                                     source=int(source) if source is not None else 0))
    return requests


def read_trace(path: str | Path, geometry: Geometry | None = None) -> list[TraceRequest]:
    with open(path, encoding="utf-8") as file:
        return parse_trace(file, geometry)


def write_trace(requests: Iterable[TraceRequest], target: str | Path | TextIO) -> None:
    if isinstance(target, (str, Path)):
        with open(target, "w", encoding="utf-8") as file:
            write_trace(requests, file)
        return

    target.write(TRACE_HEADER + "\n")
    for request in requests:
        target.write(f"{request.gap} {request.op.value} {request.address:#x} {request.source}\n")


def split_by_source(requests: Iterable[TraceRequest]) -> dict[int, list[TraceRequest]]:
    sources: dict[int, list[TraceRequest]] = {}
    for request in requests:
        sources.setdefault(request.source, []).append(request)
    return dict(sorted(sources.items()))
