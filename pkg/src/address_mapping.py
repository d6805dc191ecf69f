from typing import NamedTuple
from src.schema import Geometry
from src.slice_bits import slice_bits, join_bits


class AddressRangeError(IndexError):
    pass


class DecodedAddress(NamedTuple):
    channel: int
    rank: int
    bank: int
    subarray: int
    row: int
    column: int

    def row_in_subarray(self, geometry: Geometry) -> int:
        return self.row % geometry.rows_per_subarray

    def bank_in_channel(self, geometry: Geometry) -> int:
        return self.rank * geometry.banks_per_rank + self.bank


def _layout(geometry: Geometry) -> tuple[list[str], list[int], int]:
    widths = geometry.field_widths()
    order = list(geometry.address_order)
    # byte offset inside a column is below every field
    offset_bits = geometry.column_bytes.bit_length() - 1
    return order, [widths[name] for name in order], offset_bits


def decode_address(physical_address: int, geometry: Geometry) -> DecodedAddress:
    """
    Split a byte address into DRAM coordinates using geometry.address_order (least significant field first). With
    the default row-interleaved order, adding one row's worth of bytes moves to the next row of the same bank.
    """
    if not 0 <= physical_address < geometry.capacity_bytes:
        raise AddressRangeError(f"address {physical_address:#x} is outside the {geometry.capacity_bytes} byte "
                                f"capacity.")

    order, widths, offset_bits = _layout(geometry)
    values = dict(zip(order, slice_bits(physical_address, widths, start_at=offset_bits)))

    return DecodedAddress(
        channel=values["channel"],
        rank=values["rank"],
        bank=values["bank"],
        subarray=geometry.subarray_of(values["row"]),
        row=values["row"],
        column=values["column"],
    )


def encode_address(geometry: Geometry, *, channel: int = 0, rank: int = 0, bank: int = 0, row: int = 0,
                   column: int = 0) -> int:
    order, widths, offset_bits = _layout(geometry)
    values = {"channel": channel, "rank": rank, "bank": bank, "row": row, "column": column}

    try:
        return join_bits([values[name] for name in order], widths, start_at=offset_bits)
    except IndexError as err:
        raise AddressRangeError(str(err)) from err
