def slice_bits(value: int, slice_widths: list[int], *, start_at: int = 0) -> list[int]:
    """
    Split an integer into bit fields, least significant field first. Example:
        >>> slice_bits(0b1101_011, [3, 4])
        [3, 13]

        >>> slice_bits(0b1101_011, [4], start_at=3)
        [13]

    :param value: non-negative integer to be sliced
    :param slice_widths: widths in bits of the fields to be returned
    :param start_at: number of low bits to skip before the first field
    :return: field values in the order of slice_widths
    """
    if value < 0:
        raise ValueError(f"cannot slice negative value {value}.")

    # bits above the last field would be silently dropped
    if value >> (start_at + sum(slice_widths)):
        raise IndexError(f"start_at and slice_widths add up to {start_at + sum(slice_widths)} bits while the value "
                         f"needs {value.bit_length()}.")

    slices = []
    current_bit = start_at

    for width in slice_widths:
        slices.append((value >> current_bit) & ((1 << width) - 1))
        current_bit += width

    return slices


def join_bits(fields: list[int], slice_widths: list[int], *, start_at: int = 0) -> int:
    """
    Inverse of slice_bits.
        >>> join_bits([3, 13], [3, 4])
        107
    """
    if len(fields) != len(slice_widths):
        raise ValueError("fields and slice_widths must have the same length.")

    value = 0
    current_bit = start_at

    for field_value, width in zip(fields, slice_widths):
        if not 0 <= field_value < (1 << width):
            raise IndexError(f"field value {field_value} does not fit into {width} bits.")
        value |= field_value << current_bit
        current_bit += width

    return value
