import csv
from pathlib import Path
from typing import TextIO
import numpy as np
from src.shared_enum_vars import RowFlags


UNRELIABLE = RowFlags.CORRUPTED | RowFlags.FLIPPED | RowFlags.PARTIAL_RESTORE | RowFlags.RETENTION_EXPIRED


class GroundTruth:
    """
    Electrical state of every row of one channel: stored byte pattern, hammer count since the last restore, time of
    the last restore and a flag bitmask. Rows are addressed by (bank, row) where bank is the flat index inside the
    channel and row is the row index inside the bank.
    """
    def __init__(self, banks: int, rows_per_bank: int, rows_per_subarray: int, n_rh_true: int, retention_ps: int):
        if n_rh_true < 1:
            raise ValueError("n_rh_true must be at least 1.")

        self.banks = banks
        self.rows_per_bank = rows_per_bank
        self.rows_per_subarray = rows_per_subarray
        self.n_rh_true = n_rh_true
        self.retention_ps = retention_ps

        shape = (banks, rows_per_bank)
        self.data = np.zeros(shape, dtype=np.uint8)
        self.hammer = np.zeros(shape, dtype=np.int64)
        self.last_restore = np.zeros(shape, dtype=np.int64)
        # -1 until a neighbour is first activated
        self.last_hammer = np.full(shape, -1, dtype=np.int64)
        self.flags = np.zeros(shape, dtype=np.uint8)

    def copy(self) -> "GroundTruth":
        clone = GroundTruth(self.banks, self.rows_per_bank, self.rows_per_subarray, self.n_rh_true,
                            self.retention_ps)
        clone.data[:] = self.data
        clone.hammer[:] = self.hammer
        clone.last_restore[:] = self.last_restore
        clone.last_hammer[:] = self.last_hammer
        clone.flags[:] = self.flags
        return clone

    def _check(self, bank: int, row: int) -> None:
        if not (0 <= bank < self.banks and 0 <= row < self.rows_per_bank):
            raise IndexError(f"row ({bank}, {row}) is outside {self.banks} banks x {self.rows_per_bank} rows.")

    def neighbours(self, row: int) -> list[int]:
        # no disturbance across subarray boundaries
        subarray = row // self.rows_per_subarray
        return [n for n in (row - 1, row + 1)
                if 0 <= n < self.rows_per_bank and n // self.rows_per_subarray == subarray]

    def write_row(self, bank: int, row: int, pattern: int, time: int) -> None:
        """Store a pattern; a write fully recharges the row and clears every flag."""
        self._check(bank, row)
        self.data[bank, row] = pattern & 0xFF
        self.flags[bank, row] = 0
        self.hammer[bank, row] = 0
        self.last_restore[bank, row] = time

    def read_row(self, bank: int, row: int) -> int:
        self._check(bank, row)
        value = int(self.data[bank, row])
        flags = RowFlags(int(self.flags[bank, row]))
        if flags & RowFlags.CORRUPTED:
            value ^= 0xFF
        elif flags & RowFlags.FLIPPED:
            value ^= 0x01
        return value

    def compare_data(self, bank: int, row: int, expected: int) -> bool:
        if self.flags[bank, row] & int(UNRELIABLE):
            return False
        return self.read_row(bank, row) == expected & 0xFF

    def restore_row(self, bank: int, row: int, time: int) -> None:
        """Full restore: recharges the row, so an earlier partial restore no longer counts against it."""
        self._check(bank, row)
        self.hammer[bank, row] = 0
        self.last_restore[bank, row] = time
        self.flags[bank, row] &= ~np.uint8(RowFlags.PARTIAL_RESTORE)

    def mark(self, bank: int, row: int, flag: RowFlags) -> None:
        self._check(bank, row)
        self.flags[bank, row] |= int(flag)

    def has_flag(self, bank: int, row: int, flag: RowFlags) -> bool:
        return bool(self.flags[bank, row] & int(flag))

    def register_hammer(self, bank: int, activated_row: int, time: int) -> list[int]:
        """
        Count one activation of activated_row, issued at time, against its neighbours. Returns the victims that
        reached n_rh_true with this activation.
        """
        self._check(bank, activated_row)
        flipped = []

        for victim in self.neighbours(activated_row):
            self.hammer[bank, victim] += 1
            self.last_hammer[bank, victim] = time
            if self.hammer[bank, victim] >= self.n_rh_true and not self.flags[bank, victim] & int(RowFlags.FLIPPED):
                self.flags[bank, victim] |= int(RowFlags.FLIPPED)
                flipped.append(victim)

        return flipped

    def check_retention(self, bank: int, now: int) -> list[int]:
        expired = np.flatnonzero(now - self.last_restore[bank] > self.retention_ps)
        self.flags[bank, expired] |= int(RowFlags.RETENTION_EXPIRED)
        return expired.tolist()

    def rows_with(self, flag: RowFlags) -> list[tuple[int, int]]:
        banks, rows = np.nonzero(self.flags & int(flag))
        return list(zip(banks.tolist(), rows.tolist()))

    def count(self, flag: RowFlags) -> int:
        return int(np.count_nonzero(self.flags & int(flag)))

    def dump_csv(self, target: str | Path | TextIO, *, only_flagged: bool = False) -> None:
        """Snapshot for debugging: bank,subarray,row,hammer_count,last_restore_ps,flags"""
        if isinstance(target, (str, Path)):
            with open(target, "w", newline="", encoding="utf-8") as file:
                self.dump_csv(file, only_flagged=only_flagged)
            return

        writer = csv.writer(target)
        target.write("# hira-sim ground-truth v1\n")
        writer.writerow(["bank", "subarray", "row", "hammer_count", "last_restore_ps", "flags"])
        for bank in range(self.banks):
            for row in range(self.rows_per_bank):
                if only_flagged and not self.flags[bank, row]:
                    continue
                writer.writerow([bank, row // self.rows_per_subarray, row, int(self.hammer[bank, row]),
                                 int(self.last_restore[bank, row]), int(self.flags[bank, row])])
