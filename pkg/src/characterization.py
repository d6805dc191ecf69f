import csv
from pathlib import Path
from typing import Iterable, TextIO
import numpy as np
from src.shared_enum_vars import CommandTypes, RowFlags, SimEventTypes
from src.schema import HiraConfig, ElectricalWindows, CoverageReport, ThresholdMeasurement, ThresholdReport, \
    BankVariationReport
from src.dram_chip import DramChip, check_tfaw
from src.isolation_map import IsolationMap
from src.sim_logger import SimLogger


DEFAULT_PATTERNS = (0xFF, 0x00, 0xAA, 0x55)
T_GRID_PS = (1500, 3000, 4500, 6000)


class CorruptionDetectedError(Exception):
    def __init__(self, bank: int, rows: list[int], hammer_count: int):
        self.bank = bank
        self.rows = rows
        self.hammer_count = hammer_count
        super().__init__(f"bank {bank}: rows {rows} corrupted by the HiRA operation at HC={hammer_count}.")


class NoBitFlipError(Exception):
    pass


def select_tested_rows(rows_per_bank: int, block: int | None = None) -> list[int]:
    """
    First, middle and last `block` rows of a bank; every row when block is None or the blocks would overlap.
        >>> select_tested_rows(16, 2)
        [0, 1, 7, 8, 14, 15]
    """
    if block is None or 3 * block >= rows_per_bank:
        return list(range(rows_per_bank))
    middle = (rows_per_bank - block) // 2
    return list(range(block)) + list(range(middle, middle + block)) + list(range(rows_per_bank - block, rows_per_bank))


def _inverse(pattern: int) -> int:
    return ~pattern & 0xFF


def _act_time(chip: DramChip, bank: int, time: int, *later: int) -> int:
    """Earliest ACT at or after time that keeps tRC, tRP and tFAW, including ACTs `later` ps after it."""
    tFAW = chip.timing.tFAW
    acts = chip.rank_acts[chip.rank_of(bank)]
    time = max(time, chip.earliest_activate(bank), chip.last_time)
    while True:
        start = check_tfaw(acts, time, tFAW)
        planned = list(acts) + [start]
        for offset in later:
            if check_tfaw(planned, start + offset, tFAW) != start + offset:
                break
            planned.append(start + offset)
        else:
            return start
        time = start + chip.timing.tCK


def hira_pair(chip: DramChip, bank: int, row_a: int, row_b: int, cfg: HiraConfig, time: int = 0) -> int:
    """ACT rowA, PRE after t1, ACT rowB after t2, PRE after tRAS. Returns the time both rows are closed (after tRP)."""
    tp = chip.timing
    start = _act_time(chip, bank, time, cfg.t1 + cfg.t2)
    chip.issue_command(bank, CommandTypes.ACT, start, row=row_a)
    chip.issue_command(bank, CommandTypes.PRE, start + cfg.t1, hira=True)
    second = start + cfg.t1 + cfg.t2
    chip.issue_command(bank, CommandTypes.ACT, second, row=row_b, hira=True)
    chip.issue_command(bank, CommandTypes.PRE, second + tp.tRAS)
    return second + tp.tRAS + tp.tRP


def _hammer(chip: DramChip, bank: int, aggressors: list[int], activations: int, time: int) -> int:
    tp = chip.timing
    for i in range(activations):
        start = _act_time(chip, bank, time)
        chip.issue_command(bank, CommandTypes.ACT, start, row=aggressors[i % len(aggressors)])
        chip.issue_command(bank, CommandTypes.PRE, start + tp.tRAS)
        time = start + tp.tRAS + tp.tRP
    return time


def box_summary(values: Iterable[float]) -> tuple[float, float, float, float, float]:
    values = np.asarray(list(values), dtype=float)
    if values.size == 0:
        return 0.0, 0.0, 0.0, 0.0, 0.0
    return tuple(float(v) for v in np.percentile(values, [0, 25, 50, 75, 100]))


def run_coverage(
        chip: DramChip,
        cfg: HiraConfig,
        tested_rows: list[int],
        patterns: Iterable[int] = DEFAULT_PATTERNS,
        *,
        bank: int = 0,
        logger: SimLogger | None = None
) -> CoverageReport:
    """
    For every rowA of tested_rows, the fraction of tested rows a HiRA op can open together with it without
    corrupting either row under every data pattern. Works on a copy of the chip.
    """
    chip = chip.clone()
    patterns = list(patterns)
    time = chip.last_time
    per_row = {}
    partners = {}

    for row_a in tested_rows:
        passing = []
        for row_b in tested_rows:
            success = True
            for pattern in patterns:
                chip.initialize_row(bank, row_a, pattern, time)
                chip.initialize_row(bank, row_b, _inverse(pattern), time)
                time = hira_pair(chip, bank, row_a, row_b, cfg, time)
                truth = chip.ground_truth
                if not (truth.compare_data(bank, row_a, pattern) and truth.compare_data(bank, row_b, _inverse(pattern))):
                    success = False
                    break
            if success:
                passing.append(row_b)
        per_row[row_a] = len(passing) / len(tested_rows)
        partners[row_a] = passing

    report = CoverageReport(t1=cfg.t1, t2=cfg.t2, patterns=patterns, tested_rows=list(tested_rows), per_row=per_row,
                            partners=partners, summary=box_summary(per_row.values()))
    if logger is not None:
        logger.log(SimEventTypes.CHARACTERIZATION, experiment=f"coverage t1={cfg.t1} t2={cfg.t2} bank={bank}",
                   summary=f"min {report.summary[0]:.3f} median {report.summary[2]:.3f} max {report.summary[4]:.3f}")
    return report


def expected_coverage(
        isolation_map: IsolationMap,
        windows: ElectricalWindows,
        cfg: HiraConfig,
        tested_rows: list[int],
        rows_per_subarray: int
) -> dict[int, float]:
    """Coverage of every tested row computed straight from the isolation map and the electrical windows."""
    if cfg.t1 < windows.sense_enable_min or cfg.t2 > windows.wordline_disable_max:
        return {row: 0.0 for row in tested_rows}
    coverage = {}
    for row_a in tested_rows:
        count = sum(isolation_map.isolated(row_a // rows_per_subarray, row_b // rows_per_subarray)
                    for row_b in tested_rows)
        coverage[row_a] = count / len(tested_rows)
    return coverage


def run_coverage_grid(
        chip: DramChip,
        tested_rows: list[int],
        t_values: Iterable[int] = T_GRID_PS,
        patterns: Iterable[int] = DEFAULT_PATTERNS,
        *,
        bank: int = 0,
        logger: SimLogger | None = None
) -> list[CoverageReport]:
    t_values = list(t_values)
    return [run_coverage(chip, HiraConfig(t1=t1, t2=t2), tested_rows, patterns, bank=bank, logger=logger)
            for t1 in t_values for t2 in t_values]


def default_dummy(chip: DramChip, bank: int, victim: int) -> int:
    rps = chip.geometry.rows_per_subarray
    partners = chip.map_for(bank).partners(victim // rps)
    if not partners:
        raise ValueError(f"row {victim} of bank {bank} has no isolated subarray to take a dummy row from.")
    return partners[0] * rps + rps // 2


def _flips_at(chip: DramChip, bank: int, victim: int, aggressors: list[int], dummy: int | None, cfg: HiraConfig,
              hammer_count: int, pattern: int) -> bool:
    chip = chip.clone()
    time = chip.last_time
    chip.initialize_row(bank, victim, pattern, time)
    for row in aggressors + ([dummy] if dummy is not None else []):
        chip.initialize_row(bank, row, _inverse(pattern), time)

    time = _hammer(chip, bank, aggressors, hammer_count // 2, time)
    if dummy is not None:
        time = hira_pair(chip, bank, dummy, victim, cfg, time)
        damaged = [row for row in (dummy, victim)
                   if chip.ground_truth.has_flag(bank, row, RowFlags.CORRUPTED | RowFlags.PARTIAL_RESTORE)]
        if damaged:
            raise CorruptionDetectedError(bank, damaged, hammer_count)
    else:
        # same duration, no commands
        time += cfg.t1 + cfg.t2 + chip.timing.tRAS + chip.timing.tRP
    _hammer(chip, bank, aggressors, hammer_count // 2, time)

    return chip.ground_truth.has_flag(bank, victim, RowFlags.FLIPPED) \
        or not chip.ground_truth.compare_data(bank, victim, pattern)


def run_threshold(
        chip: DramChip,
        victim: int,
        use_hira: bool,
        *,
        bank: int = 0,
        cfg: HiraConfig | None = None,
        dummy: int | None = None,
        pattern: int = 0xAA
) -> int:
    """
    Smallest even hammer count HC that flips the victim when HC/2 activations (alternating between the two
    neighbours) land before a midpoint step and HC/2 after it. The midpoint step is a HiRA op that opens a dummy row
    and then the victim when use_hira is set, an idle wait of the same length otherwise.

    :raises NoBitFlipError: no flip up to 4 x the chip's threshold
    :raises CorruptionDetectedError: the HiRA op corrupted the victim or the dummy row
    """
    cfg = cfg or HiraConfig()
    neighbours = chip.ground_truth.neighbours(victim)
    if len(neighbours) != 2:
        raise ValueError(f"row {victim} needs a neighbour on both sides inside its subarray.")
    if use_hira and dummy is None:
        dummy = default_dummy(chip, bank, victim)
    if not use_hira:
        dummy = None

    low, high = 1, 2 * chip.ground_truth.n_rh_true
    # HC = 2 * half
    if not _flips_at(chip, bank, victim, neighbours, dummy, cfg, 2 * high, pattern):
        raise NoBitFlipError(f"row {victim} of bank {bank} does not flip up to HC={2 * high}.")
    while low < high:
        middle = (low + high) // 2
        if _flips_at(chip, bank, victim, neighbours, dummy, cfg, 2 * middle, pattern):
            high = middle
        else:
            low = middle + 1
    return 2 * low


def measure_thresholds(chip: DramChip, victims: Iterable[int], *, bank: int = 0, cfg: HiraConfig | None = None,
                       logger: SimLogger | None = None) -> ThresholdReport:
    measurements = [
        ThresholdMeasurement(victim=victim, hc_without=run_threshold(chip, victim, False, bank=bank, cfg=cfg),
                             hc_with=run_threshold(chip, victim, True, bank=bank, cfg=cfg))
        for victim in victims
    ]
    report = ThresholdReport(bank=bank, measurements=measurements)
    if logger is not None:
        logger.log(SimEventTypes.CHARACTERIZATION, experiment=f"threshold bank={bank}",
                   summary=f"{len(measurements)} victims, mean normalized threshold {report.mean_ratio:.3f}")
    return report


def run_bank_variation(
        chip: DramChip,
        banks: Iterable[int],
        tested_rows: list[int],
        victims: Iterable[int],
        *,
        cfg: HiraConfig | None = None,
        patterns: Iterable[int] = DEFAULT_PATTERNS,
        logger: SimLogger | None = None
) -> BankVariationReport:
    """Both experiments on every bank; banks whose passing row pairs differ from the first bank are reported."""
    cfg = cfg or HiraConfig()
    banks = list(banks)
    victims = list(victims)
    patterns = list(patterns)
    coverage = {bank: run_coverage(chip, cfg, tested_rows, patterns, bank=bank, logger=logger) for bank in banks}
    thresholds = {bank: measure_thresholds(chip, victims, bank=bank, cfg=cfg, logger=logger) for bank in banks}

    reference = coverage[banks[0]].partners if banks else {}
    mismatched = [bank for bank in banks if coverage[bank].partners != reference]
    return BankVariationReport(coverage=coverage, thresholds=thresholds, identical=not mismatched,
                               mismatched_banks=mismatched)


def _open(target: str | Path | TextIO):
    if isinstance(target, (str, Path)):
        return open(target, "w", newline="", encoding="utf-8")
    return None


def write_coverage_csv(report: CoverageReport, target: str | Path | TextIO) -> None:
    file = _open(target)
    if file is not None:
        with file:
            write_coverage_csv(report, file)
        return

    target.write("# hira-sim coverage v1\n")
    writer = csv.writer(target)
    writer.writerow(["rowA", "coverage"])
    for row, fraction in sorted(report.per_row.items()):
        writer.writerow([row, f"{fraction:.6g}"])


def write_coverage_summary(reports: Iterable[CoverageReport], target: str | Path | TextIO) -> None:
    """Box-plot data: one row per (t1, t2)."""
    file = _open(target)
    if file is not None:
        with file:
            write_coverage_summary(reports, file)
        return

    target.write("# hira-sim coverage-summary v1\n")
    writer = csv.writer(target)
    writer.writerow(["t1", "t2", "min", "q1", "median", "q3", "max"])
    for report in reports:
        writer.writerow([report.t1, report.t2, *(f"{v:.6g}" for v in report.summary)])


def write_threshold_csv(report: ThresholdReport, target: str | Path | TextIO) -> None:
    file = _open(target)
    if file is not None:
        with file:
            write_threshold_csv(report, file)
        return

    target.write("# hira-sim threshold v1\n")
    writer = csv.writer(target)
    writer.writerow(["victim", "hc_without", "hc_with", "ratio"])
    for m in report.measurements:
        writer.writerow([m.victim, m.hc_without, m.hc_with, f"{m.ratio:.6g}"])
