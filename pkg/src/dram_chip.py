import copy
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable
from src.shared_enum_vars import BankPhases, CommandTypes, HiraOutcomes, RowFlags
from src.schema import Geometry, TimingParams, ElectricalWindows, TimingViolation, rows_per_ref, scaled_trfc
from src.isolation_map import IsolationMap
from src.ground_truth import GroundTruth


class TimingViolationError(Exception):
    def __init__(self, violations: list[TimingViolation]):
        self.violations = violations
        details = "; ".join(f"{v.command} on bank {v.bank} violates {v.constraint} "
                            f"(attempted {v.attempted_ps} ps, earliest {v.earliest_ps} ps)" for v in violations)
        super().__init__(details)


class IllegalCommandError(Exception):
    pass


def check_tfaw(act_history: Iterable[int], proposed: int, tFAW: int) -> int:
    """
    Returns proposed when a fifth activation at that time keeps at most four activations inside any tFAW window,
    otherwise the time at which the oldest of the last four leaves the window.
        >>> check_tfaw([0, 1000, 2000, 3000], 4000, 30000)
        30000
    """
    recent = sorted(act_history)[-4:]
    if len(recent) < 4 or proposed - recent[0] >= tFAW:
        return proposed
    return recent[0] + tFAW


@dataclass(slots=True)
class BankState:
    # stored phase; Activating and Precharging are derived from the timestamps
    phase: BankPhases = BankPhases.PRECHARGED
    open_row: int | None = None
    hira_row: int | None = None
    last_act_ps: int | None = None
    first_act_ps: int | None = None
    last_pre_ps: int | None = None
    io_shared: bool = False
    from_hira: bool = False
    outcome: HiraOutcomes | None = None


@dataclass(slots=True)
class CommandResult:
    phase: BankPhases
    outcome: HiraOutcomes | None = None
    flipped: list[int] = field(default_factory=list)
    restored: list[int] = field(default_factory=list)
    partial: list[int] = field(default_factory=list)
    corrupted: list[int] = field(default_factory=list)
    ref_wrapped: list[int] = field(default_factory=list)


class DramChip:
    """
    One channel of DRAM: per-bank command state machines, rank-level tFAW and REF bookkeeping, and the ground truth
    the commands act on. Banks are addressed by their flat index inside the channel (rank * banks_per_rank + bank).
    """
    def __init__(
            self,
            geometry: Geometry,
            timing: TimingParams,
            windows: ElectricalWindows,
            isolation_map: IsolationMap,
            *,
            n_rh_true: int,
            use_scaled_trfc: bool = False
    ):
        if isolation_map.subarrays != geometry.subarrays_per_bank:
            raise ValueError(f"isolation map has {isolation_map.subarrays} subarrays, geometry has "
                             f"{geometry.subarrays_per_bank}.")

        self.geometry = geometry
        self.timing = timing
        self.windows = windows
        self.isolation_map = isolation_map
        # fault injection: banks whose physical layout differs from the shared map
        self.bank_maps: dict[int, IsolationMap] = {}

        banks = geometry.banks_per_channel
        self.ground_truth = GroundTruth(banks, geometry.rows_per_bank, geometry.rows_per_subarray, n_rh_true,
                                        timing.tREFW)
        self.banks = [BankState() for _ in range(banks)]
        self.rank_acts = [deque(maxlen=4) for _ in range(geometry.ranks_per_channel)]
        self.rank_busy_until = [0] * geometry.ranks_per_channel
        self.ref_pointer = [0] * banks
        self.rows_per_ref = rows_per_ref(geometry, timing)
        self.trfc = scaled_trfc(geometry, timing) if use_scaled_trfc else timing.tRFC
        self.last_time = 0

    def clone(self) -> "DramChip":
        return copy.deepcopy(self)

    def rank_of(self, bank: int) -> int:
        return bank // self.geometry.banks_per_rank

    def map_for(self, bank: int) -> IsolationMap:
        return self.bank_maps.get(bank, self.isolation_map)

    def set_bank_map(self, bank: int, isolation_map: IsolationMap) -> None:
        self.bank_maps[bank] = isolation_map

    def phase(self, bank: int, now: int) -> BankPhases:
        state = self.banks[bank]
        if state.phase is BankPhases.ACTIVE and now < state.last_act_ps + self.timing.tRCD:
            return BankPhases.ACTIVATING
        if state.phase is BankPhases.PRECHARGED and state.last_pre_ps is not None \
                and now < state.last_pre_ps + self.timing.tRP:
            return BankPhases.PRECHARGING
        return state.phase

    def earliest_activate(self, bank: int) -> int:
        """Earliest nominal ACT time of a precharged bank, tFAW excluded."""
        state = self.banks[bank]
        earliest = self.rank_busy_until[self.rank_of(bank)]
        if state.last_pre_ps is not None:
            earliest = max(earliest, state.last_pre_ps + self.timing.tRP)
        if state.last_act_ps is not None:
            earliest = max(earliest, state.last_act_ps + self.timing.tRC)
        return earliest

    def initialize_row(self, bank: int, row: int, pattern: int, time: int) -> None:
        self.ground_truth.write_row(bank, row, pattern, time)

    def restore_row(self, bank: int, row: int, time: int) -> None:
        self.ground_truth.restore_row(bank, row, time)

    def register_hammer(self, bank: int, row: int, time: int) -> list[int]:
        return self.ground_truth.register_hammer(bank, row, time)

    def check_retention(self, bank: int, now: int) -> list[int]:
        return self.ground_truth.check_retention(bank, now)

    def issue_command(
            self,
            bank: int,
            cmd: CommandTypes,
            time: int,
            *,
            row: int | None = None,
            column: int | None = None,
            hira: bool = False
    ) -> CommandResult:
        """
        Apply one command. hira=True marks the early PRE and the second ACT of an ACT-PRE-ACT sequence (and the
        closing PRE of a HiRA op), which are the only commands allowed to break tRAS and tRP.

        :raises TimingViolationError: listing every violated constraint
        :raises IllegalCommandError: for commands the current bank state cannot accept
        """
        if time < self.last_time:
            raise ValueError(f"command time {time} ps is earlier than the previous command at {self.last_time} ps.")
        if not 0 <= bank < len(self.banks):
            raise IllegalCommandError(f"bank {bank} does not exist.")

        match cmd:
            case CommandTypes.ACT:
                result = self._activate(bank, row, time, hira)
            case CommandTypes.PRE:
                result = self._precharge(bank, time, hira)
            case CommandTypes.RD | CommandTypes.WR:
                result = self._column(bank, cmd, column, time)
            case CommandTypes.REF:
                result = self._refresh(bank, time)
            case _:
                raise ValueError(f"Unrecognised command {cmd}.")

        self.last_time = time
        return result

    def _violation(self, cmd: CommandTypes, constraint: str, bank: int, earliest: int, time: int):
        return TimingViolation(command=cmd.value, constraint=constraint, bank=bank, earliest_ps=earliest,
                               attempted_ps=time)

    def _rank_violations(self, bank: int, cmd: CommandTypes, time: int) -> list[TimingViolation]:
        rank = self.rank_of(bank)
        violations = []
        if time < self.rank_busy_until[rank]:
            violations.append(self._violation(cmd, "tRFC", bank, self.rank_busy_until[rank], time))
        allowed = check_tfaw(self.rank_acts[rank], time, self.timing.tFAW)
        if allowed > time:
            violations.append(self._violation(cmd, "tFAW", bank, allowed, time))
        return violations

    def _activate(self, bank: int, row: int | None, time: int, hira: bool) -> CommandResult:
        state = self.banks[bank]
        if row is None or not 0 <= row < self.geometry.rows_per_bank:
            raise IllegalCommandError(f"ACT to bank {bank} needs a row within 0..{self.geometry.rows_per_bank - 1}, "
                                      f"got {row}.")

        match state.phase:
            case BankPhases.ACTIVE | BankPhases.DUAL_ACTIVE:
                raise IllegalCommandError(f"ACT to bank {bank} in {state.phase.value} state.")
            case BankPhases.HIRA_WINDOW if hira:
                violations = self._rank_violations(bank, CommandTypes.ACT, time)
                if violations:
                    raise TimingViolationError(violations)
                return self._second_activation(bank, row, time)
            case BankPhases.HIRA_WINDOW:
                # an unflagged ACT ends the sequence without the dual activation
                result = CommandResult(phase=BankPhases.PRECHARGED, partial=[state.hira_row])
            case _:
                result = CommandResult(phase=BankPhases.PRECHARGED)

        violations = []
        if state.last_pre_ps is not None and time < state.last_pre_ps + self.timing.tRP:
            violations.append(self._violation(CommandTypes.ACT, "tRP", bank, state.last_pre_ps + self.timing.tRP,
                                              time))
        if state.last_act_ps is not None and time < state.last_act_ps + self.timing.tRC:
            violations.append(self._violation(CommandTypes.ACT, "tRC", bank, state.last_act_ps + self.timing.tRC,
                                              time))
        violations += self._rank_violations(bank, CommandTypes.ACT, time)
        if violations:
            raise TimingViolationError(violations)

        # the bank is only touched once every check passed
        for abandoned in result.partial:
            self.ground_truth.mark(bank, abandoned, RowFlags.PARTIAL_RESTORE)
        state.phase = BankPhases.ACTIVE
        state.open_row = row
        state.hira_row = None
        state.last_act_ps = time
        state.first_act_ps = time
        state.io_shared = False
        state.from_hira = False
        state.outcome = None
        self.rank_acts[self.rank_of(bank)].append(time)

        result.phase = BankPhases.ACTIVE
        result.flipped = self.ground_truth.register_hammer(bank, row, time)
        return result

    def _second_activation(self, bank: int, row_b: int, time: int) -> CommandResult:
        state = self.banks[bank]
        row_a = state.hira_row
        t1 = state.last_pre_ps - state.first_act_ps
        t2 = time - state.last_pre_ps

        outcome = self.apply_hira_electrical(bank, row_a, row_b, t1, t2, time)
        self.rank_acts[self.rank_of(bank)].append(time)

        result = CommandResult(phase=state.phase, outcome=outcome)
        match outcome:
            case HiraOutcomes.SECOND_ACT_IGNORED:
                result.corrupted = [row_a]
            case HiraOutcomes.FIRST_ROW_CLOSED:
                result.partial = [row_a]
            case HiraOutcomes.CORRUPTED:
                result.corrupted = [row_a, row_b]

        if outcome is not HiraOutcomes.SECOND_ACT_IGNORED:
            result.flipped = self.ground_truth.register_hammer(bank, row_b, time)
        return result

    def apply_hira_electrical(self, bank: int, row_a: int, row_b: int, t1: int, t2: int, time: int) -> HiraOutcomes:
        """
        Decide what an ACT-PRE-ACT sequence did to the two rows and move the bank accordingly. The checks run in
        the order the signals happen inside the chip: sensing of rowA, its wordline, then the shared sense
        amplifiers.
        """
        state = self.banks[bank]
        isolation_map = self.map_for(bank)
        subarray_a = self.geometry.subarray_of(row_a)
        subarray_b = self.geometry.subarray_of(row_b)

        if t1 < self.windows.sense_enable_min:
            # PRE lands before sensing: rowA's charge is shared away and the second ACT is dropped
            outcome = HiraOutcomes.SECOND_ACT_IGNORED
            self.ground_truth.mark(bank, row_a, RowFlags.CORRUPTED)
            state.phase = BankPhases.PRECHARGED
            state.open_row = None
            state.hira_row = None
        elif t2 > self.windows.wordline_disable_max:
            outcome = HiraOutcomes.FIRST_ROW_CLOSED
            self.ground_truth.mark(bank, row_a, RowFlags.PARTIAL_RESTORE)
            state.phase = BankPhases.ACTIVE
            state.open_row = row_b
            state.hira_row = None
            state.first_act_ps = time
        elif not isolation_map.isolated(subarray_a, subarray_b):
            outcome = HiraOutcomes.CORRUPTED
            self.ground_truth.mark(bank, row_a, RowFlags.CORRUPTED)
            self.ground_truth.mark(bank, row_b, RowFlags.CORRUPTED)
            state.phase = BankPhases.DUAL_ACTIVE
            state.open_row = row_b
        else:
            outcome = HiraOutcomes.DUAL_OPEN
            state.phase = BankPhases.DUAL_ACTIVE
            state.open_row = row_b
            state.io_shared = t2 < self.windows.bankio_disconnect_min

        if outcome is not HiraOutcomes.SECOND_ACT_IGNORED:
            state.last_act_ps = time
        state.from_hira = True
        state.outcome = outcome
        return outcome

    def _precharge(self, bank: int, time: int, hira: bool) -> CommandResult:
        state = self.banks[bank]
        result = CommandResult(phase=BankPhases.PRECHARGED, outcome=state.outcome)

        match state.phase:
            case BankPhases.PRECHARGED:
                # NOP
                return result
            case BankPhases.HIRA_WINDOW:
                self.ground_truth.mark(bank, state.hira_row, RowFlags.PARTIAL_RESTORE)
                result.partial = [state.hira_row]
                state.hira_row = None
                state.phase = BankPhases.PRECHARGED
            case BankPhases.ACTIVE:
                hold = time - state.last_act_ps
                if hold >= self.timing.tRAS:
                    self.ground_truth.restore_row(bank, state.open_row, time)
                    result.restored = [state.open_row]
                    state.phase = BankPhases.PRECHARGED
                elif not hira:
                    raise TimingViolationError([self._violation(
                        CommandTypes.PRE, "tRAS", bank, state.last_act_ps + self.timing.tRAS, time
                    )])
                elif state.from_hira:
                    # closing a HiRA op before its row was restored
                    self.ground_truth.mark(bank, state.open_row, RowFlags.PARTIAL_RESTORE)
                    result.partial = [state.open_row]
                    state.phase = BankPhases.PRECHARGED
                else:
                    # early PRE of an ACT-PRE-ACT sequence
                    state.hira_row = state.open_row
                    state.first_act_ps = state.last_act_ps
                    state.phase = BankPhases.HIRA_WINDOW
                    result.phase = BankPhases.HIRA_WINDOW
                state.open_row = None
            case BankPhases.DUAL_ACTIVE:
                hold_b = time - state.last_act_ps
                # one PRE closes both rows; it always ends a HiRA op, so an early one leaves partial restores
                # instead of failing tRAS
                for row, hold in ((state.hira_row, time - state.first_act_ps), (state.open_row, hold_b)):
                    if hold >= self.timing.tRAS:
                        self.ground_truth.restore_row(bank, row, time)
                        result.restored.append(row)
                    else:
                        self.ground_truth.mark(bank, row, RowFlags.PARTIAL_RESTORE)
                        result.partial.append(row)
                state.open_row = None
                state.hira_row = None
                state.phase = BankPhases.PRECHARGED
            case _:
                raise ValueError(f"Unrecognised stored phase {state.phase}.")

        state.last_pre_ps = time
        state.io_shared = False
        if state.phase is BankPhases.PRECHARGED:
            state.from_hira = False
        return result

    def _column(self, bank: int, cmd: CommandTypes, column: int | None, time: int) -> CommandResult:
        state = self.banks[bank]
        if state.phase not in (BankPhases.ACTIVE, BankPhases.DUAL_ACTIVE):
            raise IllegalCommandError(f"{cmd.value} to bank {bank} in {state.phase.value} state.")
        if column is not None and not 0 <= column < self.geometry.columns_per_row:
            raise IllegalCommandError(f"column {column} is outside the row.")
        if time < state.last_act_ps + self.timing.tRCD:
            raise TimingViolationError([self._violation(
                cmd, "tRCD", bank, state.last_act_ps + self.timing.tRCD, time
            )])

        result = CommandResult(phase=state.phase, outcome=state.outcome)
        if state.phase is BankPhases.DUAL_ACTIVE and state.io_shared:
            # both local row buffers still drive the bank I/O
            for row in (state.hira_row, state.open_row):
                self.ground_truth.mark(bank, row, RowFlags.CORRUPTED)
            result.corrupted = [state.hira_row, state.open_row]
        return result

    def _refresh(self, bank: int, time: int) -> CommandResult:
        rank = self.rank_of(bank)
        first = rank * self.geometry.banks_per_rank
        rank_banks = range(first, first + self.geometry.banks_per_rank)

        violations = []
        for b in rank_banks:
            state = self.banks[b]
            if state.phase is not BankPhases.PRECHARGED:
                raise IllegalCommandError(f"REF to rank {rank} while bank {b} is {state.phase.value}.")
            if state.last_pre_ps is not None and time < state.last_pre_ps + self.timing.tRP:
                violations.append(self._violation(CommandTypes.REF, "tRP", b, state.last_pre_ps + self.timing.tRP,
                                                  time))
        if time < self.rank_busy_until[rank]:
            violations.append(self._violation(CommandTypes.REF, "tRFC", bank, self.rank_busy_until[rank], time))
        if violations:
            raise TimingViolationError(violations)

        self.rank_busy_until[rank] = time + self.trfc
        result = CommandResult(phase=BankPhases.PRECHARGED)
        rows = self.geometry.rows_per_bank
        for b in rank_banks:
            start = self.ref_pointer[b]
            for offset in range(min(self.rows_per_ref, rows)):
                self.ground_truth.restore_row(b, (start + offset) % rows, time)
            if start + self.rows_per_ref >= rows:
                result.ref_wrapped.append(b)
            self.ref_pointer[b] = (start + self.rows_per_ref) % rows
        return result
