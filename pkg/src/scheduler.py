import heapq
import itertools
from bisect import bisect_left, insort
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, NamedTuple
import numpy as np
from src.shared_enum_vars import (
    BankPhases, CommandTypes, HiraPurposes, LogEvents, RefreshKinds, RequestOps, ReservationKinds, SchedulerActions,
    SchedulerModes, SimEventTypes
)
from src.schema import ExperimentConfig, Geometry, TimingParams, RefreshRequest
from src.dram_chip import DramChip, CommandResult, check_tfaw
from src.hira_op import HiraPlan, validate_hira
from src.isolation_map import SubarrayPairsTable
from src.refresh_table import RefreshTable, RefPtrTable, PRFIFO, RefreshTableFullError
from src.sim_logger import SimLogger


EVENT_LOG_HEADER = ["time_ps", "event", "bank", "rowA", "rowB", "kind"]


class InvariantViolationError(Exception):
    def __init__(self, kind: str, message: str):
        self.kind = kind
        super().__init__(f"{kind}: {message}")


@dataclass(slots=True, eq=False)
class DemandRequest:
    request_id: int
    source: int
    op: RequestOps
    bank: int
    row: int
    column: int
    arrival_ps: int
    activated: bool = False
    para_drawn: bool = False
    para_victim: int | None = None
    tfaw_wait: int = 0
    backpressured: bool = False


class PeriodicRefreshGenerator:
    """
    Spreads the refreshes of every bank evenly over tREFW and staggers the banks (ranks interleaved) so that no two
    banks of a channel generate at the same time. Generation times are exact rationals floored to picoseconds, which
    yields exactly rows_per_bank requests per bank per window.
    """
    def __init__(self, geometry: Geometry, timing: TimingParams, slack: int, ids: Iterator[int]):
        self.rows = geometry.rows_per_bank
        self.banks_per_rank = geometry.banks_per_rank
        self.ranks = geometry.ranks_per_channel
        self.tREFW = timing.tREFW
        self.slack = slack
        self._ids = ids
        self._slots_per_period = self.banks_per_rank * self.ranks
        self._denominator = self.rows * self._slots_per_period

        self.next_index = [0] * geometry.banks_per_channel
        self._heap = [(self.generation_time(bank, 0), bank) for bank in range(geometry.banks_per_channel)]
        heapq.heapify(self._heap)

    @property
    def period_ps(self) -> Fraction:
        return Fraction(self.tREFW, self.rows)

    def _slot(self, bank: int) -> int:
        rank, bank_in_rank = divmod(bank, self.banks_per_rank)
        return bank_in_rank * self.ranks + rank

    def phase_offset_ps(self, bank: int) -> Fraction:
        return Fraction(self.tREFW * self._slot(bank), self._denominator)

    def generation_time(self, bank: int, index: int) -> int:
        return self.tREFW * (index * self._slots_per_period + self._slot(bank)) // self._denominator

    def _first_index_at(self, bank: int, time: int) -> int:
        if time <= 0:
            return 0
        needed = -(-time * self._denominator // self.tREFW)
        return max(0, -(-(needed - self._slot(bank)) // self._slots_per_period))

    def count_generations(self, bank: int, start: int, end: int) -> int:
        """Requests bank generates in [start, end)."""
        return self._first_index_at(bank, end) - self._first_index_at(bank, start)

    def next_generation_time(self) -> int | None:
        return self._heap[0][0] if self._heap else None

    def generate_periodic(self, now: int) -> list[RefreshRequest]:
        generated = []
        while self._heap and self._heap[0][0] <= now:
            time, bank = heapq.heappop(self._heap)
            index = self.next_index[bank]
            generated.append(RefreshRequest(
                deadline=time + self.slack,
                bank=bank,
                kind=RefreshKinds.PERIODIC,
                generated_ps=time,
                request_id=next(self._ids),
                window=index // self.rows,
            ))
            self.next_index[bank] = index + 1
            heapq.heappush(self._heap, (self.generation_time(bank, index + 1), bank))
        return generated


class PreventiveRefreshGenerator:
    """PARA: after a demand activation, refresh one neighbour with probability p_th (p_th/2 per side)."""
    def __init__(self, p_th: float, rows_per_subarray: int, rows_per_bank: int, tRC: int, slack: int,
                 rng: np.random.Generator, ids: Iterator[int]):
        if not 0.0 <= p_th <= 1.0:
            raise ValueError("p_th must be within [0, 1].")
        self.p_th = p_th
        self.rows_per_subarray = rows_per_subarray
        self.rows_per_bank = rows_per_bank
        self.tRC = tRC
        self.slack = slack
        self.rng = rng
        self._ids = ids

    def draw_victim(self, row: int) -> int | None:
        u = self.rng.random()
        if u < self.p_th / 2:
            victim = row - 1
        elif u < self.p_th:
            victim = row + 1
        else:
            return None
        # no neighbour across a subarray boundary
        if not 0 <= victim < self.rows_per_bank or victim // self.rows_per_subarray != row // self.rows_per_subarray:
            return None
        return victim

    def make_request(self, bank: int, victim: int, activation_ps: int) -> RefreshRequest:
        # the victim can only be refreshed once the aggressor's row cycle is over
        generated = activation_ps + self.tRC
        return RefreshRequest(deadline=generated + self.slack, bank=bank, kind=RefreshKinds.PREVENTIVE,
                              generated_ps=generated, request_id=next(self._ids), victim_row=victim)

    def para_on_activation(self, bank: int, row: int, time: int) -> RefreshRequest | None:
        victim = self.draw_victim(row)
        if victim is None:
            return None
        return self.make_request(bank, victim, time)


@dataclass(slots=True, eq=False)
class PlannedCommand:
    time_ps: int
    cmd: CommandTypes
    row: int | None = None
    hira: bool = False
    kind: str = ""
    # bus time charged to the occupancy metric, tCK when None
    busy: int | None = None
    owner: "Reservation | None" = None


@dataclass(slots=True, eq=False)
class Reservation:
    kind: ReservationKinds
    bank: int
    rank: int
    start_ps: int
    end_ps: int
    commands: list[PlannedCommand]
    bus: list[tuple[int, int]]
    acts: list[int]
    entry: RefreshRequest | None = None
    cancelled: bool = False
    seq: int = -1


def _overlaps(start: int, end: int, intervals) -> bool:
    return any(s < end and start < e for s, e in intervals)


class CommandCalendar:
    """
    Future commands the controller has committed to: bus slots, per-bank busy windows (refreshes and HiRA ops),
    per-rank REF windows and the ACT times that count against tFAW.
    """
    def __init__(self, banks: int, ranks: int, tFAW: int):
        self.tFAW = tFAW
        self._heap: list[tuple[int, int, int, PlannedCommand]] = []
        self._bus: list[tuple[int, int, int, Reservation]] = []
        self._bank_windows: list[list[Reservation]] = [[] for _ in range(banks)]
        self._rank_windows: list[list[Reservation]] = [[] for _ in range(ranks)]
        self._acts: list[list[tuple[int, int, Reservation]]] = [[] for _ in range(ranks)]
        self._seq = itertools.count()

    def add(self, reservation: Reservation) -> None:
        reservation.seq = next(self._seq)
        for start, end in reservation.bus:
            insort(self._bus, (start, end, reservation.seq, reservation), key=lambda e: e[0])
        for time in reservation.acts:
            insort(self._acts[reservation.rank], (time, reservation.seq, reservation), key=lambda e: e[0])
        for i, command in enumerate(reservation.commands):
            command.owner = reservation
            heapq.heappush(self._heap, (command.time_ps, reservation.seq, i, command))

        match reservation.kind:
            case ReservationKinds.REFRESH | ReservationKinds.OPERATION:
                self._bank_windows[reservation.bank].append(reservation)
            case ReservationKinds.REF:
                self._rank_windows[reservation.rank].append(reservation)

    def cancel(self, reservation: Reservation) -> None:
        reservation.cancelled = True
        self._bus = [e for e in self._bus if e[3] is not reservation]
        self._acts[reservation.rank] = [e for e in self._acts[reservation.rank] if e[2] is not reservation]
        for windows in (self._bank_windows[reservation.bank], self._rank_windows[reservation.rank]):
            if reservation in windows:
                windows.remove(reservation)

    def retire_act(self, reservation: Reservation, time: int) -> None:
        # executed ACTs are tracked by the chip from here on
        acts = self._acts[reservation.rank]
        for i, entry in enumerate(acts):
            if entry[2] is reservation and entry[0] == time:
                del acts[i]
                return

    def prune(self, now: int) -> None:
        cut = 0
        while cut < len(self._bus) and self._bus[cut][1] <= now:
            cut += 1
        del self._bus[:cut]
        for rank, acts in enumerate(self._acts):
            self._acts[rank] = [e for e in acts if e[0] >= now - self.tFAW]
        for windows in itertools.chain(self._bank_windows, self._rank_windows):
            windows[:] = [w for w in windows if w.end_ps > now]
        while self._heap and self._heap[0][3].owner.cancelled:
            heapq.heappop(self._heap)

    def due(self, now: int) -> list[PlannedCommand]:
        commands = []
        while self._heap and self._heap[0][0] <= now:
            command = heapq.heappop(self._heap)[3]
            if not command.owner.cancelled:
                commands.append(command)
        return commands

    def next_time(self) -> int | None:
        while self._heap and self._heap[0][3].owner.cancelled:
            heapq.heappop(self._heap)
        return self._heap[0][0] if self._heap else None

    def bus_free(self, start: int, end: int, exclude=frozenset()) -> bool:
        # intervals are disjoint, so walking back from the last one starting before end is enough
        i = bisect_left(self._bus, end, key=lambda e: e[0]) - 1
        while i >= 0 and self._bus[i][1] > start:
            if self._bus[i][3] not in exclude:
                return False
            i -= 1
        return True

    def windows(self, bank: int, rank: int) -> list[Reservation]:
        return self._bank_windows[bank] + self._rank_windows[rank]

    def bank_clear(self, bank: int, rank: int, start: int, end: int, exclude=frozenset()) -> bool:
        return not any(w.start_ps < end and start < w.end_ps
                       for w in self.windows(bank, rank) if w not in exclude)

    def next_window_start(self, bank: int, rank: int, after: int, exclude=frozenset()) -> int | None:
        starts = [w.start_ps for w in self.windows(bank, rank) if w.start_ps >= after and w not in exclude]
        return min(starts, default=None)

    def acts_between(self, rank: int, low: int, high: int, exclude=frozenset()) -> list[int]:
        return [t for t, _, owner in self._acts[rank] if low < t < high and owner not in exclude]


class _Candidate(NamedTuple):
    ready: int
    priority: int
    arrival: int
    request_id: int
    action: SchedulerActions
    bank: int
    request: DemandRequest


class _DemandPlan(NamedTuple):
    close_at: int | None
    preventive_at: int | None


class HiraMemoryController:
    """
    Memory controller of one channel: FR-FCFS demand scheduling plus refresh management in one of three modes.

    HiRA mode generates periodic refreshes per bank and hides them behind demand activations (refresh-access) or
    other refreshes (refresh-refresh). Every pending refresh owns a reservation at its latest feasible start time;
    a demand ACT is only issued when all reservations stay feasible, which guarantees every deadline. BaselineREF
    mode sends rank-level REF at each tREFI boundary, NoRefresh does neither. PARA preventive refreshes can be
    enabled in any mode.
    """
    def __init__(
            self,
            config: ExperimentConfig,
            chip: DramChip,
            *,
            channel: int = 0,
            p_th: float | None = None,
            record_events: bool = False,
            logger: SimLogger | None = None
    ):
        geometry = config.geometry
        tp = chip.timing
        sc = config.scheduler if config.scheduler.tRefSlack is not None else config.scheduler.resolved(tp)

        self.geometry = geometry
        self.timing = tp
        self.chip = chip
        self.channel = channel
        self.logger = logger
        self.mode = sc.mode
        self.strict = sc.strict
        self.slack = sc.tRefSlack
        self.scan_interval = sc.scan_interval
        self.windows = config.electrical
        self.use_hira = sc.mode is SchedulerModes.HIRA and sc.hira_parallelism
        self.ra_cfg = config.hira.copy(update={"purpose": HiraPurposes.REFRESH_ACCESS})
        self.rr_cfg = config.hira.copy(update={"purpose": HiraPurposes.REFRESH_REFRESH})
        self.hira_span = config.hira.t1 + config.hira.t2
        self.rps = geometry.rows_per_subarray
        self.banks_per_rank = geometry.banks_per_rank
        self.horizon = self.slack + 3 * tp.tRC

        banks = geometry.banks_per_channel
        ranks = geometry.ranks_per_channel
        self.ids = itertools.count()
        self.table = RefreshTable(geometry.banks_per_rank, ranks, sc.refresh_table_capacity)
        self.refptr = RefPtrTable(banks, geometry.subarrays_per_bank, self.rps)
        self.fifo = PRFIFO(banks, sc.pr_fifo_capacity)
        self.spt = SubarrayPairsTable(chip.isolation_map)
        if sc.spt_faults:
            self.corrupt_spt(sc.spt_faults)
        self.calendar = CommandCalendar(banks, ranks, tp.tFAW)

        p_th = sc.p_th if p_th is None else p_th
        self.para_enabled = sc.para_enabled and p_th is not None
        self.rng = np.random.default_rng([sc.seed, channel])
        self.preventive = PreventiveRefreshGenerator(p_th or 0.0, self.rps, geometry.rows_per_bank, tp.tRC,
                                                     self.slack, self.rng, self.ids)

        self.periodic = None
        self._plan_heap: list[tuple[int, int]] = []
        self._planned_index = [0] * banks
        self._pending_periodic: dict[tuple[int, int], Reservation] = {}
        self.window = [0] * banks
        if self.mode is SchedulerModes.HIRA:
            self.periodic = PeriodicRefreshGenerator(geometry, tp, self.slack, self.ids)
            self._plan_heap = [(self.periodic.generation_time(b, 0) - self.horizon, b) for b in range(banks)]
            heapq.heapify(self._plan_heap)

        self._ref_heap: list[tuple[int, int]] = []
        self._ref_index = [1] * ranks
        if self.mode is SchedulerModes.BASELINE_REF:
            self._ref_heap = [(self._ref_time(r, 1) - self.horizon, r) for r in range(ranks)]
            heapq.heapify(self._ref_heap)

        self.queues: list[list[DemandRequest]] = [[] for _ in range(banks)]
        self.open_row: list[int | None] = [None] * banks
        self.open_at = [0] * banks
        self.close_res: list[Reservation | None] = [None] * banks
        self.bus_free_at = 0
        self.col_free_at = 0
        self.now = 0
        self._next_scan = 0
        self._next_demand: int | None = None
        self._dirty = False
        self._completions: list[tuple[int, DemandRequest]] = []

        self.events: list[tuple] | None = [] if record_events else None
        self.stats: Counter = Counter()
        self.commands: Counter = Counter()

    # -- bookkeeping --------------------------------------------------------------------------------------------

    def rank_of(self, bank: int) -> int:
        return bank // self.banks_per_rank

    def global_bank(self, bank: int) -> int:
        return self.channel * self.geometry.banks_per_channel + bank

    def corrupt_spt(self, pairs: list[tuple[int, int]]) -> None:
        """Fault injection: declare the given subarray pairs isolated although the chip says otherwise."""
        self.spt.corrupt(pairs)

    def pending_requests(self) -> int:
        return sum(len(q) for q in self.queues)

    def _record(self, time: int, event: LogEvents, bank: int, row_a: int | None, row_b: int | None,
                kind: str) -> None:
        if self.events is not None:
            self.events.append((time, event.value, self.global_bank(bank), row_a, row_b, kind))

    def _log(self, event_type: SimEventTypes, **kwargs) -> None:
        if self.logger is not None:
            self.logger.log(event_type, channel=self.channel, **kwargs)

    def _abort(self, kind: str, message: str) -> None:
        if self.strict:
            raise InvariantViolationError(kind, message)

    def _check_result(self, bank: int, result: CommandResult, time: int) -> None:
        if result.flipped:
            self.stats["rowhammer_flips"] += len(result.flipped)
        damaged = result.corrupted + result.partial
        if damaged:
            self.stats["corruption_events"] += len(damaged)
            self._log(SimEventTypes.CORRUPTION, bank=bank, rows=damaged, time_ps=time)
            self._abort("corruption", f"bank {bank} rows {damaged} lost their data at {time} ps")

    def _check_deadline(self, entry: RefreshRequest, time: int) -> None:
        if time > entry.deadline:
            self.stats["deadline_violations"] += 1
            self._log(SimEventTypes.DEADLINE_VIOLATION, kind=entry.kind.value, bank=entry.bank, time_ps=time,
                      deadline_ps=entry.deadline)
            self._abort("deadline", f"{entry.kind.value} refresh of bank {entry.bank} performed at {time} ps, "
                                    f"deadline {entry.deadline} ps")

    def _check_retention(self, bank: int, time: int) -> None:
        expired = self.chip.check_retention(bank, time)
        if expired:
            self.stats["retention_expiries"] += len(expired)
            self._log(SimEventTypes.RETENTION_EXPIRED, bank=bank, rows=expired, time_ps=time)
            self._abort("retention", f"bank {bank}: {len(expired)} rows not restored within tREFW at {time} ps")

    def _issue(self, bank: int, cmd: CommandTypes, time: int, *, row: int | None = None, column: int | None = None,
               hira: bool = False, kind: str = "demand", busy: int | None = None,
               row_b: int | None = None) -> CommandResult:
        result = self.chip.issue_command(bank, cmd, time, row=row, column=column, hira=hira)
        self.commands[cmd.value] += 1
        self.stats["bus_busy_ps"] += self.timing.tCK if busy is None else busy
        self.bus_free_at = max(self.bus_free_at, time + self.timing.tCK)
        self._record(time, LogEvents(cmd.value), bank, row, row_b, kind)
        self._check_result(bank, result, time)
        return result

    def _refresh_performed(self, entry: RefreshRequest) -> None:
        if entry.kind is RefreshKinds.PERIODIC:
            self.stats["periodic_refreshes"] += 1
        else:
            self.stats["preventive_refreshes"] += 1

    # -- reservations -------------------------------------------------------------------------------------------

    @staticmethod
    def _descending(high: int, low: int, step: int):
        t = high
        while t >= low:
            yield t
            t -= step
        if high >= low and t + step != low:
            yield low

    def _tfaw_ok(self, rank: int, new_acts, exclude=frozenset()) -> bool:
        if not new_acts:
            return True
        tFAW = self.timing.tFAW
        low, high = min(new_acts) - tFAW, max(new_acts) + tFAW
        times = [t for t in self.chip.rank_acts[rank] if t > low]
        times += self.calendar.acts_between(rank, low, high, exclude)
        times += list(new_acts)
        times.sort()
        return all(times[i + 4] - times[i] >= tFAW for i in range(len(times) - 4))

    def _find_close_slot(self, low: int, high: int, exclude, extra_bus) -> int | None:
        tCK = self.timing.tCK
        low = max(low, self.now, self.bus_free_at)
        for c in self._descending(high, low, tCK):
            if self.calendar.bus_free(c, c + tCK, exclude) and not _overlaps(c, c + tCK, extra_bus):
                return c
        return None

    def _refresh_slot_free(self, bank: int, rank: int, start: int, exclude, extra_acts, extra_bus) -> bool:
        tp = self.timing
        if start < max(self.chip.earliest_activate(bank), self.now, self.bus_free_at):
            return False
        if not self.calendar.bank_clear(bank, rank, start, start + tp.tRC, exclude):
            return False
        for s in (start, start + tp.tRAS):
            if not self.calendar.bus_free(s, s + tp.tCK, exclude) or _overlaps(s, s + tp.tCK, extra_bus):
                return False
        return self._tfaw_ok(rank, list(extra_acts) + [start], exclude)

    def _find_refresh_slot(self, bank: int, low: int, high: int, *, exclude=frozenset(), extra_acts=(),
                           extra_bus=(), open_from: int | None = None, current_close: Reservation | None = None,
                           bound: int | None = None, latest: bool = True) -> tuple[int, int | None] | None:
        """
        A start time for a standalone refresh (ACT, PRE after tRAS) in [low, high], latest first. When a row is open
        since open_from, also returns a new closing PRE time for it if current_close is missing or too late.
        """
        tp = self.timing
        rank = self.rank_of(bank)
        if latest:
            times = self._descending(high, low, tp.tCK)
        else:
            times = range(low, high + 1, tp.tCK)

        for start in times:
            if not self._refresh_slot_free(bank, rank, start, exclude, extra_acts, extra_bus):
                continue
            if open_from is None:
                return start, None
            limit = (min(start, bound) if bound is not None else start) - tp.tRP
            if current_close is not None and current_close.start_ps <= limit:
                return start, None
            skip = exclude | {current_close} if current_close is not None else exclude
            close = self._find_close_slot(open_from + tp.tRAS, limit, skip,
                                          list(extra_bus) + [(start, start + tp.tCK),
                                                             (start + tp.tRAS, start + tp.tRAS + tp.tCK)])
            if close is not None:
                return start, close
        return None

    def _reserve_close(self, bank: int, time: int) -> None:
        old = self.close_res[bank]
        if old is not None:
            self.calendar.cancel(old)
        reservation = Reservation(ReservationKinds.CLOSE, bank, self.rank_of(bank), time, time + self.timing.tCK,
                                  [PlannedCommand(time, CommandTypes.PRE, kind="close")],
                                  [(time, time + self.timing.tCK)], [])
        self.calendar.add(reservation)
        self.close_res[bank] = reservation

    def _reserve_refresh(self, bank: int, start: int, entry: RefreshRequest | None) -> Reservation:
        tp = self.timing
        reservation = Reservation(
            ReservationKinds.REFRESH, bank, self.rank_of(bank), start, start + tp.tRC,
            [PlannedCommand(start, CommandTypes.ACT), PlannedCommand(start + tp.tRAS, CommandTypes.PRE)],
            [(start, start + tp.tCK), (start + tp.tRAS, start + tp.tRAS + tp.tCK)],
            [start],
            entry=entry,
        )
        if entry is not None:
            entry.reservation = reservation
        self.calendar.add(reservation)
        return reservation

    # -- periodic and REF planning ------------------------------------------------------------------------------

    def _ref_time(self, rank: int, index: int) -> int:
        return index * self.timing.tREFI + rank * self.timing.tCK

    def _place_periodic(self, bank: int, generation: int) -> None:
        open_from = self.open_at[bank] if self.open_row[bank] is not None else None
        slot = self._find_refresh_slot(bank, generation, generation + self.slack, open_from=open_from,
                                       current_close=self.close_res[bank])
        if slot is None:
            # nothing fits before the deadline; the late refresh is reported when it is performed
            slot = self._find_refresh_slot(bank, generation + self.slack + 1,
                                           generation + self.slack + 8 * self.timing.tRC, open_from=open_from,
                                           current_close=self.close_res[bank], latest=False)
        if slot is None:
            raise InvariantViolationError("deadline", f"no refresh slot for bank {bank} near {generation} ps")

        start, close = slot
        if close is not None:
            self._reserve_close(bank, close)
        self._pending_periodic[(bank, generation)] = self._reserve_refresh(bank, start, None)

    def _place_ref(self, rank: int, target: int) -> None:
        tp = self.timing
        first = rank * self.banks_per_rank
        banks = range(first, first + self.banks_per_rank)
        trfc = self.chip.trfc

        time = target
        while True:
            closes = {}
            fits = self.calendar.bus_free(time, time + tp.tCK) \
                and all(self.calendar.bank_clear(b, rank, time, time + trfc) for b in banks)
            if fits:
                taken = [(time, time + tp.tCK)]
                for b in banks:
                    if self.open_row[b] is None:
                        continue
                    current = self.close_res[b]
                    if current is not None and current.start_ps <= time - tp.tRP:
                        continue
                    skip = {current} if current is not None else frozenset()
                    close = self._find_close_slot(self.open_at[b] + tp.tRAS, time - tp.tRP, skip, taken)
                    if close is None:
                        fits = False
                        break
                    closes[b] = close
                    taken.append((close, close + tp.tCK))
            if fits:
                break
            time += tp.tCK

        for b, close in closes.items():
            self._reserve_close(b, close)
        self.calendar.add(Reservation(ReservationKinds.REF, first, rank, time, time + trfc,
                                      [PlannedCommand(time, CommandTypes.REF, kind="rank")],
                                      [(time, time + tp.tCK)], []))

    def _plan_refreshes(self, now: int) -> None:
        while self._plan_heap and self._plan_heap[0][0] <= now:
            _, bank = heapq.heappop(self._plan_heap)
            index = self._planned_index[bank]
            self._place_periodic(bank, self.periodic.generation_time(bank, index))
            self._planned_index[bank] = index + 1
            heapq.heappush(self._plan_heap, (self.periodic.generation_time(bank, index + 1) - self.horizon, bank))

        while self._ref_heap and self._ref_heap[0][0] <= now:
            _, rank = heapq.heappop(self._ref_heap)
            index = self._ref_index[rank]
            self._place_ref(rank, self._ref_time(rank, index))
            self._ref_index[rank] = index + 1
            heapq.heappush(self._ref_heap, (self._ref_time(rank, index + 1) - self.horizon, rank))

    def generate_periodic(self, now: int) -> list[RefreshRequest]:
        if self.periodic is None:
            return []

        generated = self.periodic.generate_periodic(now)
        for entry in generated:
            bank = entry.bank
            if entry.window > self.window[bank]:
                self._rollover(bank, entry.window, entry.generated_ps)

            reservation = self._pending_periodic.pop((bank, entry.generated_ps))
            reservation.entry = entry
            entry.reservation = reservation
            try:
                self.table.append_request(entry)
            except RefreshTableFullError as e:
                raise InvariantViolationError("capacity", str(e)) from e
        return generated

    def _rollover(self, bank: int, window: int, time: int) -> None:
        self._check_retention(bank, time)
        self.refptr.reset_window(bank)
        self.window[bank] = window
        self._log(SimEventTypes.WINDOW_ROLLOVER, bank=bank, window=window, time_ps=time)

    # -- refresh execution --------------------------------------------------------------------------------------

    def _refresh_row(self, bank: int, entry: RefreshRequest) -> int:
        if entry.kind is RefreshKinds.PREVENTIVE:
            return entry.victim_row
        subarray = self.refptr.select(bank)
        if subarray is None:
            raise InvariantViolationError("refresh", f"bank {bank} has more periodic refreshes than rows in window "
                                                     f"{self.window[bank]}")
        return self.refptr.peek_row(bank, subarray)

    def _consume(self, entry: RefreshRequest, row: int) -> None:
        self.table.remove_request(entry)
        if entry.kind is RefreshKinds.PREVENTIVE:
            self.fifo.pop(entry.bank)
        else:
            self.refptr.advance(entry.bank, row // self.rps)
        self._refresh_performed(entry)

    def _rr_fits(self, bank: int, time: int, exclude) -> bool:
        tp = self.timing
        rank = self.rank_of(bank)
        span = self.hira_span
        close = time + span + tp.tRAS
        return time >= self.chip.earliest_activate(bank) \
            and self.calendar.bank_clear(bank, rank, time, time + span + tp.tRC, exclude) \
            and self.calendar.bus_free(time, time + span + tp.tCK, exclude) \
            and self.calendar.bus_free(close, close + tp.tCK, exclude) \
            and self._tfaw_ok(rank, [time, time + span], exclude)

    def _find_rr_partner(self, bank: int, first: RefreshRequest, row_a: int, time: int,
                         exclude) -> tuple[RefreshRequest, int, frozenset] | None:
        subarray_a = row_a // self.rps
        queue = self.fifo.queues[bank]
        # a preventive partner has to be the next victim in FIFO order
        if queue and queue[0] is first:
            next_victim = queue[1] if len(queue) > 1 else None
        else:
            next_victim = queue[0] if queue else None

        for partner in self.table.waiting_requests[bank]:
            if partner is first or partner.generated_ps > time:
                continue
            if partner.kind is RefreshKinds.PREVENTIVE:
                if partner is not next_victim:
                    continue
                row_b = partner.victim_row
            else:
                subarray = self.refptr.select(bank, self.spt.partners(subarray_a))
                if subarray is None:
                    continue
                row_b = self.refptr.peek_row(bank, subarray)
            if validate_hira(self.rr_cfg, self.spt, (bank, row_a), (bank, row_b), self.windows, self.rps):
                continue
            if time + self.hira_span > partner.deadline:
                continue
            both = exclude | {partner.reservation} if partner.reservation is not None else exclude
            if self._rr_fits(bank, time, both):
                return partner, row_b, both
        return None

    def _perform_refresh_refresh(self, bank: int, first: RefreshRequest, row_a: int, partner: RefreshRequest,
                                 row_b: int, time: int) -> None:
        tp = self.timing
        plan = HiraPlan.for_refresh_refresh(self.rr_cfg, tp, bank, row_a, row_b)
        for entry in (first, partner):
            if entry.reservation is not None:
                self.calendar.cancel(entry.reservation)
        self._check_deadline(first, time)
        self._check_deadline(partner, time + plan.second_act_offset)
        self._consume(first, row_a)
        self._consume(partner, row_b)

        self._record(time, LogEvents.HIRA_RR, bank, row_a, row_b, first.kind.value)
        self._issue(bank, CommandTypes.ACT, time, row=row_a, kind=first.kind.value, busy=plan.second_act_offset + tp.tCK)
        _, early_pre, second_act = plan.steps
        close = time + plan.earliest_close_ps
        commands = [
            PlannedCommand(time + early_pre.offset_ps, CommandTypes.PRE, hira=True, kind=first.kind.value, busy=0),
            PlannedCommand(time + second_act.offset_ps, CommandTypes.ACT, row=row_b, hira=True,
                           kind=partner.kind.value, busy=0),
            PlannedCommand(close, CommandTypes.PRE, kind=partner.kind.value),
        ]
        self.calendar.add(Reservation(ReservationKinds.OPERATION, bank, self.rank_of(bank), time,
                                      time + plan.second_act_offset + tp.tRC, commands,
                                      [(time, time + plan.second_act_offset + tp.tCK), (close, close + tp.tCK)],
                                      [time + plan.second_act_offset]))
        self.stats["hira_refresh_refresh"] += 1

    def _issue_refresh(self, bank: int, entry: RefreshRequest, time: int, reserved: Reservation | None) -> bool:
        """
        Perform entry at time: paired with a second refresh when possible, standalone otherwise. reserved is the
        entry's own reservation when it is executing at its reserved start, None for an early issue.
        """
        tp = self.timing
        row_a = self._refresh_row(bank, entry)
        exclude = frozenset({entry.reservation}) if entry.reservation is not None else frozenset()

        if self.use_hira:
            found = self._find_rr_partner(bank, entry, row_a, time, exclude)
            if found is not None:
                partner, row_b, _ = found
                self._perform_refresh_refresh(bank, entry, row_a, partner, row_b, time)
                return True

        if reserved is None:
            rank = self.rank_of(bank)
            if not self._refresh_slot_free(bank, rank, time, exclude, (), ()):
                return False
            if entry.reservation is not None:
                self.calendar.cancel(entry.reservation)
            reserved = Reservation(ReservationKinds.REFRESH, bank, rank, time, time + tp.tRC,
                                   [PlannedCommand(time + tp.tRAS, CommandTypes.PRE)],
                                   [(time, time + tp.tCK), (time + tp.tRAS, time + tp.tRAS + tp.tCK)], [],
                                   entry=entry)
            self.calendar.add(reserved)

        self._check_deadline(entry, time)
        self._consume(entry, row_a)
        for command in reserved.commands:
            command.kind = entry.kind.value
        self._record(time, LogEvents.REFRESH_STANDALONE, bank, row_a, None, entry.kind.value)
        self._issue(bank, CommandTypes.ACT, time, row=row_a, kind=entry.kind.value)
        self.stats["standalone_refreshes"] += 1
        return True

    def _perform_reserved_refresh(self, reservation: Reservation, now: int) -> None:
        entry = reservation.entry
        if entry is None:
            raise InvariantViolationError("refresh", f"reservation at {reservation.start_ps} ps has no request")

        bank = reservation.bank
        if entry.kind is RefreshKinds.PREVENTIVE:
            head = self.fifo.head(bank)
            if head is not entry:
                # the oldest victim takes this slot, entry moves to the head's later one
                other = head.reservation
                head.reservation, entry.reservation = reservation, other
                reservation.entry, other.entry = head, entry
                entry = head
        self._issue_refresh(bank, entry, now, reservation)

    def _perform_ref(self, reservation: Reservation, now: int) -> None:
        result = self._issue(reservation.bank, CommandTypes.REF, now, kind="rank")
        self.stats["ref_commands"] += 1
        for bank in result.ref_wrapped:
            self._check_retention(bank, now)

    def _execute_planned(self, command: PlannedCommand, now: int) -> None:
        reservation = command.owner
        bank = reservation.bank
        match reservation.kind:
            case ReservationKinds.REFRESH if command.cmd is CommandTypes.ACT:
                self.calendar.retire_act(reservation, command.time_ps)
                self._perform_reserved_refresh(reservation, now)
            case ReservationKinds.REFRESH | ReservationKinds.OPERATION:
                if command.cmd is CommandTypes.ACT:
                    self.calendar.retire_act(reservation, command.time_ps)
                self._issue(bank, command.cmd, now, row=command.row, hira=command.hira, kind=command.kind,
                            busy=command.busy)
            case ReservationKinds.CLOSE:
                self._issue(bank, CommandTypes.PRE, now, kind="close")
                self.open_row[bank] = None
                self.close_res[bank] = None
            case ReservationKinds.REF:
                self._perform_ref(reservation, now)
            case _:
                raise ValueError(f"Unrecognised reservation kind {reservation.kind}.")

    # -- Concurrent Refresh Finder ------------------------------------------------------------------------------

    def find_concurrent_refresh_case1(self, bank: int, row: int, time: int) -> tuple[RefreshRequest, HiraPlan] | None:
        """
        Pending refresh of bank that can be hidden behind activating row: the earliest-deadline entry whose refresh
        row sits in a subarray isolated from row's. Periodic entries take the next row of the least-refreshed such
        subarray, preventive entries only qualify at the head of the PR-FIFO.
        """
        subarray_b = row // self.rps
        head = self.fifo.head(bank)
        for entry in self.table.waiting_requests[bank]:
            if entry.generated_ps > time:
                continue
            if entry.kind is RefreshKinds.PREVENTIVE:
                if entry is not head:
                    continue
                row_a = entry.victim_row
            else:
                subarray = self.refptr.select(bank, self.spt.partners(subarray_b))
                if subarray is None:
                    continue
                row_a = self.refptr.peek_row(bank, subarray)
            if validate_hira(self.ra_cfg, self.spt, (bank, row_a), (bank, row), self.windows, self.rps):
                continue
            return entry, HiraPlan.for_refresh_access(self.ra_cfg, self.timing, bank, row_a, row)
        return None

    def deadline_scan_case2(self, now: int) -> bool:
        """Issue, ahead of its reservation, one refresh whose reserved start is at most tRC away."""
        tp = self.timing
        for bank, entries in enumerate(self.table.waiting_requests):
            if not entries or self.open_row[bank] is not None:
                continue
            if self.chip.phase(bank, now) is not BankPhases.PRECHARGED or self.chip.earliest_activate(bank) > now:
                continue
            head = self.fifo.head(bank)
            for entry in list(entries):
                reservation = entry.reservation
                if reservation is None or entry.generated_ps > now:
                    continue
                if not now < reservation.start_ps <= now + tp.tRC:
                    continue
                if entry.kind is RefreshKinds.PREVENTIVE and entry is not head:
                    continue
                if self._issue_refresh(bank, entry, now, None):
                    return True
        return False

    # -- demand scheduling --------------------------------------------------------------------------------------

    def enqueue(self, request: DemandRequest) -> None:
        self.queues[request.bank].append(request)
        self._dirty = True

    def _draw_victim(self, request: DemandRequest) -> int | None:
        if not self.para_enabled:
            return None
        if not request.para_drawn:
            request.para_victim = self.preventive.draw_victim(request.row)
            request.para_drawn = True
        return request.para_victim

    def _plan_demand_act(self, bank: int, row: int, now: int, activation: int, victim: int | None,
                         exclude=frozenset()) -> _DemandPlan | None:
        """
        Check that activating row at activation (now for a plain ACT, later for the second ACT of a HiRA op) keeps
        every reservation feasible, and find the closing PRE and the preventive refresh slot it needs.
        """
        tp = self.timing
        rank = self.rank_of(bank)
        acts = [now] if activation == now else [now, activation]
        bus = [(now, activation + tp.tCK)]

        if not self.calendar.bank_clear(bank, rank, now, activation + tp.tRC, exclude):
            return None
        if not self.calendar.bus_free(now, activation + tp.tCK, exclude):
            return None
        next_window = self.calendar.next_window_start(bank, rank, now, exclude)

        if victim is not None:
            low = activation + tp.tRC
            slot = self._find_refresh_slot(bank, low, low + self.slack, exclude=exclude, extra_acts=acts,
                                           extra_bus=bus, open_from=activation, bound=next_window)
            if slot is None:
                return None
            return _DemandPlan(slot[1], slot[0])

        if not self._tfaw_ok(rank, acts, exclude):
            return None
        close = None
        if next_window is not None:
            close = self._find_close_slot(activation + tp.tRAS, next_window - tp.tRP, exclude, bus)
            if close is None:
                return None
        return _DemandPlan(close, None)

    def _after_open(self, bank: int, request: DemandRequest, plan: _DemandPlan, activation: int) -> None:
        request.activated = True
        self.stats["tfaw_stall_ps"] += request.tfaw_wait
        if plan.close_at is not None:
            self._reserve_close(bank, plan.close_at)
        if plan.preventive_at is not None:
            entry = self.preventive.make_request(bank, request.para_victim, activation)
            self._reserve_refresh(bank, plan.preventive_at, entry)
            self.table.append_request(entry)
            self.fifo.push(entry)
            self.stats["preventive_generated"] += 1
        request.para_drawn = False
        request.para_victim = None

    def _commit_refresh_access(self, bank: int, request: DemandRequest, entry: RefreshRequest, plan: HiraPlan,
                               demand: _DemandPlan, now: int) -> None:
        tp = self.timing
        if entry.reservation is not None:
            self.calendar.cancel(entry.reservation)
        self._check_deadline(entry, now)
        self._consume(entry, plan.row_a)

        self._record(now, LogEvents.HIRA_RA, bank, plan.row_a, plan.row_b, entry.kind.value)
        self._issue(bank, CommandTypes.ACT, now, row=plan.row_a, kind=entry.kind.value,
                    busy=plan.second_act_offset + tp.tCK)
        _, early_pre, second_act = plan.steps
        commands = [
            PlannedCommand(now + early_pre.offset_ps, CommandTypes.PRE, hira=True, kind=entry.kind.value, busy=0),
            PlannedCommand(now + second_act.offset_ps, CommandTypes.ACT, row=plan.row_b, hira=True, kind="demand",
                           busy=0),
        ]
        activation = now + plan.second_act_offset
        self.calendar.add(Reservation(ReservationKinds.OPERATION, bank, self.rank_of(bank), now, activation,
                                      commands, [(now, activation + tp.tCK)], [activation]))
        self.open_row[bank] = plan.row_b
        self.open_at[bank] = activation
        self.stats["hira_refresh_access"] += 1
        self._after_open(bank, request, demand, activation)

    def _try_activate(self, bank: int, request: DemandRequest, now: int) -> bool:
        rank = self.rank_of(bank)
        if self.para_enabled and (self.fifo.is_full(bank) or self.table.is_full(rank)):
            self.stats["backpressure_stalls"] += 1
            if not request.backpressured:
                request.backpressured = True
                self._log(SimEventTypes.BACKPRESSURE, bank=bank, time_ps=now)
            return False

        victim = self._draw_victim(request)
        if self.use_hira and self.table.waiting_requests[bank]:
            found = self.find_concurrent_refresh_case1(bank, request.row, now)
            if found is not None:
                entry, plan = found
                exclude = frozenset({entry.reservation}) if entry.reservation is not None else frozenset()
                demand = self._plan_demand_act(bank, request.row, now, now + plan.second_act_offset, victim, exclude)
                if demand is not None:
                    self._commit_refresh_access(bank, request, entry, plan, demand, now)
                    return True

        demand = self._plan_demand_act(bank, request.row, now, now, victim)
        if demand is None:
            return False
        self._issue(bank, CommandTypes.ACT, now, row=request.row)
        self.open_row[bank] = request.row
        self.open_at[bank] = now
        self._after_open(bank, request, demand, now)
        return True

    def _serve(self, request: DemandRequest, now: int) -> None:
        tp = self.timing
        cmd = CommandTypes.RD if request.op is RequestOps.READ else CommandTypes.WR
        self._issue(request.bank, cmd, now, row=request.row, column=request.column)
        self.col_free_at = now + tp.tBL
        self.queues[request.bank].remove(request)
        self.stats["served"] += 1
        if not request.activated:
            self.stats["row_hits"] += 1
        self._completions.append((now + tp.tCL + tp.tBL, request))

    def _close_row(self, bank: int, now: int) -> None:
        close = self.close_res[bank]
        if close is not None:
            self.calendar.cancel(close)
            self.close_res[bank] = None
        self._issue(bank, CommandTypes.PRE, now)
        self.open_row[bank] = None

    def _activation_ready(self, bank: int, now: int) -> int:
        tp = self.timing
        rank = self.rank_of(bank)
        if self.chip.banks[bank].phase is BankPhases.PRECHARGED:
            ready = max(now, self.chip.earliest_activate(bank))
        else:
            ready = now + tp.tCK
        # skip windows a demand ACT cannot overlap; a refresh not yet started may still be absorbed by Case 1
        while True:
            blocking = [w.end_ps for w in self.calendar.windows(bank, rank)
                        if w.start_ps < ready + tp.tRC and ready < w.end_ps
                        and not (self.use_hira and w.kind is ReservationKinds.REFRESH and w.entry is not None
                                 and w.entry.generated_ps <= ready < w.start_ps)]
            if not blocking:
                return ready
            ready = max(blocking)

    def _bank_candidates(self, bank: int, now: int) -> _Candidate | None:
        tp = self.timing
        queue = self.queues[bank]
        open_row = self.open_row[bank]

        if open_row is not None:
            hit = next((r for r in queue if r.row == open_row), None)
            if hit is not None:
                ready = max(self.open_at[bank] + tp.tRCD, self.col_free_at, now)
                close = self.close_res[bank]
                if close is not None and ready + tp.tCK > close.start_ps:
                    return None
                return _Candidate(ready, 0, hit.arrival_ps, hit.request_id, SchedulerActions.SERVE, bank, hit)
            oldest = queue[0]
            ready = max(self.open_at[bank] + tp.tRAS, now)
            return _Candidate(ready, 1, oldest.arrival_ps, oldest.request_id, SchedulerActions.PRECHARGE, bank,
                              oldest)

        oldest = queue[0]
        base = self._activation_ready(bank, now)
        ready = check_tfaw(self.chip.rank_acts[self.rank_of(bank)], base, tp.tFAW)
        if ready > base:
            oldest.tfaw_wait = max(oldest.tfaw_wait, ready - base)
        return _Candidate(ready, 1, oldest.arrival_ps, oldest.request_id, SchedulerActions.ACTIVATE, bank, oldest)

    def schedule_requests(self, now: int) -> bool:
        """One FR-FCFS decision: oldest row hit first, then the oldest request of any bank."""
        ready = []
        for bank, queue in enumerate(self.queues):
            if queue:
                candidate = self._bank_candidates(bank, now)
                if candidate is not None and candidate.ready <= now:
                    ready.append(candidate)
        ready.sort(key=lambda c: (c.priority, c.arrival, c.request_id))

        for candidate in ready:
            match candidate.action:
                case SchedulerActions.SERVE:
                    self._serve(candidate.request, now)
                    return True
                case SchedulerActions.PRECHARGE:
                    self._close_row(candidate.bank, now)
                    return True
                case SchedulerActions.ACTIVATE:
                    if self._try_activate(candidate.bank, candidate.request, now):
                        return True
        return False

    def _compute_next_demand(self, now: int) -> int | None:
        best = None
        for bank, queue in enumerate(self.queues):
            if not queue:
                continue
            candidate = self._bank_candidates(bank, now)
            if candidate is None:
                continue
            time = candidate.ready if candidate.ready > now else now + self.timing.tCK
            best = time if best is None else min(best, time)
        return None if best is None else max(best, self.bus_free_at)

    # -- main loop ----------------------------------------------------------------------------------------------

    def _bus_open(self, now: int) -> bool:
        return now >= self.bus_free_at and self.calendar.bus_free(now, now + self.timing.tCK)

    def next_event_time(self) -> int | None:
        candidates = [self.calendar.next_time()]
        if self._plan_heap:
            candidates.append(self._plan_heap[0][0])
        if self._ref_heap:
            candidates.append(self._ref_heap[0][0])
        if self.periodic is not None:
            candidates.append(self.periodic.next_generation_time())
            if len(self.table):
                candidates.append(max(self._next_scan, self.now + self.timing.tCK))
        candidates.append(self.now if self._dirty else self._next_demand)
        times = [t for t in candidates if t is not None]
        return max(self.now, min(times)) if times else None

    def step(self, now: int) -> list[tuple[int, DemandRequest]]:
        """Advance to now. Returns (completion time, request) for every column command issued."""
        if now < self.now:
            raise ValueError(f"controller time cannot go back from {self.now} ps to {now} ps.")
        self.now = now
        self.calendar.prune(now)
        self._plan_refreshes(now)
        self.generate_periodic(now)
        for command in self.calendar.due(now):
            self._execute_planned(command, now)

        if self._bus_open(now):
            issued = False
            if self.periodic is not None and now >= self._next_scan:
                self._next_scan = now - now % self.scan_interval + self.scan_interval
                issued = self.deadline_scan_case2(now)
            if not issued:
                self.schedule_requests(now)

        self._dirty = False
        self._next_demand = self._compute_next_demand(now)
        done, self._completions = self._completions, []
        return done

    def counters(self) -> dict:
        stats = self.stats
        return {
            "hira_refresh_access": stats["hira_refresh_access"],
            "hira_refresh_refresh": stats["hira_refresh_refresh"],
            "standalone_refreshes": stats["standalone_refreshes"],
            "periodic_refreshes": stats["periodic_refreshes"],
            "preventive_refreshes": stats["preventive_refreshes"],
            "ref_commands": stats["ref_commands"],
            "deadline_violations": stats["deadline_violations"],
            "retention_expiries": stats["retention_expiries"],
            "corruption_events": stats["corruption_events"],
            "rowhammer_flips": stats["rowhammer_flips"],
            "backpressure_stalls": stats["backpressure_stalls"],
            "refresh_table_peak": max(self.table.peak_occupancy),
            "tfaw_stall_ps": stats["tfaw_stall_ps"],
            "bus_busy_ps": stats["bus_busy_ps"],
            "served": stats["served"],
            "row_hits": stats["row_hits"],
        }
