import csv
import heapq
from dataclasses import dataclass, field
from pathlib import Path
from typing import TextIO
from src.shared_enum_vars import SimEventTypes
from src.schema import ExperimentConfig, MetricsReport, TraceRequest
from src.address_mapping import decode_address
from src.isolation_map import IsolationMap
from src.dram_chip import DramChip
from src.scheduler import HiraMemoryController, DemandRequest, EVENT_LOG_HEADER
from src.traces import generate_trace, split_by_source
from src.sim_logger import SimLogger


EVENT_LOG_TITLE = "# hira-sim event-log v1"
METRICS_TITLE = "# hira-sim metrics v1"


@dataclass(slots=True)
class SourceState:
    """A closed-loop requester: replays its trace requests with at most max_outstanding in flight."""
    source: int
    requests: list[TraceRequest]
    position: int = 0
    outstanding: int = 0
    ready_at: int = 0
    served: int = 0
    latency_sum: int = 0
    last_completion: int = 0
    issue_times: dict[int, int] = field(default_factory=dict)

    @property
    def exhausted(self) -> bool:
        return self.position >= len(self.requests)


class MemorySystem:
    """
    Every channel of the configured geometry, each with its own chip and controller, driven by the trace's sources.
    Time advances from event to event; requests are issued `gap` controller cycles after the source's previous one
    or as soon as an outstanding slot frees up.
    """
    def __init__(
            self,
            config: ExperimentConfig,
            *,
            trace: list[TraceRequest] | None = None,
            p_th: float | None = None,
            record_events: bool | None = None,
            logger: SimLogger | None = None
    ):
        self.config = config
        self.geometry = config.geometry
        self.timing = config.timing
        self.logger = logger
        self.duration = config.simulation.duration_ps
        self.max_outstanding = config.simulation.max_outstanding
        record_events = config.simulation.event_log if record_events is None else record_events

        isolation_map = IsolationMap.from_config(config.isolation, self.geometry.subarrays_per_bank)
        self.chips = [
            DramChip(self.geometry, self.timing, config.electrical, isolation_map, n_rh_true=config.chip.n_rh_true,
                     use_scaled_trfc=config.chip.scaled_trfc)
            for _ in range(self.geometry.channels)
        ]
        self.controllers = [
            HiraMemoryController(config, chip, channel=channel, p_th=p_th, record_events=record_events,
                                 logger=logger)
            for channel, chip in enumerate(self.chips)
        ]

        trace = generate_trace(config.trace, self.geometry) if trace is None else trace
        self.sources = [SourceState(source, requests) for source, requests in split_by_source(trace).items()]
        self._source_index = {state.source: i for i, state in enumerate(self.sources)}
        self.now = 0
        self._completions: list[tuple[int, int, DemandRequest]] = []
        self._request_ids = 0

    def _issue_ready(self, now: int) -> None:
        tCK = self.timing.tCK
        for state in self.sources:
            while not state.exhausted and state.outstanding < self.max_outstanding and state.ready_at <= now:
                request = state.requests[state.position]
                decoded = decode_address(request.address, self.geometry)
                demand = DemandRequest(
                    request_id=self._request_ids,
                    source=state.source,
                    op=request.op,
                    bank=decoded.bank_in_channel(self.geometry),
                    row=decoded.row,
                    column=decoded.column,
                    arrival_ps=now,
                )
                self._request_ids += 1
                self.controllers[decoded.channel].enqueue(demand)
                state.issue_times[demand.request_id] = now
                state.position += 1
                state.outstanding += 1
                if not state.exhausted:
                    state.ready_at = now + state.requests[state.position].gap * tCK

    def _retire(self, now: int) -> None:
        while self._completions and self._completions[0][0] <= now:
            time, _, request = heapq.heappop(self._completions)
            state = self.sources[self._source_index[request.source]]
            state.outstanding -= 1
            state.served += 1
            state.latency_sum += time - state.issue_times.pop(request.request_id)
            state.last_completion = time

    def _next_time(self) -> int | None:
        times = [c.next_event_time() for c in self.controllers]
        if self._completions:
            times.append(self._completions[0][0])
        for state in self.sources:
            if not state.exhausted and state.outstanding < self.max_outstanding:
                times.append(max(state.ready_at, self.now))
        times = [t for t in times if t is not None]
        return min(times) if times else None

    def _drained(self) -> bool:
        return all(state.exhausted and state.outstanding == 0 for state in self.sources)

    def run(self) -> MetricsReport:
        if self.logger is not None:
            self.logger.log(SimEventTypes.SIMULATION_STARTED, mode=self.config.scheduler.mode.value,
                            duration_ps=self.duration, sources=len(self.sources))

        while not self._drained():
            now = self._next_time()
            if now is None or now >= self.duration:
                break
            self.now = now
            self._retire(now)
            self._issue_ready(now)
            for controller in self.controllers:
                due = controller.next_event_time()
                if due is not None and due <= now:
                    for completion, request in controller.step(now):
                        heapq.heappush(self._completions, (completion, request.request_id, request))

        if self._drained():
            end = max((state.last_completion for state in self.sources), default=0)
        else:
            end = self.duration

        report = self.metrics(end)
        if self.logger is not None:
            self.logger.log(SimEventTypes.FINISHED, served=sum(report.requests_served), cycles=report.cycles,
                            deadline_violations=report.deadline_violations)
        return report

    def _source_throughput(self, state: SourceState, end: int) -> float:
        # a source that finished early is measured over its own active time
        active = state.last_completion if state.exhausted and state.outstanding == 0 else end
        cycles = active // self.timing.tCK
        return state.served / cycles if cycles else 0.0

    def metrics(self, end: int) -> MetricsReport:
        tCK = self.timing.tCK
        cycles = end // tCK
        counters: dict = {}
        commands: dict[str, int] = {}
        for controller in self.controllers:
            for key, value in controller.counters().items():
                counters[key] = max(counters.get(key, 0), value) if key == "refresh_table_peak" \
                    else counters.get(key, 0) + value
            for key, value in controller.commands.items():
                commands[key] = commands.get(key, 0) + value

        served = [state.served for state in self.sources]
        throughput = [self._source_throughput(state, end) for state in self.sources]
        latency = [state.latency_sum / state.served if state.served else 0.0 for state in self.sources]
        total_served = sum(served)

        return MetricsReport(
            mode=self.config.scheduler.mode,
            tRefSlack=self.config.scheduler.tRefSlack,
            duration_ps=end,
            cycles=cycles,
            requests_generated=[state.position for state in self.sources],
            requests_served=served,
            requests_in_flight=[state.outstanding for state in self.sources],
            throughput=throughput,
            average_latency_ps=latency,
            mean_latency_ps=sum(state.latency_sum for state in self.sources) / total_served if total_served else 0.0,
            row_hit_rate=counters["row_hits"] / counters["served"] if counters["served"] else 0.0,
            hira_refresh_access=counters["hira_refresh_access"],
            hira_refresh_refresh=counters["hira_refresh_refresh"],
            standalone_refreshes=counters["standalone_refreshes"],
            periodic_refreshes=counters["periodic_refreshes"],
            preventive_refreshes=counters["preventive_refreshes"],
            ref_commands=counters["ref_commands"],
            commands=commands,
            command_bus_occupancy=counters["bus_busy_ps"] / (end * len(self.controllers)) if end else 0.0,
            tfaw_stall_cycles=counters["tfaw_stall_ps"] // tCK,
            deadline_violations=counters["deadline_violations"],
            retention_expiries=counters["retention_expiries"],
            corruption_events=counters["corruption_events"],
            rowhammer_flips=counters["rowhammer_flips"],
            refresh_table_peak=counters["refresh_table_peak"],
            backpressure_stalls=counters["backpressure_stalls"],
        )

    def event_log(self) -> list[tuple]:
        events = []
        for controller in self.controllers:
            events.extend(controller.events or [])
        # stable sort keeps each channel's issue order at equal times
        return sorted(events, key=lambda e: e[0])


def write_event_log(events: list[tuple], target: str | Path | TextIO) -> None:
    if isinstance(target, (str, Path)):
        with open(target, "w", newline="", encoding="utf-8") as file:
            write_event_log(events, file)
        return

    target.write(EVENT_LOG_TITLE + "\n")
    writer = csv.writer(target)
    writer.writerow(EVENT_LOG_HEADER)
    for event in events:
        writer.writerow(["" if value is None else value for value in event])


def write_metrics(reports: list[MetricsReport], target: str | Path | TextIO) -> None:
    """One row per report; list fields are joined with ';'."""
    if isinstance(target, (str, Path)):
        with open(target, "w", newline="", encoding="utf-8") as file:
            write_metrics(reports, file)
        return

    target.write(METRICS_TITLE + "\n")
    fields = list(MetricsReport.__fields__)
    writer = csv.writer(target)
    writer.writerow(fields)
    for report in reports:
        row = []
        for name in fields:
            value = getattr(report, name)
            if isinstance(value, list):
                value = ";".join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in value)
            elif isinstance(value, dict):
                value = ";".join(f"{k}={v}" for k, v in sorted(value.items()))
            elif isinstance(value, float):
                value = f"{value:.6g}"
            elif hasattr(value, "value"):
                value = value.value
            row.append(value)
        writer.writerow(row)
