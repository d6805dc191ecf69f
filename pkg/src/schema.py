import math
from dataclasses import dataclass, field
from pydantic import BaseModel, validator, Extra, Field, root_validator
from src.shared_enum_vars import (
    HiraPurposes, RefreshKinds, SchedulerModes, IsolationStrategies, TraceKinds, RequestOps, ParaSolvers
)


ADDRESS_FIELDS = ("column", "row", "bank", "rank", "channel")

# the reference bank every refresh density is measured against
REFERENCE_ROWS_PER_BANK = 65536
REFERENCE_REFRESH_WINDOW_PS = 64_000_000_000
REFERENCE_ROWS_PER_REF = 8


def is_power_of_two(value: int) -> bool:
    return value > 0 and value & (value - 1) == 0


def must_be_positive(v):
    if v <= 0:
        raise ValueError("value must be strictly positive.")
    return v


class TimingParams(BaseModel):
    """
    DRAM timing constants, all integer picoseconds. tCK, tCL and tBL only drive command-bus slots and request
    completion times. Defaults are DDR4 (tRP = 14.25 ns; some datasheets quote 14.5 ns).
    """
    tRCD: int = 14250
    tRAS: int = 32000
    tRP: int = 14250
    tRC: int = 46250
    tRFC: int = 350_000
    tREFI: int = 7_800_000
    tREFW: int = REFERENCE_REFRESH_WINDOW_PS
    tFAW: int = 30000
    tCK: int = 1250
    tCL: int = 14250
    tBL: int = 5000

    _positive = validator(
        'tRCD', 'tRAS', 'tRP', 'tRC', 'tRFC', 'tREFI', 'tREFW', 'tFAW', 'tCK', 'tCL', 'tBL', allow_reuse=True
    )(must_be_positive)

    @root_validator(skip_on_failure=True)
    def check_relations(cls, values):
        if values["tRC"] != values["tRAS"] + values["tRP"]:
            raise ValueError(f"tRC ({values['tRC']}) must equal tRAS + tRP ({values['tRAS'] + values['tRP']}).")
        if not values["tREFI"] < values["tREFW"]:
            raise ValueError("tREFI must be smaller than tREFW.")
        if not values["tRFC"] < values["tREFI"]:
            raise ValueError("tRFC must be smaller than tREFI.")
        return values

    @classmethod
    def ddr4(cls) -> "TimingParams":
        return cls()

    def scaled_window(self, rows_per_bank: int) -> "TimingParams":
        """
        Set tREFW so that a bank of rows_per_bank rows sees the per-row refresh density of a 64K-row bank. The
        result depends only on rows_per_bank, so applying it twice is harmless.
            >>> TimingParams().scaled_window(64).tREFW
            62500000
        """
        trefw = REFERENCE_REFRESH_WINDOW_PS * rows_per_bank // REFERENCE_ROWS_PER_BANK
        return TimingParams(**{**self.dict(), "tREFW": trefw})

    class Config:
        extra = Extra.forbid


class Geometry(BaseModel):
    channels: int = 1
    ranks_per_channel: int = 1
    banks_per_rank: int = 16
    subarrays_per_bank: int = 128
    rows_per_subarray: int = 512
    columns_per_row: int = 1024
    column_bytes: int = 8
    # bit order of the physical address, least significant field first
    address_order: tuple[str, ...] = ADDRESS_FIELDS

    _positive = validator(
        'channels', 'ranks_per_channel', 'banks_per_rank', 'subarrays_per_bank', 'rows_per_subarray',
        'columns_per_row', 'column_bytes', allow_reuse=True
    )(must_be_positive)

    @validator('address_order')
    def must_be_field_permutation(cls, v):
        if sorted(v) != sorted(ADDRESS_FIELDS):
            raise ValueError(f"address_order must be a permutation of {ADDRESS_FIELDS}.")
        return tuple(v)

    @root_validator(skip_on_failure=True)
    def check_powers_of_two(cls, values):
        # every address field is a whole number of bits
        for name in ('channels', 'ranks_per_channel', 'banks_per_rank', 'columns_per_row', 'column_bytes'):
            if not is_power_of_two(values[name]):
                raise ValueError(f"{name} must be a power of two, got {values[name]}.")
        rows = values['subarrays_per_bank'] * values['rows_per_subarray']
        if not is_power_of_two(rows):
            raise ValueError(f"rows per bank must be a power of two, got {rows}.")
        return values

    @property
    def rows_per_bank(self) -> int:
        return self.subarrays_per_bank * self.rows_per_subarray

    @property
    def banks_per_channel(self) -> int:
        return self.ranks_per_channel * self.banks_per_rank

    @property
    def total_banks(self) -> int:
        return self.channels * self.banks_per_channel

    @property
    def row_bytes(self) -> int:
        return self.columns_per_row * self.column_bytes

    @property
    def capacity_bytes(self) -> int:
        return self.total_banks * self.rows_per_bank * self.row_bytes

    def subarray_of(self, row: int) -> int:
        return row // self.rows_per_subarray

    def field_widths(self) -> dict[str, int]:
        sizes = {
            "column": self.columns_per_row,
            "row": self.rows_per_bank,
            "bank": self.banks_per_rank,
            "rank": self.ranks_per_channel,
            "channel": self.channels,
        }
        return {name: size.bit_length() - 1 for name, size in sizes.items()}

    class Config:
        extra = Extra.forbid


def rows_per_ref(geometry: Geometry, timing: TimingParams) -> int:
    """Rows each REF command restores per bank so that a full bank is covered once per tREFW."""
    return math.ceil(geometry.rows_per_bank * timing.tREFI / timing.tREFW)


def scaled_trfc(geometry: Geometry, timing: TimingParams) -> int:
    # tRFC grows linearly with the rows a REF has to restore
    return timing.tRFC * rows_per_ref(geometry, timing) // REFERENCE_ROWS_PER_REF


class ElectricalWindows(BaseModel):
    sense_enable_min: int = 3000
    wordline_disable_max: int = 4500
    bankio_disconnect_min: int = 3000

    _positive = validator(
        'sense_enable_min', 'wordline_disable_max', 'bankio_disconnect_min', allow_reuse=True
    )(must_be_positive)

    class Config:
        extra = Extra.forbid


class ChipConfig(BaseModel):
    n_rh_true: int = Field(1024, description="RowHammer threshold of the simulated cells")
    scaled_trfc: bool = False

    @validator('n_rh_true')
    def must_be_at_least_one(cls, v):
        if v < 1:
            raise ValueError("n_rh_true must be at least 1.")
        return v

    class Config:
        extra = Extra.forbid


class HiraConfig(BaseModel):
    t1: int = 3000
    t2: int = 3000
    purpose: HiraPurposes = HiraPurposes.REFRESH_ACCESS

    _positive = validator('t1', 't2', allow_reuse=True)(must_be_positive)

    def check_bounds(self, timing: TimingParams) -> None:
        if self.t1 > timing.tRC or self.t2 > timing.tRC:
            raise ValueError(f"t1 ({self.t1}) and t2 ({self.t2}) must not exceed tRC ({timing.tRC}).")

    class Config:
        extra = Extra.forbid


@dataclass(slots=True, eq=False)
class RefreshRequest:
    """
    One Refresh Table entry. Preventive entries carry the victim row, periodic entries get their row from the
    RefPtr table when they are performed.
    """
    deadline: int
    bank: int
    kind: RefreshKinds
    generated_ps: int
    request_id: int
    victim_row: int | None = None
    window: int = 0
    reservation: object | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind is RefreshKinds.INVALID:
            raise ValueError("live refresh requests cannot be of the invalid kind.")
        if self.kind is RefreshKinds.PREVENTIVE and self.victim_row is None:
            raise ValueError("preventive refresh requests need a victim row.")
        if self.deadline < self.generated_ps:
            raise ValueError("deadline precedes generation time.")


class SchedulerConfig(BaseModel):
    mode: SchedulerModes = SchedulerModes.HIRA
    tRefSlack_multiple: int = 2
    # resolved from tRefSlack_multiple x tRC when left empty
    tRefSlack: int | None = None
    para_enabled: bool = False
    p_th: float | None = None
    hira_parallelism: bool = True
    seed: int = 0
    refresh_table_capacity: int = 68
    pr_fifo_capacity: int = 4
    refptr_capacity: int = 2048
    scan_interval: int | None = None
    strict: bool = True
    spt_faults: list[tuple[int, int]] = []

    @validator('tRefSlack_multiple')
    def multiple_not_negative(cls, v):
        if v < 0:
            raise ValueError("tRefSlack_multiple must not be negative.")
        return v

    @validator('tRefSlack')
    def slack_not_negative(cls, v):
        if v is not None and v < 0:
            raise ValueError("tRefSlack must not be negative.")
        return v

    @validator('p_th')
    def must_be_probability(cls, v):
        if v is not None and not 0.0 <= v <= 1.0:
            raise ValueError("p_th must be within [0, 1].")
        return v

    _positive = validator(
        'refresh_table_capacity', 'pr_fifo_capacity', 'refptr_capacity', allow_reuse=True
    )(must_be_positive)

    @validator('scan_interval')
    def scan_interval_positive(cls, v):
        if v is not None and v <= 0:
            raise ValueError("scan_interval must be strictly positive.")
        return v

    def resolved(self, timing: TimingParams) -> "SchedulerConfig":
        values = self.dict()
        if values["tRefSlack"] is None:
            values["tRefSlack"] = self.tRefSlack_multiple * timing.tRC
        if values["scan_interval"] is None:
            values["scan_interval"] = timing.tRC // 2
        return SchedulerConfig(**values)

    class Config:
        extra = Extra.forbid


class ParaParams(BaseModel):
    N_RH: int
    tREFW: int = REFERENCE_REFRESH_WINDOW_PS
    tRC: int = 46250
    N_RefSlack: int = 0
    # aggressor activations that still land before a triggered refresh restores the victim, on top of the slack
    in_flight_activations: int = 0
    target_p_RH: float = 1e-15

    @validator('N_RH')
    def threshold_at_least_one(cls, v):
        if v < 1:
            raise ValueError("N_RH must be at least 1.")
        return v

    _positive = validator('tREFW', 'tRC', allow_reuse=True)(must_be_positive)

    @validator('N_RefSlack', 'in_flight_activations')
    def slack_not_negative(cls, v, field):
        if v < 0:
            raise ValueError(f"{field.name} must not be negative.")
        return v

    @validator('target_p_RH')
    def target_is_probability(cls, v):
        if not 0.0 < v < 1.0:
            raise ValueError("target_p_RH must be within (0, 1).")
        return v

    @root_validator(skip_on_failure=True)
    def deadline_below_threshold(cls, values):
        if values["N_RefSlack"] // values["tRC"] + values["in_flight_activations"] >= values["N_RH"]:
            raise ValueError("HC_deadline (N_RefSlack / tRC + in_flight_activations) must be smaller than N_RH.")
        return values

    @property
    def T_slots(self) -> int:
        return self.tREFW // self.tRC

    @property
    def HC_deadline(self) -> int:
        return self.N_RefSlack // self.tRC + self.in_flight_activations

    class Config:
        extra = Extra.forbid


class ParaSolution(BaseModel):
    p_th: float
    p_rh: float
    iterations: int
    n_f_max: int

    class Config:
        extra = Extra.forbid


class TraceRequest(BaseModel):
    gap: int
    source: int = 0
    op: RequestOps = RequestOps.READ
    address: int

    @validator('gap', 'source', 'address')
    def not_negative(cls, v):
        if v < 0:
            raise ValueError("trace fields must not be negative.")
        return v

    class Config:
        extra = Extra.forbid
        allow_mutation = False


class TimingViolation(BaseModel):
    command: str
    constraint: str
    bank: int
    earliest_ps: int
    attempted_ps: int

    class Config:
        extra = Extra.forbid


class MetricsReport(BaseModel):
    mode: SchedulerModes
    tRefSlack: int = 0
    duration_ps: int = 0
    cycles: int = 0
    requests_generated: list[int] = []
    requests_served: list[int] = []
    requests_in_flight: list[int] = []
    throughput: list[float] = []
    average_latency_ps: list[float] = []
    mean_latency_ps: float = 0.0
    weighted_speedup: float = 0.0
    normalized_weighted_speedup: float = 0.0
    row_hit_rate: float = 0.0
    hira_refresh_access: int = 0
    hira_refresh_refresh: int = 0
    standalone_refreshes: int = 0
    periodic_refreshes: int = 0
    preventive_refreshes: int = 0
    ref_commands: int = 0
    commands: dict[str, int] = {}
    command_bus_occupancy: float = 0.0
    tfaw_stall_cycles: int = 0
    deadline_violations: int = 0
    retention_expiries: int = 0
    corruption_events: int = 0
    rowhammer_flips: int = 0
    refresh_table_peak: int = 0
    backpressure_stalls: int = 0

    @validator('deadline_violations', 'retention_expiries', 'corruption_events', 'rowhammer_flips')
    def counters_not_negative(cls, v):
        if v < 0:
            raise ValueError("counters must not be negative.")
        return v

    class Config:
        extra = Extra.forbid


class CoverageReport(BaseModel):
    t1: int
    t2: int
    patterns: list[int]
    tested_rows: list[int]
    per_row: dict[int, float]
    partners: dict[int, list[int]] = {}
    summary: tuple[float, float, float, float, float] = (0.0, 0.0, 0.0, 0.0, 0.0)

    @validator('per_row')
    def fractions_in_range(cls, v):
        for row, fraction in v.items():
            if not 0.0 <= fraction <= 1.0:
                raise ValueError(f"coverage of row {row} is outside [0, 1].")
        return v

    class Config:
        extra = Extra.forbid


class ThresholdMeasurement(BaseModel):
    victim: int
    hc_without: int
    hc_with: int
    ratio: float = 0.0

    @root_validator(skip_on_failure=True)
    def compute_ratio(cls, values):
        if values["hc_without"] < 1 or values["hc_with"] < 1:
            raise ValueError("thresholds must be at least 1.")
        values["ratio"] = values["hc_with"] / values["hc_without"]
        return values

    class Config:
        extra = Extra.forbid


class ThresholdReport(BaseModel):
    bank: int
    measurements: list[ThresholdMeasurement]

    @property
    def mean_ratio(self) -> float:
        if not self.measurements:
            return 0.0
        return sum(m.ratio for m in self.measurements) / len(self.measurements)

    class Config:
        extra = Extra.forbid


class BankVariationReport(BaseModel):
    coverage: dict[int, CoverageReport]
    thresholds: dict[int, ThresholdReport]
    identical: bool
    mismatched_banks: list[int] = []

    class Config:
        extra = Extra.forbid


class ParaSection(BaseModel):
    N_RH: int = 1024
    target_p_RH: float = 1e-15
    solver: ParaSolvers = ParaSolvers.CLOSED_FORM
    in_flight_activations: int = 0

    @validator('N_RH')
    def threshold_at_least_one(cls, v):
        if v < 1:
            raise ValueError("N_RH must be at least 1.")
        return v

    @validator('in_flight_activations')
    def in_flight_not_negative(cls, v):
        if v < 0:
            raise ValueError("in_flight_activations must not be negative.")
        return v

    @validator('target_p_RH')
    def target_is_probability(cls, v):
        if not 0.0 < v < 1.0:
            raise ValueError("target_p_RH must be within (0, 1).")
        return v

    class Config:
        extra = Extra.forbid


class IsolationConfig(BaseModel):
    strategy: IsolationStrategies = IsolationStrategies.ADJACENT_SHARE
    target_coverage: float = 0.32
    seed: int = 0
    path: str | None = None

    @root_validator(skip_on_failure=True)
    def file_needs_path(cls, values):
        if values["strategy"] is IsolationStrategies.FILE and not values["path"]:
            raise ValueError("the file isolation strategy needs a path.")
        if not 0.0 <= values["target_coverage"] <= 1.0:
            raise ValueError("target_coverage must be within [0, 1].")
        return values

    class Config:
        extra = Extra.forbid


class TraceConfig(BaseModel):
    kind: TraceKinds = TraceKinds.RANDOM
    path: str | None = None
    seed: int = 0
    sources: int = 4
    requests_per_source: int = 2000
    gap: int = 24
    burst: int = 8
    write_fraction: float = 0.0
    hammer_bank: int = 0
    hammer_victim: int | None = None
    hammer_count: int | None = None

    @validator('sources', 'burst')
    def positive(cls, v):
        if v <= 0:
            raise ValueError("value must be strictly positive.")
        return v

    @validator('requests_per_source', 'gap', 'hammer_bank')
    def not_negative(cls, v):
        if v < 0:
            raise ValueError("value must not be negative.")
        return v

    @root_validator(skip_on_failure=True)
    def file_needs_path(cls, values):
        if values["kind"] is TraceKinds.FILE and not values["path"]:
            raise ValueError("the file trace kind needs a path.")
        if not 0.0 <= values["write_fraction"] <= 1.0:
            raise ValueError("write_fraction must be within [0, 1].")
        return values

    class Config:
        extra = Extra.forbid


class SimulationConfig(BaseModel):
    duration_ps: int = 100_000_000
    max_outstanding: int = 4
    # replaces tREFW with TimingParams.scaled_window(rows_per_bank)
    scale_refresh_window: bool = False
    event_log: bool = False
    compute_weighted_speedup: bool = True

    _positive = validator('duration_ps', 'max_outstanding', allow_reuse=True)(must_be_positive)

    class Config:
        extra = Extra.forbid


class OutputConfig(BaseModel):
    event_log_path: str | None = None
    metrics_path: str | None = None
    directory: str = "results"

    class Config:
        extra = Extra.forbid


class ExperimentConfig(BaseModel):
    geometry: Geometry = Field(default_factory=Geometry)
    timing: TimingParams = Field(default_factory=TimingParams)
    electrical: ElectricalWindows = Field(default_factory=ElectricalWindows)
    chip: ChipConfig = Field(default_factory=ChipConfig)
    hira: HiraConfig = Field(default_factory=HiraConfig)
    scheduler: SchedulerConfig = Field(default_factory=SchedulerConfig)
    para: ParaSection = Field(default_factory=ParaSection)
    isolation: IsolationConfig = Field(default_factory=IsolationConfig)
    trace: TraceConfig = Field(default_factory=TraceConfig)
    simulation: SimulationConfig = Field(default_factory=SimulationConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    @root_validator(skip_on_failure=True)
    def resolve_derived_values(cls, values):
        geometry: Geometry = values["geometry"]
        timing: TimingParams = values["timing"]
        if values["simulation"].scale_refresh_window:
            timing = timing.scaled_window(geometry.rows_per_bank)
            values["timing"] = timing
        values["hira"].check_bounds(timing)
        values["scheduler"] = values["scheduler"].resolved(timing)
        scheduler: SchedulerConfig = values["scheduler"]
        if scheduler.mode is SchedulerModes.HIRA and scheduler.tRefSlack >= timing.tREFW // geometry.rows_per_bank:
            # a bank's periodic refresh has to be done before the bank generates the next one
            raise ValueError("tRefSlack must be smaller than the per-bank refresh period tREFW / rows_per_bank.")
        if geometry.banks_per_channel * geometry.subarrays_per_bank > values["scheduler"].refptr_capacity * geometry.ranks_per_channel:
            raise ValueError("RefPtr table capacity is smaller than banks x subarrays per rank.")
        return values

    def with_changes(self, **sections) -> "ExperimentConfig":
        """
        Rebuild the config with some section fields replaced and revalidate it, e.g.
            >>> config.with_changes(scheduler={"mode": "BaselineREF"})
        """
        data = self.dict()
        for section, changes in sections.items():
            data[section] = {**data[section], **changes}
        # derived values are recomputed on revalidation
        if "tRefSlack" not in sections.get("scheduler", {}):
            data["scheduler"]["tRefSlack"] = None
        if "scan_interval" not in sections.get("scheduler", {}):
            data["scheduler"]["scan_interval"] = None
        return ExperimentConfig.parse_obj(data)

    class Config:
        extra = Extra.forbid
