from dataclasses import dataclass
from typing import Protocol
from src.shared_enum_vars import CommandTypes, HiraConditions, HiraPurposes
from src.schema import HiraConfig, TimingParams, ElectricalWindows


class HiraValidationError(Exception):
    pass


class IsolationLookup(Protocol):
    def isolated(self, i: int, j: int) -> bool: ...


@dataclass(frozen=True, slots=True)
class HiraStep:
    command: CommandTypes
    offset_ps: int
    row: int | None = None


@dataclass(frozen=True, slots=True)
class HiraPlan:
    """ACT rowA, PRE after t1, ACT rowB after another t2; offsets are relative to the first ACT."""
    bank: int
    row_a: int
    row_b: int
    t1: int
    t2: int
    tRCD: int
    tRAS: int
    purpose: HiraPurposes = HiraPurposes.REFRESH_ACCESS

    def __post_init__(self):
        if self.t1 <= 0 or self.t2 <= 0:
            raise ValueError("t1 and t2 must be strictly positive.")

    @classmethod
    def for_refresh_access(cls, cfg: HiraConfig, timing: TimingParams, bank: int, refresh_row: int,
                           access_row: int) -> "HiraPlan":
        # the refresh row goes first so the access row stays connected to the bank I/O
        return cls(bank, refresh_row, access_row, cfg.t1, cfg.t2, timing.tRCD, timing.tRAS,
                   HiraPurposes.REFRESH_ACCESS)

    @classmethod
    def for_refresh_refresh(cls, cfg: HiraConfig, timing: TimingParams, bank: int, row_a: int,
                            row_b: int) -> "HiraPlan":
        return cls(bank, row_a, row_b, cfg.t1, cfg.t2, timing.tRCD, timing.tRAS, HiraPurposes.REFRESH_REFRESH)

    @property
    def steps(self) -> tuple[HiraStep, ...]:
        return (
            HiraStep(CommandTypes.ACT, 0, self.row_a),
            HiraStep(CommandTypes.PRE, self.t1),
            HiraStep(CommandTypes.ACT, self.t1 + self.t2, self.row_b),
        )

    @property
    def second_act_offset(self) -> int:
        return self.t1 + self.t2

    @property
    def earliest_column_ps(self) -> int:
        return self.t1 + self.t2 + self.tRCD

    @property
    def earliest_close_ps(self) -> int:
        return self.t1 + self.t2 + self.tRAS

    @property
    def t_restore_b(self) -> int:
        return self.tRAS

    @property
    def t_restore_a(self) -> int:
        # rowA stays latched through the whole sequence
        return self.earliest_close_ps


def validate_hira(
        cfg: HiraConfig,
        isolation: IsolationLookup,
        row_a: tuple[int, int],
        row_b: tuple[int, int],
        windows: ElectricalWindows,
        rows_per_subarray: int
) -> list[HiraConditions]:
    """
    Check the four operating conditions of a HiRA op on rows given as (bank, row). Returns every violated
    condition; an empty list means the op is safe.
    """
    if row_a[0] != row_b[0]:
        raise HiraValidationError(f"rows {row_a} and {row_b} are in different banks.")

    violated = []
    if cfg.t1 < windows.sense_enable_min:
        violated.append(HiraConditions.SENSE_ENABLE)
    if cfg.t2 > windows.wordline_disable_max:
        violated.append(HiraConditions.WORDLINE_DISABLE)
    if cfg.purpose is HiraPurposes.REFRESH_ACCESS and cfg.t2 < windows.bankio_disconnect_min:
        violated.append(HiraConditions.BANKIO_DISCONNECT)
    if not isolation.isolated(row_a[1] // rows_per_subarray, row_b[1] // rows_per_subarray):
        violated.append(HiraConditions.SUBARRAY_ISOLATION)
    return violated


def two_row_refresh_latency(cfg: HiraConfig, timing: TimingParams) -> int:
    # the closing PRE's tRP is left out, as for the nominal figure it is compared with
    return cfg.t1 + cfg.t2 + timing.tRAS


def baseline_two_row_refresh_latency(timing: TimingParams) -> int:
    return timing.tRAS + timing.tRP + timing.tRAS


def latency_reduction(cfg: HiraConfig, timing: TimingParams) -> float:
    return 1 - two_row_refresh_latency(cfg, timing) / baseline_two_row_refresh_latency(timing)


def access_latency(cfg: HiraConfig) -> int:
    """Extra delay before the access row's ACT when it is paired with a refresh."""
    return cfg.t1 + cfg.t2


def nominal_access_latency(timing: TimingParams) -> int:
    """Delay an access waits behind a standalone refresh of the same bank."""
    return timing.tRC
