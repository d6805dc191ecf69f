from enum import Enum, IntFlag


class CommandTypes(Enum):
    ACT = "ACT"
    PRE = "PRE"
    RD = "RD"
    WR = "WR"
    REF = "REF"


class BankPhases(Enum):
    PRECHARGED = "Precharged"
    ACTIVATING = "Activating"
    ACTIVE = "Active"
    HIRA_WINDOW = "HiraWindow"
    DUAL_ACTIVE = "DualActive"
    PRECHARGING = "Precharging"


class HiraOutcomes(Enum):
    DUAL_OPEN = "DualOpen"
    CORRUPTED = "Corrupted"
    SECOND_ACT_IGNORED = "SecondActIgnored"
    FIRST_ROW_CLOSED = "FirstRowClosed"


class HiraPurposes(str, Enum):
    REFRESH_REFRESH = "RefreshRefresh"
    REFRESH_ACCESS = "RefreshAccess"


class HiraConditions(Enum):
    SENSE_ENABLE = 1
    WORDLINE_DISABLE = 2
    BANKIO_DISCONNECT = 3
    SUBARRAY_ISOLATION = 4


class RefreshKinds(Enum):
    INVALID = "invalid"
    PERIODIC = "periodic"
    PREVENTIVE = "preventive"


class SchedulerModes(str, Enum):
    BASELINE_REF = "BaselineREF"
    HIRA = "HiRA"
    NO_REFRESH = "NoRefresh"


class IsolationStrategies(str, Enum):
    ADJACENT_SHARE = "adjacent-share"
    TARGET_COVERAGE = "target-coverage"
    FILE = "file"


class TraceKinds(str, Enum):
    STREAM = "stream"
    RANDOM = "random"
    ROWHIT = "rowhit"
    HAMMER = "hammer"
    FILE = "file"


class RequestOps(str, Enum):
    READ = "R"
    WRITE = "W"


class SweepAxes(str, Enum):
    CAPACITY = "capacity"
    N_RH = "n_rh"
    CHANNELS = "channels"
    RANKS = "ranks"
    SLACK = "slack"


class ParaSolvers(str, Enum):
    CLOSED_FORM = "closed_form"
    EXACT = "exact"


class LogEvents(Enum):
    ACT = "ACT"
    PRE = "PRE"
    RD = "RD"
    WR = "WR"
    REF = "REF"
    HIRA_RA = "HIRA_RA"
    HIRA_RR = "HIRA_RR"
    REFRESH_STANDALONE = "REFRESH_STANDALONE"


class SimEventTypes(Enum):
    STARTING = "STARTING"
    CONFIG_LOADED = "CONFIG_LOADED"
    SIMULATION_STARTED = "SIMULATION_STARTED"
    WINDOW_ROLLOVER = "WINDOW_ROLLOVER"
    DEADLINE_VIOLATION = "DEADLINE_VIOLATION"
    RETENTION_EXPIRED = "RETENTION_EXPIRED"
    CORRUPTION = "CORRUPTION"
    BACKPRESSURE = "BACKPRESSURE"
    SWEEP_POINT = "SWEEP_POINT"
    SWEEP_POINT_FAILED = "SWEEP_POINT_FAILED"
    SOLVER_RESULT = "SOLVER_RESULT"
    CHARACTERIZATION = "CHARACTERIZATION"
    FINISHED = "FINISHED"
    DEBUG = "DEBUG"


class RowFlags(IntFlag):
    NONE = 0
    CORRUPTED = 1
    FLIPPED = 2
    PARTIAL_RESTORE = 4
    RETENTION_EXPIRED = 8


class ReservationKinds(Enum):
    REFRESH = "refresh"
    OPERATION = "operation"
    CLOSE = "close"
    REF = "ref"


class SchedulerActions(Enum):
    SERVE = "serve"
    PRECHARGE = "precharge"
    ACTIVATE = "activate"
