import csv
from multiprocessing.pool import Pool
from pathlib import Path
from typing import Iterable, NamedTuple, TextIO
from src.shared_enum_vars import ParaSolvers, SchedulerModes, SimEventTypes, SweepAxes, TraceKinds
from src.schema import ExperimentConfig, MetricsReport, ParaParams, TraceRequest
from src.config import load_settings
from src.para_analysis import solve_p_th, solve_p_th_exact
from src.simulator import MemorySystem, write_event_log
from src.traces import generate_trace
from src.sim_logger import SimLogger


SWEEP_HEADER = [
    "axis", "value", "mode", "weighted_speedup", "normalized_weighted_speedup", "mean_latency_ps",
    "command_bus_occupancy", "periodic_refreshes", "preventive_refreshes", "ref_commands", "hira_refresh_access",
    "hira_refresh_refresh", "deadline_violations", "error"
]


class SecurityResult(NamedTuple):
    trials: int
    flipped_trials: int
    total_flips: int
    p_th: float


def resolve_p_th(config: ExperimentConfig, logger: SimLogger | None = None) -> float | None:
    """
    PARA probability for a run: the configured p_th, or the solver's answer for the [para] section when p_th is left
    empty. None when PARA is off.
    """
    scheduler = config.scheduler
    if not scheduler.para_enabled:
        return None
    if scheduler.p_th is not None:
        return scheduler.p_th

    para = config.para
    params = ParaParams(N_RH=para.N_RH, tREFW=config.timing.tREFW, tRC=config.timing.tRC,
                        N_RefSlack=scheduler.tRefSlack, in_flight_activations=para.in_flight_activations,
                        target_p_RH=para.target_p_RH)
    match para.solver:
        case ParaSolvers.CLOSED_FORM:
            p_th = solve_p_th(params).p_th
        case ParaSolvers.EXACT:
            p_th = solve_p_th_exact(params.N_RH, params.T_slots, params.target_p_RH, params.HC_deadline)
        case _:
            raise ValueError(f"Unrecognised solver {para.solver}.")

    if logger is not None:
        logger.log(SimEventTypes.SOLVER_RESULT, n_rh=para.N_RH, slack=scheduler.tRefSlack, p_th=p_th)
    return p_th


def _ideal(config: ExperimentConfig) -> ExperimentConfig:
    return config.with_changes(scheduler={"mode": SchedulerModes.NO_REFRESH.value, "para_enabled": False})


def _solo_throughput(config: ExperimentConfig, trace: list[TraceRequest]) -> dict[int, float]:
    """Throughput of every source running alone on the ideal system."""
    ideal = _ideal(config)
    alone = {}
    for source in sorted({r.source for r in trace}):
        report = MemorySystem(ideal, trace=[r for r in trace if r.source == source], record_events=False).run()
        alone[source] = report.throughput[0] if report.throughput else 0.0
    return alone


def weighted_speedup(report: MetricsReport, sources: list[int], alone: dict[int, float]) -> float:
    return sum(shared / alone[source] for source, shared in zip(sources, report.throughput) if alone[source] > 0)


def run_experiment(
        config: ExperimentConfig,
        *,
        trace: list[TraceRequest] | None = None,
        logger: SimLogger | None = None,
        event_log_path: str | Path | None = None
) -> MetricsReport:
    """
    One simulation plus its weighted speedup against solo runs on the no-refresh system.

    :raises InvariantViolationError: when the run breaks a deadline, loses data or lets a row expire
    """
    trace = generate_trace(config.trace, config.geometry) if trace is None else trace
    p_th = resolve_p_th(config, logger)
    event_log_path = event_log_path or config.output.event_log_path

    system = MemorySystem(config, trace=trace, p_th=p_th, logger=logger,
                          record_events=config.simulation.event_log or event_log_path is not None)
    report = system.run()
    if event_log_path is not None:
        write_event_log(system.event_log(), event_log_path)

    if not config.simulation.compute_weighted_speedup or not trace:
        return report

    sources = [state.source for state in system.sources]
    alone = _solo_throughput(config, trace)
    speedup = weighted_speedup(report, sources, alone)
    ideal = MemorySystem(_ideal(config), trace=trace, record_events=False).run()
    ideal_speedup = weighted_speedup(ideal, sources, alone)
    return report.copy(update={
        "weighted_speedup": speedup,
        "normalized_weighted_speedup": speedup / ideal_speedup if ideal_speedup else 0.0,
    })


def apply_axis(config: ExperimentConfig, axis: SweepAxes, value: int) -> ExperimentConfig:
    match axis:
        case SweepAxes.CAPACITY:
            # value is rows per bank
            rows_per_subarray = value // config.geometry.subarrays_per_bank
            if rows_per_subarray < 1:
                raise ValueError(f"{value} rows cannot fill {config.geometry.subarrays_per_bank} subarrays.")
            return config.with_changes(geometry={"rows_per_subarray": rows_per_subarray})
        case SweepAxes.N_RH:
            return config.with_changes(para={"N_RH": value}, chip={"n_rh_true": value},
                                       scheduler={"para_enabled": True})
        case SweepAxes.CHANNELS:
            return config.with_changes(geometry={"channels": value})
        case SweepAxes.RANKS:
            return config.with_changes(geometry={"ranks_per_channel": value})
        case SweepAxes.SLACK:
            return config.with_changes(scheduler={"tRefSlack_multiple": value})
        case _:
            raise ValueError(f"Unrecognised sweep axis {axis}.")


def default_variants(config: ExperimentConfig) -> dict[str, dict]:
    slack = config.scheduler.tRefSlack_multiple
    return {
        "BaselineREF": {"mode": SchedulerModes.BASELINE_REF.value},
        f"HiRA-{slack}": {"mode": SchedulerModes.HIRA.value},
    }


def _run_point(args: tuple) -> dict:
    axis, value, label, config_data, scheduler_changes = args
    row = {"axis": axis.value, "value": value, "mode": label}
    try:
        config = apply_axis(ExperimentConfig.parse_obj(config_data), axis, value)
        if scheduler_changes:
            config = config.with_changes(scheduler=scheduler_changes)
        report = run_experiment(config)
    except Exception as e:
        row["error"] = f"{type(e).__name__}: {e}"
        return row

    row.update({key: getattr(report, key) for key in SWEEP_HEADER if hasattr(report, key)})
    row["error"] = ""
    return row


def run_sweep(
        axis: SweepAxes,
        values: Iterable[int],
        base: ExperimentConfig,
        *,
        variants: dict[str, dict] | None = None,
        workers: int | None = None,
        logger: SimLogger | None = None
) -> list[dict]:
    """
    One run_experiment per (value, variant). A failing point becomes a row with its error and the sweep goes on.
    Points run in a process pool when more than one worker is available.
    """
    variants = default_variants(base) if variants is None else variants
    workers = workers or load_settings().workers
    data = base.dict()
    jobs = [(axis, value, label, data, changes) for value in values for label, changes in variants.items()]

    if workers > 1 and len(jobs) > 1:
        with Pool(min(workers, len(jobs))) as pool:
            rows = pool.map(_run_point, jobs)
    else:
        rows = [_run_point(job) for job in jobs]

    if logger is not None:
        for row in rows:
            if row["error"]:
                logger.log(SimEventTypes.SWEEP_POINT_FAILED, axis=row["axis"], value=row["value"], mode=row["mode"],
                           error=row["error"])
            else:
                logger.log(SimEventTypes.SWEEP_POINT, axis=row["axis"], value=row["value"], mode=row["mode"],
                           weighted_speedup=row["weighted_speedup"])
    return rows


def write_sweep_csv(rows: list[dict], target: str | Path | TextIO) -> None:
    if isinstance(target, (str, Path)):
        with open(target, "w", newline="", encoding="utf-8") as file:
            write_sweep_csv(rows, file)
        return

    target.write("# hira-sim sweep v1\n")
    writer = csv.DictWriter(target, fieldnames=SWEEP_HEADER, restval="")
    writer.writeheader()
    for row in rows:
        writer.writerow({key: f"{value:.6g}" if isinstance(value, float) else value for key, value in row.items()})


def run_security_trials(
        config: ExperimentConfig,
        trials: int,
        seed: int = 0,
        *,
        p_th: float | None = None,
        logger: SimLogger | None = None
) -> SecurityResult:
    """
    Short double-sided hammering runs with PARA on, each with its own scheduler seed. Counts the trials in which the
    victim row flipped.
    """
    config = config.with_changes(scheduler={"para_enabled": True}, trace={"kind": TraceKinds.HAMMER.value},
                                 simulation={"compute_weighted_speedup": False})
    p_th = resolve_p_th(config, logger) if p_th is None else p_th
    trace = generate_trace(config.trace, config.geometry)

    flipped_trials = total_flips = 0
    for trial in range(trials):
        trial_config = config.with_changes(scheduler={"seed": seed + trial})
        report = MemorySystem(trial_config, trace=trace, p_th=p_th, record_events=False).run()
        total_flips += report.rowhammer_flips
        flipped_trials += report.rowhammer_flips > 0

    if logger is not None:
        logger.log(SimEventTypes.CHARACTERIZATION, experiment=f"security p_th={p_th:.6g}",
                   summary=f"{flipped_trials} of {trials} trials flipped")
    return SecurityResult(trials, flipped_trials, total_flips, p_th)
