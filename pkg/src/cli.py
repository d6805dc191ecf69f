import argparse
import sys
from pathlib import Path
from src.shared_enum_vars import ParaSolvers, SimEventTypes, SweepAxes, TraceKinds
from src.schema import ExperimentConfig, HiraConfig, ParaParams
from src.config import parse_config, ConfigParseError, ConfigValidationError
from src.isolation_map import IsolationMap
from src.dram_chip import DramChip
from src.scheduler import InvariantViolationError
from src.traces import TraceFormatError
from src.simulator import write_metrics
from src.experiments import run_experiment, run_sweep, write_sweep_csv, run_security_trials
from src.para_analysis import (
    solve_p_th_exact, para_table, write_para_table, UnreachableTargetError, TableSizeError
)
from src.characterization import (
    T_GRID_PS, select_tested_rows, run_coverage, run_coverage_grid, write_coverage_csv, write_coverage_summary,
    measure_thresholds, write_threshold_csv, CorruptionDetectedError, NoBitFlipError
)
from src.sim_logger import SimLogger


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3


def _int_list(text: str) -> list[int]:
    try:
        return [int(value, 0) for value in text.split(",") if value.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"'{text}' is not a comma separated list of integers.")


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hira-sim", description="HiRA DRAM refresh simulator")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", type=Path, help="TOML experiment config; defaults when omitted")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value, may be repeated")

    commands = parser.add_subparsers(dest="command", required=True, metavar="command")

    simulate = commands.add_parser("simulate", parents=[common], help="run one simulation and write its metrics")
    simulate.add_argument("--trace", type=Path, help="trace file replacing the configured generator")
    simulate.add_argument("--metrics", type=Path, help="metrics CSV, [output] metrics_path when omitted")
    simulate.add_argument("--event-log", type=Path, help="event log CSV")

    sweep = commands.add_parser("sweep", parents=[common], help="BaselineREF against HiRA along one axis")
    sweep.add_argument("--axis", type=SweepAxes, choices=list(SweepAxes), required=True,
                       metavar="{" + ",".join(a.value for a in SweepAxes) + "}")
    sweep.add_argument("--values", type=_int_list, required=True, help="e.g. 128,256,512")
    sweep.add_argument("--workers", type=int, help="process count, HIRA_SIM_WORKERS when omitted")
    sweep.add_argument("-o", "--output", type=Path, help="sweep CSV, stdout when omitted")

    coverage = commands.add_parser("coverage", parents=[common], help="HiRA coverage of one bank")
    coverage.add_argument("--bank", type=int, default=0)
    coverage.add_argument("--grid", action="store_true", help=f"every t1, t2 in {T_GRID_PS} instead of [hira]")
    coverage.add_argument("--block", type=int, help="rows tested per block of the bank")
    coverage.add_argument("-o", "--output", type=Path, help="coverage CSV (summary CSV with --grid)")

    threshold = commands.add_parser("threshold", parents=[common], help="RowHammer threshold with and without HiRA")
    threshold.add_argument("--bank", type=int, default=0)
    threshold.add_argument("--victims", type=_int_list, required=True)
    threshold.add_argument("-o", "--output", type=Path)

    para = commands.add_parser("para-solve", parents=[common], help="PARA probability for N_RH and slack")
    para.add_argument("--n-rh", type=_int_list, help="N_RH values, [para] N_RH when omitted")
    para.add_argument("--slack", type=_int_list, help="tRefSlack multiples of tRC, [scheduler] value when omitted")
    para.add_argument("--solver", type=ParaSolvers, choices=list(ParaSolvers),
                      metavar="{" + ",".join(s.value for s in ParaSolvers) + "}")
    para.add_argument("-o", "--output", type=Path)

    security = commands.add_parser("security", parents=[common], help="repeated hammering runs with PARA")
    security.add_argument("--trials", type=int, default=10)
    security.add_argument("--seed", type=int, default=0)
    security.add_argument("--p-th", type=float, help="PARA probability, solved from [para] when omitted")

    return parser


def _chip(config: ExperimentConfig) -> DramChip:
    isolation_map = IsolationMap.from_config(config.isolation, config.geometry.subarrays_per_bank)
    return DramChip(config.geometry, config.timing, config.electrical, isolation_map,
                    n_rh_true=config.chip.n_rh_true, use_scaled_trfc=config.chip.scaled_trfc)


def _simulate(args, config: ExperimentConfig, logger: SimLogger) -> None:
    if args.trace is not None:
        config = config.with_changes(trace={"kind": TraceKinds.FILE.value, "path": str(args.trace)})
    report = run_experiment(config, logger=logger, event_log_path=args.event_log)
    target = args.metrics or config.output.metrics_path
    write_metrics([report], target if target is not None else sys.stdout)


def _sweep(args, config: ExperimentConfig, logger: SimLogger) -> None:
    rows = run_sweep(args.axis, args.values, config, workers=args.workers, logger=logger)
    write_sweep_csv(rows, args.output or sys.stdout)


def _coverage(args, config: ExperimentConfig, logger: SimLogger) -> None:
    chip = _chip(config)
    tested_rows = select_tested_rows(config.geometry.rows_per_bank, args.block)
    if args.grid:
        reports = run_coverage_grid(chip, tested_rows, bank=args.bank, logger=logger)
        write_coverage_summary(reports, args.output or sys.stdout)
    else:
        report = run_coverage(chip, config.hira, tested_rows, bank=args.bank, logger=logger)
        write_coverage_csv(report, args.output or sys.stdout)


def _threshold(args, config: ExperimentConfig, logger: SimLogger) -> None:
    cfg = HiraConfig(t1=config.hira.t1, t2=config.hira.t2)
    report = measure_thresholds(_chip(config), args.victims, bank=args.bank, cfg=cfg, logger=logger)
    write_threshold_csv(report, args.output or sys.stdout)


def _para_solve(args, config: ExperimentConfig, logger: SimLogger) -> None:
    n_rh_values = args.n_rh or [config.para.N_RH]
    multiples = args.slack or [config.scheduler.tRefSlack_multiple]
    solver = args.solver or config.para.solver
    timing = config.timing

    if solver is ParaSolvers.CLOSED_FORM:
        rows = para_table(n_rh_values, multiples, tREFW=timing.tREFW, tRC=timing.tRC, target=config.para.target_p_RH,
                          in_flight_activations=config.para.in_flight_activations)
        for row in rows:
            logger.log(SimEventTypes.SOLVER_RESULT, n_rh=row["N_RH"], slack=row["slack_multiple"] * timing.tRC,
                       p_th=row["p_th"])
        write_para_table(rows, args.output or sys.stdout)
        return

    output = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    try:
        output.write("# hira-sim para-exact v1\nN_RH,slack_multiple,p_th\n")
        for n_rh in n_rh_values:
            for multiple in multiples:
                params = ParaParams(N_RH=n_rh, tREFW=timing.tREFW, tRC=timing.tRC, N_RefSlack=multiple * timing.tRC,
                                    in_flight_activations=config.para.in_flight_activations,
                                    target_p_RH=config.para.target_p_RH)
                p_th = solve_p_th_exact(n_rh, params.T_slots, params.target_p_RH, params.HC_deadline)
                logger.log(SimEventTypes.SOLVER_RESULT, n_rh=n_rh, slack=params.N_RefSlack, p_th=p_th)
                output.write(f"{n_rh},{multiple},{p_th:.6g}\n")
    finally:
        if output is not sys.stdout:
            output.close()


def _security(args, config: ExperimentConfig, logger: SimLogger) -> None:
    result = run_security_trials(config, args.trials, args.seed, p_th=args.p_th, logger=logger)
    print(f"p_th={result.p_th:.6g} flipped_trials={result.flipped_trials}/{result.trials} "
          f"total_flips={result.total_flips}")


HANDLERS = {
    "simulate": _simulate,
    "sweep": _sweep,
    "coverage": _coverage,
    "threshold": _threshold,
    "para-solve": _para_solve,
    "security": _security,
}


def main(argv: list[str] | None = None) -> int:
    args = build_arg_parser().parse_args(argv)
    logger = SimLogger()
    logger.log(SimEventTypes.STARTING)

    try:
        config = parse_config(args.config, args.overrides)
        logger.log(SimEventTypes.CONFIG_LOADED, source=args.config or "defaults")
        HANDLERS[args.command](args, config, logger)
    except (ConfigParseError, ConfigValidationError, TraceFormatError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (UnreachableTargetError, TableSizeError, NoBitFlipError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvariantViolationError, CorruptionDetectedError) as e:
        print(f"invariant violated: {e}", file=sys.stderr)
        return EXIT_INVARIANT

    logger.log(SimEventTypes.FINISHED, command=args.command)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
