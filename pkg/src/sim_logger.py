from datetime import datetime
from pathlib import Path
from src.shared_enum_vars import SimEventTypes
from src.config import load_settings


class SimLogger:
    def __init__(
            self,
            debug: bool | None = None,
            log_dir: str | Path | None = None,
            log_file_created_at: datetime | None = None
    ):
        settings = load_settings()
        self.debug = settings.debug if debug is None else debug
        self.log_dir = Path(log_dir) if log_dir is not None else settings.log_dir

        created_at = log_file_created_at or datetime.now()
        self.log_filename = "log_" + created_at.strftime("%Y%m%d%H%M%S%f") + ".txt"
        self.lines_written = 0

    @property
    def log_path(self) -> Path:
        return self.log_dir / self.log_filename

    def log(self, event_type: SimEventTypes, timestamp: datetime | None = None, **kwargs) -> str:
        """
        Log one run event. Each line reads
            <timestamp> [<EVENT>] <message>
        for example
            2024-03-02 10:15:02.113420 [WINDOW_ROLLOVER] channel 0 bank 3 entered window 2 at 125000000 ps
        :param event_type: member of SimEventTypes
        :param timestamp: wall-clock time of the event, now when omitted
        :param kwargs: event-specific values, see the match below for the required ones
        :return: the logged line
        """
        timestamp = timestamp or datetime.now()
        line_beginning = f"{timestamp} [{event_type.value}] "

        match event_type:
            case SimEventTypes.STARTING:
                message = "Simulator is starting..."

            case SimEventTypes.CONFIG_LOADED:
                try:
                    message = f"Configuration loaded from {kwargs['source']}"
                except KeyError:
                    raise KeyError("'source' key argument required.")

            case SimEventTypes.SIMULATION_STARTED:
                try:
                    message = f"Simulating {kwargs['mode']} for {kwargs['duration_ps']} ps " \
                              f"({kwargs['sources']} sources)"
                except KeyError:
                    raise KeyError("'mode', 'duration_ps', 'sources' key arguments required.")

            case SimEventTypes.WINDOW_ROLLOVER:
                try:
                    message = f"channel {kwargs['channel']} bank {kwargs['bank']} entered window {kwargs['window']} " \
                              f"at {kwargs['time_ps']} ps"
                except KeyError:
                    raise KeyError("'channel', 'bank', 'window', 'time_ps' key arguments required.")

            case SimEventTypes.DEADLINE_VIOLATION:
                try:
                    message = f"{kwargs['kind']} refresh of channel {kwargs['channel']} bank {kwargs['bank']} " \
                              f"performed at {kwargs['time_ps']} ps, deadline was {kwargs['deadline_ps']} ps"
                except KeyError:
                    raise KeyError("'kind', 'channel', 'bank', 'time_ps', 'deadline_ps' key arguments required.")

            case SimEventTypes.RETENTION_EXPIRED:
                try:
                    message = f"channel {kwargs['channel']} bank {kwargs['bank']}: {len(kwargs['rows'])} row(s) " \
                              f"not restored within tREFW at {kwargs['time_ps']} ps"
                except KeyError:
                    raise KeyError("'channel', 'bank', 'rows', 'time_ps' key arguments required.")

            case SimEventTypes.CORRUPTION:
                try:
                    message = f"channel {kwargs['channel']} bank {kwargs['bank']} rows {kwargs['rows']} corrupted " \
                              f"at {kwargs['time_ps']} ps"
                except KeyError:
                    raise KeyError("'channel', 'bank', 'rows', 'time_ps' key arguments required.")

            case SimEventTypes.BACKPRESSURE:
                try:
                    message = f"channel {kwargs['channel']} bank {kwargs['bank']} stalls activations at " \
                              f"{kwargs['time_ps']} ps"
                except KeyError:
                    raise KeyError("'channel', 'bank', 'time_ps' key arguments required.")

            case SimEventTypes.SWEEP_POINT:
                try:
                    message = f"{kwargs['axis']}={kwargs['value']} {kwargs['mode']}: " \
                              f"weighted speedup {kwargs['weighted_speedup']:.4f}"
                except KeyError:
                    raise KeyError("'axis', 'value', 'mode', 'weighted_speedup' key arguments required.")

            case SimEventTypes.SWEEP_POINT_FAILED:
                try:
                    message = f"{kwargs['axis']}={kwargs['value']} {kwargs['mode']} failed: {kwargs['error']}"
                except KeyError:
                    raise KeyError("'axis', 'value', 'mode', 'error' key arguments required.")

            case SimEventTypes.SOLVER_RESULT:
                try:
                    message = f"N_RH={kwargs['n_rh']} slack={kwargs['slack']} -> p_th={kwargs['p_th']:.6g}"
                except KeyError:
                    raise KeyError("'n_rh', 'slack', 'p_th' key arguments required.")

            case SimEventTypes.CHARACTERIZATION:
                try:
                    message = f"{kwargs['experiment']}: {kwargs['summary']}"
                except KeyError:
                    raise KeyError("'experiment', 'summary' key arguments required.")

            case SimEventTypes.FINISHED:
                message = "Simulator finished. " + ", ".join(f"{key}={val}" for key, val in kwargs.items())

            case SimEventTypes.DEBUG:
                try:
                    if 'message' in kwargs:
                        message = f"({kwargs['func_name']}) {kwargs['message']}"
                    else:
                        message = f"({kwargs['func_name']}) " + ", ".join(
                            f"{key}={val}" for key, val in kwargs.items() if key != 'func_name'
                        )
                except KeyError:
                    raise KeyError("'func_name' key argument required.")

            case _:
                raise ValueError('Unrecognised value of event_type.')

        line = line_beginning + message
        if self.debug:
            print(line)
        else:
            self.log_dir.mkdir(parents=True, exist_ok=True)
            with open(self.log_path, 'a', encoding="utf-8") as f:
                f.write(line + "\n")
        self.lines_written += 1
        return line
