import csv
import math
from pathlib import Path
from typing import NamedTuple, Iterable, TextIO
import numpy as np
from scipy import optimize, special, stats
from src.schema import ParaParams, ParaSolution


BRACKET = (1e-9, 1.0)
XTOL = 1e-6
MAX_ITERATIONS = 80
DP_CELL_LIMIT = 500_000_000

PARA_TABLE_HEADER = ["N_RH", "slack_multiple", "p_th", "p_rh", "k", "legacy_p_th", "legacy_p_rh"]


class UnreachableTargetError(Exception):
    pass


class TableSizeError(Exception):
    pass


class UndefinedEstimateError(Exception):
    pass


class MonteCarloEstimate(NamedTuple):
    estimate: float
    low: float
    high: float
    successes: int
    trials: int

    def covers(self, value: float) -> bool:
        return self.low <= value <= self.high


def _check_probability(p_th: float) -> None:
    if not 0.0 < p_th <= 1.0:
        raise ValueError(f"p_th must be within (0, 1], got {p_th}.")


def failed_attempt_prob(hc: int, p_th: float, n_rh: int | None = None) -> float:
    """Probability that an attempt reaches hammer count hc and is then stopped by a preventive refresh."""
    _check_probability(p_th)
    if hc < 1 or (n_rh is not None and hc >= n_rh):
        raise ValueError(f"hammer count {hc} is outside 1..N_RH-1.")
    return (1 - p_th / 2) ** hc * (p_th / 2)


def window_too_small(params: ParaParams) -> bool:
    return params.T_slots - params.N_RH - params.HC_deadline < 0


def n_f_max(params: ParaParams) -> int:
    """
    Most failed attempts that still leave room for a successful one inside the refresh window; 0 when the window
    cannot even hold one successful attempt (see window_too_small).
        >>> n_f_max(ParaParams(N_RH=9600, tREFW=64_000_000_000, tRC=46250))
        687091
    """
    return max(0, (params.T_slots - params.N_RH - params.HC_deadline) // 2)


def _log_terms(p_th: float, params: ParaParams) -> tuple[float, float, int]:
    log_q = math.log1p(-p_th / 2)
    log_r = math.log(p_th / 2) + log_q
    return log_q, log_r, n_f_max(params)


def log_p_rh(p_th: float, params: ParaParams) -> float:
    """
    Natural log of the attacker's success probability over one refresh window. The sum over failed attempts is a
    geometric series in r = (p_th/2)(1 - p_th/2) and is evaluated in closed form.
    """
    _check_probability(p_th)
    if params.T_slots < params.N_RH - params.HC_deadline:
        return -math.inf

    log_q, log_r, attempts = _log_terms(p_th, params)
    # log((1 - r^(M+1)) / (1 - r))
    log_series = math.log(-math.expm1((attempts + 1) * log_r)) - math.log1p(-math.exp(log_r))
    return (params.N_RH - params.HC_deadline) * log_q + log_series


def log_p_rh_terms(p_th: float, params: ParaParams) -> float:
    """Same quantity as log_p_rh, accumulated term by term."""
    _check_probability(p_th)
    if params.T_slots < params.N_RH - params.HC_deadline:
        return -math.inf

    log_q, log_r, attempts = _log_terms(p_th, params)
    failed = np.arange(attempts + 1, dtype=np.float64)
    return float((params.N_RH - params.HC_deadline) * log_q + special.logsumexp(failed * log_r))


def p_rh(p_th: float, params: ParaParams) -> float:
    """
        >>> p_rh(0.5, ParaParams(N_RH=2, tREFW=4, tRC=1))
        0.66796875
    """
    return math.exp(log_p_rh(p_th, params))


def legacy_p_rh(p_th: float, n_rh: int) -> float:
    _check_probability(p_th)
    return (1 - p_th / 2) ** n_rh


def k_factor(p_th: float, params: ParaParams) -> float:
    """Ratio between the success probability with failed attempts and slack, and the single-attempt estimate."""
    _check_probability(p_th)
    log_q, log_r, attempts = _log_terms(p_th, params)
    log_series = math.log(-math.expm1((attempts + 1) * log_r)) - math.log1p(-math.exp(log_r))
    return math.exp(-params.HC_deadline * log_q + log_series)


def _bisect_smallest(log_probability, log_target: float) -> tuple[float, int]:
    low, high = BRACKET
    if log_probability(high) > log_target:
        raise UnreachableTargetError(
            f"even p_th = 1 leaves a success probability of {math.exp(log_probability(high)):.3e}."
        )
    if log_probability(low) <= log_target:
        return low, 0

    root, result = optimize.bisect(lambda p: log_probability(p) - log_target, low, high, xtol=XTOL,
                                   maxiter=MAX_ITERATIONS, full_output=True)
    iterations = result.iterations
    # bisect stops anywhere inside the tolerance, step up until the target holds
    while log_probability(root) > log_target:
        root = min(high, root + XTOL / 4)
        iterations += 1
    return root, iterations


def solve_p_th(params: ParaParams) -> ParaSolution:
    """
    Smallest p_th (to 1e-6) whose success probability stays at or below params.target_p_RH.

    :raises UnreachableTargetError: when p_th = 1 is not enough
    """
    log_target = math.log(params.target_p_RH)
    if params.T_slots < params.N_RH - params.HC_deadline:
        return ParaSolution(p_th=0.0, p_rh=0.0, iterations=0, n_f_max=0)

    p_th, iterations = _bisect_smallest(lambda p: log_p_rh(p, params), log_target)
    return ParaSolution(p_th=p_th, p_rh=p_rh(p_th, params), iterations=iterations, n_f_max=n_f_max(params))


def legacy_solve_p_th(n_rh: int, target: float = 1e-15) -> float:
    if not 0.0 < target < 1.0:
        raise ValueError("target must be within (0, 1).")
    p_th, _ = _bisect_smallest(lambda p: n_rh * math.log1p(-p / 2), math.log(target))
    return p_th


def exact_success_dp(p_th: float, n_rh: int, t_slots: int, *, cell_limit: int = DP_CELL_LIMIT) -> float:
    """
    Exact probability that the hammer count reaches n_rh within t_slots activation slots. Every activation takes
    one slot; with probability p_th/2 it is followed by a refresh of the victim, which resets the count and takes
    one more slot.
        >>> exact_success_dp(0.5, 2, 4)
        0.703125
    """
    _check_probability(p_th)
    if n_rh < 1 or t_slots < 0:
        raise ValueError("n_rh must be at least 1 and t_slots must not be negative.")
    if n_rh * t_slots > cell_limit:
        raise TableSizeError(f"{t_slots} slots x {n_rh} states exceeds the {cell_limit} cell limit.")
    if t_slots < n_rh:
        return 0.0

    q = 1 - p_th / 2
    # f[t][r]: success probability with t slots left at hammer count r
    two_back = np.zeros(n_rh)
    one_back = np.zeros(n_rh)
    for _ in range(1, t_slots + 1):
        advanced = np.empty(n_rh)
        advanced[:-1] = one_back[1:]
        advanced[-1] = 1.0
        current = q * advanced + (1 - q) * two_back[0]
        two_back, one_back = one_back, current
    return float(one_back[0])


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    if trials <= 0:
        raise UndefinedEstimateError("an estimate needs at least one trial.")
    z = stats.norm.ppf(1 - (1 - confidence) / 2)
    p = successes / trials
    denominator = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denominator
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denominator
    return max(0.0, centre - half), min(1.0, centre + half)


def monte_carlo_p_rh(p_th: float, n_rh: int, t_slots: int, trials: int, seed: int,
                     confidence: float = 0.95) -> MonteCarloEstimate:
    """Seeded simulation of the hammer-count chain, all trials advanced together."""
    _check_probability(p_th)
    if trials <= 0:
        raise UndefinedEstimateError("an estimate needs at least one trial.")

    rng = np.random.default_rng(seed)
    q = 1 - p_th / 2
    count = np.zeros(trials, dtype=np.int64)
    remaining = np.full(trials, t_slots, dtype=np.int64)
    success = np.zeros(trials, dtype=bool)
    active = remaining >= 1

    while active.any():
        idx = np.flatnonzero(active)
        hammered = rng.random(idx.size) < q

        hit = idx[hammered]
        count[hit] += 1
        remaining[hit] -= 1
        success[hit[count[hit] >= n_rh]] = True

        reset = idx[~hammered]
        count[reset] = 0
        remaining[reset] -= 2

        active = ~success & (remaining >= 1)

    successes = int(success.sum())
    low, high = wilson_interval(successes, trials, confidence)
    return MonteCarloEstimate(successes / trials, low, high, successes, trials)


def solve_p_th_exact(n_rh: int, t_slots: int, target: float, hc_deadline: int = 0) -> float:
    """
    Smallest p_th whose exact chain probability stays at or below target. The hc_deadline hammers an attacker
    lands while a refresh waits in the queue are modelled by lowering the threshold.
    """
    effective = n_rh - hc_deadline
    if effective < 1:
        raise ValueError("hc_deadline must be smaller than n_rh.")
    if not 0.0 < target < 1.0:
        raise ValueError("target must be within (0, 1).")

    def log_probability(p):
        probability = exact_success_dp(p, effective, t_slots)
        return math.log(probability) if probability > 0 else -math.inf

    p_th, _ = _bisect_smallest(log_probability, math.log(target))
    return p_th


def para_table(n_rh_values: Iterable[int], slack_multiples: Iterable[int], *, tREFW: int, tRC: int,
               target: float = 1e-15, in_flight_activations: int = 0) -> list[dict]:
    """Rows of N_RH,slack_multiple,p_th,p_rh,k,legacy_p_th,legacy_p_rh for every combination."""
    rows = []
    for n_rh in n_rh_values:
        legacy = legacy_solve_p_th(n_rh, target)
        for multiple in slack_multiples:
            params = ParaParams(N_RH=n_rh, tREFW=tREFW, tRC=tRC, N_RefSlack=multiple * tRC,
                                in_flight_activations=in_flight_activations, target_p_RH=target)
            solution = solve_p_th(params)
            rows.append({
                "N_RH": n_rh,
                "slack_multiple": multiple,
                "p_th": solution.p_th,
                "p_rh": solution.p_rh,
                "k": k_factor(solution.p_th, params) if solution.p_th > 0 else 1.0,
                "legacy_p_th": legacy,
                "legacy_p_rh": p_rh(legacy, params),
            })
    return rows


def write_para_table(rows: list[dict], target: str | Path | TextIO) -> None:
    if isinstance(target, (str, Path)):
        with open(target, "w", newline="", encoding="utf-8") as file:
            write_para_table(rows, file)
        return

    target.write("# hira-sim para-table v1\n")
    writer = csv.DictWriter(target, fieldnames=PARA_TABLE_HEADER)
    writer.writeheader()
    for row in rows:
        writer.writerow({key: f"{value:.6g}" if isinstance(value, float) else value for key, value in row.items()})
