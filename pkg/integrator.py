# standard
from dataclasses import dataclass, field
import math
import time
# external
import numpy as np
# local
from codelist import CodeList
import logstring
from taylor_kernel import KernelError, horner, run_codelist, state_coeffs


ORDER_MIN = 4
ORDER_MAX = 40
MIN_SHRINK = 0.1
MAX_SHRINK = 0.9
DEFAULT_SAFETY = 0.5


class IntegrationError(RuntimeError):
    """Integration stopped. t0 is the start of the step that failed, line the failing code-list line if any."""
    def __init__(self, message: str, t0: float = None, line: int = None):
        super().__init__(message)
        self.t0 = t0
        self.line = line


class MaxStepsExceeded(IntegrationError):
    """More step attempts than SolveConfig.max_steps."""


class OutsideSpan(ValueError):
    """Dense output requested outside the integrated interval."""


@dataclass
class SolveConfig:
    atol: float
    rtol: float
    t_span: tuple[float, float]
    order_override: int | None = None
    safety: float = DEFAULT_SAFETY
    max_steps: int = 100_000
    check_reads: bool | None = None         # None: use the TAYLOR_READ_TRAP env variable

    def __post_init__(self):
        if self.atol <= 0 or self.rtol <= 0:
            raise ValueError("Tolerances must be positive.")
        if float(self.t_span[0]) == float(self.t_span[1]):
            raise ValueError(f"Empty integration interval: t_end equals t_begin = {self.t_span[0]}.")
        if not 0 < self.safety <= 1:
            raise ValueError(f"Safety factor must be in (0, 1], got {self.safety}.")
        if self.order_override is not None and self.order_override < 1:
            raise ValueError(f"Order must be at least 1, got {self.order_override}.")


@dataclass
class StepRecord:
    t: float
    h: float                # Signed step size
    p: int
    accepted: bool
    error: float


@dataclass
class Segment:
    """Accepted step: state series expanded at t0, valid on [t0, t0 + h]."""
    t0: float
    h: float
    coeffs: np.ndarray


@dataclass
class Solution:
    t_span: tuple[float, float]
    p: int
    final_state: np.ndarray
    segments: list[Segment] = field(default_factory=list)
    steps: list[StepRecord] = field(default_factory=list)
    time_s: float = 0.0

    @property
    def steps_accepted(self) -> int:
        return sum(step.accepted for step in self.steps)

    @property
    def steps_failed(self) -> int:
        return sum(not step.accepted for step in self.steps)

    @property
    def mesh(self) -> np.ndarray:
        """Start of every accepted step, followed by the end of the interval."""
        return np.array([segment.t0 for segment in self.segments] + [self.t_span[1]])


def choose_order(atol: float, rtol: float) -> int:
    """Order from the tolerance: ceil(-0.5 ln(tol) + 1), clamped to [4, 40]."""
    p = math.ceil(-0.5 * math.log(min(atol, rtol)) + 1)
    return min(max(p, ORDER_MIN), ORDER_MAX)


def error_scale(state: np.ndarray, atol: float, rtol: float) -> np.ndarray:
    return atol + rtol * np.abs(state)


def propose_step(coeffs: np.ndarray, scale: np.ndarray, p: int, safety: float,
                 previous_h: float = None) -> float:
    """
    Step size from the last two coefficients: safety * min over q in {p-1, p} of (1/rho_q)^(1/q),
    rho_q being the largest scaled |c_q|.
    If both vanish: twice the previous step, or inf on the first step (clipped to the interval by the caller).
    """
    candidates = list()
    for q in (p - 1, p):
        rho = float(np.max(np.abs(coeffs[:, q]) / scale))
        if q > 0 and rho > 0:
            candidates.append((1 / rho) ** (1 / q))
    if not candidates:
        return 2 * previous_h if previous_h else math.inf
    return safety * min(candidates)


def step_accept(coeffs: np.ndarray, h: float, scale: np.ndarray, p: int) -> tuple[bool, float]:
    """
    Scaled size of the order-p term: err = max |c_p| |h|^p / scale. Accept if err <= 1.
    solve passes the first order its step omits, p + 1 for an order-p method.
    """
    error = float(np.max(np.abs(coeffs[:, p]) * abs(h) ** p / scale))
    return error <= 1, error


def solve(code_list: CodeList, ics, config: SolveConfig) -> Solution:
    """
    Integrate from t_span[0] to t_span[1] (either direction) with variable steps of fixed order.
    The final step is shortened to end exactly at t_span[1].
    Steps are proposed from the last two coefficients of the order-p series and accepted on the order p + 1 term.
    A rejected step is retried on the same series with a smaller h.
    :param code_list: Traced right-hand side
    :param ics: State at t_span[0]
    :param config: Tolerances, interval and step control settings
    :return: Solution with dense output segments and the step history
    """
    started = time.perf_counter()
    t_begin, t_end = (float(value) for value in config.t_span)
    p = config.order_override or choose_order(config.atol, config.rtol)
    direction = 1.0 if t_end >= t_begin else -1.0
    state = np.asarray(ics, dtype=float).copy()
    solution = Solution(t_span=(t_begin, t_end), p=p, final_state=state)
    logstring.SolveBegin(code_list.n_state, p, (t_begin, t_end), config.atol, config.rtol).record("INFO")

    t = t_begin
    previous_h = None
    while (t_end - t) * direction > 0:
        try:
            workspace = run_codelist(code_list, state, t, p + 1, check_reads=config.check_reads)
        except KernelError as error:
            raise IntegrationError(f"Taylor coefficients failed at t={t}: {error}", t0=t, line=error.line) from error
        # Orders 0..p advance the state, order p + 1 is the first omitted term and judges the step
        extended = state_coeffs(workspace, code_list.n_state).copy()
        coeffs = extended[:, :p + 1]
        scale = error_scale(state, config.atol, config.rtol)
        remaining = abs(t_end - t)
        h = min(propose_step(coeffs, scale, p, config.safety, previous_h), remaining)

        while True:
            if len(solution.steps) >= config.max_steps:
                logstring.MaxStepsAbort(config.max_steps, t).record("ERROR")
                raise MaxStepsExceeded(f"More than {config.max_steps} steps.", t0=t)
            if h <= 4 * np.finfo(float).eps * max(1.0, abs(t)):
                raise IntegrationError(f"Step size underflow at t={t}: h={h}.", t0=t)
            accepted, error = step_accept(extended, h, scale, p + 1)
            solution.steps.append(StepRecord(t=t, h=direction * h, p=p, accepted=accepted, error=error))
            if accepted:
                break
            new_h = h * min(max(config.safety * error ** (-1 / (p + 1)), MIN_SHRINK), MAX_SHRINK)
            logstring.StepRejected(t, direction * h, error, direction * new_h).record("DEBUG")
            h = new_h

        solution.segments.append(Segment(t0=t, h=direction * h, coeffs=coeffs))
        state = horner(coeffs, direction * h)
        t = t_end if h >= remaining else t + direction * h
        previous_h = h

    solution.final_state = state
    solution.time_s = time.perf_counter() - started
    logstring.SolveFinished(solution.steps_accepted, solution.steps_failed, t_end, solution.time_s).record("INFO")
    return solution


def dense_eval(solution: Solution, t: float) -> np.ndarray:
    """
    State at any t in the integrated interval from the stored series.
    At a mesh point the segment starting there is used, at the end of the interval the final state.
    """
    t_begin, t_end = solution.t_span
    direction = 1.0 if t_end >= t_begin else -1.0
    if (t - t_begin) * direction < 0 or (t_end - t) * direction < 0:
        raise OutsideSpan(f"t={t} is outside the integrated interval [{t_begin}, {t_end}].")
    if t == t_end or not solution.segments:
        return solution.final_state.copy()
    starts = direction * np.array([segment.t0 for segment in solution.segments])
    position = int(np.searchsorted(starts, direction * t, side="right")) - 1
    segment = solution.segments[position]
    return horner(segment.coeffs, t - segment.t0)
