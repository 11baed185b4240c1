# standard
import csv
from dataclasses import dataclass, field
import math
import time
from typing import Callable
# external
import numpy as np
# local
import codelist
from codelist import CodeList, UnknownParameter
import integrator
from integrator import IntegrationError, SolveConfig
import logstring
from stdfuncs import cos, exp, sin, sqrt
from taylor_kernel import KernelError


SCD_CAP = 16.0
SCD_DENOMINATOR_FLOOR = 1e-300
SCD_EXCLUDE_RELATIVE = 1e-12        # Components below this fraction of the reference max-norm are left out
REFERENCE_TOL = 3e-14
CSV_COLUMNS = ("tol", "p", "scd", "steps_accepted", "steps_failed", "time_s")


@dataclass
class BuiltProblem:
    code_list: CodeList
    ics: np.ndarray
    t_span: tuple[float, float]
    params: dict[str, float]
    build_time_s: float


@dataclass
class ProblemDef:
    """
    Benchmark problem: right-hand side f(t, x, p) to trace, parameter defaults, initial state
    as a function of the parameters, and optional conserved quantities and closed-form solution.
    """
    name: str
    rhs: Callable
    n_state: int
    params: dict[str, float]
    initial_state: Callable[[dict], np.ndarray]
    t_span: tuple[float, float]
    invariants: dict[str, Callable[[np.ndarray, dict], float]] = field(default_factory=dict)
    exact: Callable[[float, dict], np.ndarray] | None = None
    stiff_order: int | None = None          # Fixed order used for sweeps, None for the tolerance formula

    def resolve_params(self, overrides: dict = None) -> dict[str, float]:
        unknown = set(overrides or dict()) - set(self.params)
        if unknown:
            raise UnknownParameter(f"Problem '{self.name}' has no parameter(s) {sorted(unknown)}.")
        return {**self.params, **{name: float(value) for name, value in (overrides or dict()).items()}}

    def build(self, params: dict = None) -> BuiltProblem:
        values = self.resolve_params(params)
        started = time.perf_counter()
        code_list = codelist.trace(self.rhs, self.n_state, values)
        build_time_s = time.perf_counter() - started
        return BuiltProblem(code_list, np.asarray(self.initial_state(values), dtype=float), self.t_span,
                            values, build_time_s)


@dataclass
class RunReport:
    problem: str
    tol: float
    p: int
    scd: float
    steps_accepted: int
    steps_failed: int
    time_s: float
    build_time_s: float
    final_state: np.ndarray | None = None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


###################
# Spring pendulum #
###################

def spring_pendulum_rhs(t, x, p):
    """State (r, r', theta, theta'). The spring force k/m (s + 1 - exp(-s)) of stretch s stiffens when compressed."""
    r, s, theta, omega = x
    stretch = r - p["a"]
    ds = r * omega * omega + p["g"] * cos(theta) - p["k"] / p["m"] * (stretch + 1 - exp(-stretch))
    domega = (-2 * s * omega - p["g"] * sin(theta)) / r
    return [s, ds, omega, domega]


def spring_pendulum_energy(state: np.ndarray, params: dict) -> float:
    r, s, theta, omega = state
    stretch = r - params["a"]
    potential = 0.5 * stretch ** 2 + math.exp(-stretch) - 1 + stretch
    return (0.5 * params["m"] * (s ** 2 + (r * omega) ** 2) + params["k"] * potential
            - params["m"] * params["g"] * r * math.cos(theta))


def problem_spring_pendulum(g: float = 9.81, k: float = 40.0, m: float = 1.0, a: float = 1.0) -> ProblemDef:
    if k <= 0 or m <= 0:
        raise ValueError("Spring constant and mass must be positive.")
    return ProblemDef(
        name="spring-pendulum",
        rhs=spring_pendulum_rhs,
        n_state=4,
        params={"g": g, "k": k, "m": m, "a": a},
        initial_state=lambda p: np.array([p["a"] + p["m"] * p["g"] / p["k"], 0.0, math.pi / 4, 4.65]),
        t_span=(0.0, 20.0),
        invariants={"energy": spring_pendulum_energy})


############
# Pleiades #
############

PLEIADES_BODIES = 7
PLEIADES_X0 = (3.0, 3.0, -1.0, -3.0, 2.0, -2.0, 2.0)
PLEIADES_Y0 = (3.0, -3.0, 2.0, 0.0, 0.0, -4.0, 4.0)
PLEIADES_VX0 = (0.0, 0.0, 0.0, 0.0, 0.0, 1.75, -1.5)
PLEIADES_VY0 = (0.0, 0.0, 0.0, -1.25, 1.0, 0.0, 0.0)


def _accumulate(total, term, sign: float = 1.0):
    if total is None:
        return term if sign > 0 else -term
    return total + term if sign > 0 else total - term


def pleiades_rhs(t, z, p):
    """State (x1..x7, y1..y7, x1'..x7', y1'..y7'). Each pair contributes G m (p_j - p_i) / r_ij^3."""
    n = PLEIADES_BODIES
    x, y, vx, vy = z[:n], z[n:2 * n], z[2 * n:3 * n], z[3 * n:]
    ax, ay = [None] * n, [None] * n
    for i in range(n):
        for j in range(i + 1, n):
            dx, dy = x[j] - x[i], y[j] - y[i]
            r2 = dx * dx + dy * dy
            r3 = r2 * sqrt(r2)
            fx, fy = dx / r3, dy / r3
            ax[i] = _accumulate(ax[i], p["G"] * p[f"m{j + 1}"] * fx)
            ay[i] = _accumulate(ay[i], p["G"] * p[f"m{j + 1}"] * fy)
            ax[j] = _accumulate(ax[j], p["G"] * p[f"m{i + 1}"] * fx, sign=-1.0)
            ay[j] = _accumulate(ay[j], p["G"] * p[f"m{i + 1}"] * fy, sign=-1.0)
    return list(vx) + list(vy) + ax + ay


def _pleiades_split(state: np.ndarray, params: dict):
    n = PLEIADES_BODIES
    masses = np.array([params[f"m{i + 1}"] for i in range(n)])
    return masses, state[:n], state[n:2 * n], state[2 * n:3 * n], state[3 * n:]


def pleiades_momentum(state: np.ndarray, params: dict) -> np.ndarray:
    masses, _, _, vx, vy = _pleiades_split(state, params)
    return np.array([masses @ vx, masses @ vy])


def pleiades_angular_momentum(state: np.ndarray, params: dict) -> float:
    masses, x, y, vx, vy = _pleiades_split(state, params)
    return float(masses @ (x * vy - y * vx))


def pleiades_energy(state: np.ndarray, params: dict) -> float:
    masses, x, y, vx, vy = _pleiades_split(state, params)
    kinetic = 0.5 * masses @ (vx ** 2 + vy ** 2)
    potential = 0.0
    for i in range(PLEIADES_BODIES):
        for j in range(i + 1, PLEIADES_BODIES):
            potential -= params["G"] * masses[i] * masses[j] / math.hypot(x[j] - x[i], y[j] - y[i])
    return float(kinetic + potential)


def problem_pleiades() -> ProblemDef:
    params = {"G": 1.0} | {f"m{i + 1}": float(i + 1) for i in range(PLEIADES_BODIES)}
    return ProblemDef(
        name="pleiades",
        rhs=pleiades_rhs,
        n_state=4 * PLEIADES_BODIES,
        params=params,
        initial_state=lambda p: np.array(PLEIADES_X0 + PLEIADES_Y0 + PLEIADES_VX0 + PLEIADES_VY0),
        t_span=(0.0, 3.0),
        invariants={"momentum": pleiades_momentum,
                    "angular_momentum": pleiades_angular_momentum,
                    "energy": pleiades_energy})


###############
# Brusselator #
###############

BRUSSELATOR_BOUNDARY_U = 1.0
BRUSSELATOR_BOUNDARY_V = 3.0
BRUSSELATOR_STIFF_ORDER = 20


def brusselator_rhs_factory(n_points: int) -> Callable:
    """
    Right-hand side of the 1-D Brusselator on n_points interior grid points, state (u1, v1, u2, v2, ...).
    Diffusion is alpha (N+1)^2 (w_(i-1) - 2 w_i + w_(i+1)) with fixed boundary values u = 1, v = 3.
    """
    def brusselator_rhs(t, z, p):
        diffusion = p["alpha"] * (n_points + 1) ** 2
        u = [BRUSSELATOR_BOUNDARY_U] + [z[2 * i] for i in range(n_points)] + [BRUSSELATOR_BOUNDARY_U]
        v = [BRUSSELATOR_BOUNDARY_V] + [z[2 * i + 1] for i in range(n_points)] + [BRUSSELATOR_BOUNDARY_V]
        derivatives = list()
        for i in range(1, n_points + 1):
            uuv = u[i] * u[i] * v[i]
            derivatives.append(1 + uuv - 4 * u[i] + diffusion * (u[i - 1] - 2 * u[i] + u[i + 1]))
            derivatives.append(3 * u[i] - uuv + diffusion * (v[i - 1] - 2 * v[i] + v[i + 1]))
        return derivatives
    return brusselator_rhs


def brusselator_initial_state(n_points: int) -> np.ndarray:
    grid = np.arange(1, n_points + 1) / (n_points + 1)
    state = np.empty(2 * n_points)
    state[0::2] = 1 + np.sin(2 * np.pi * grid)
    state[1::2] = 3.0
    return state


def problem_brusselator(n_points: int = 20, alpha: float = 1 / 50) -> ProblemDef:
    if n_points < 2:
        raise ValueError(f"Brusselator needs at least 2 grid points, got {n_points}.")
    return ProblemDef(
        name=f"brusselator-{n_points}",
        rhs=brusselator_rhs_factory(n_points),
        n_state=2 * n_points,
        params={"alpha": alpha},
        initial_state=lambda p: brusselator_initial_state(n_points),
        t_span=(0.0, 10.0),
        stiff_order=BRUSSELATOR_STIFF_ORDER)


PROBLEMS = {
    "spring-pendulum": problem_spring_pendulum,
    "pleiades": problem_pleiades,
    "brusselator": problem_brusselator}


#######
# SCD #
#######

def scd(final: np.ndarray, reference: np.ndarray) -> float:
    """
    Significant correct digits: -log10 of the largest componentwise relative error, capped at 16.
    Components tiny against the reference max-norm are excluded.
    """
    final, reference = np.asarray(final, dtype=float), np.asarray(reference, dtype=float)
    norm = np.max(np.abs(reference)) if reference.size else 0.0
    if norm == 0:
        raise ValueError("Reference solution is zero.")
    included = np.abs(reference) >= SCD_EXCLUDE_RELATIVE * norm
    relative = np.abs(final[included] - reference[included]) / np.maximum(np.abs(reference[included]),
                                                                           SCD_DENOMINATOR_FLOOR)
    worst = float(np.max(relative))
    if not np.isfinite(worst):
        return -math.inf
    if worst == 0:
        return SCD_CAP
    return min(-math.log10(worst), SCD_CAP)


#########
# Suite #
#########

def run_suite(problem: ProblemDef, tolerances: list[float], order_policy: int | None = None,
              reference_tol: float = REFERENCE_TOL, params: dict = None,
              safety: float = integrator.DEFAULT_SAFETY, max_steps: int = 100_000) -> list[RunReport]:
    """
    Tolerance sweep against a reference solution computed with the same integrator.
    :param problem: Problem to integrate
    :param tolerances: atol = rtol values, one report each
    :param order_policy: Fixed order, or None to choose it from each tolerance
    :param reference_tol: Tolerance of the reference run
    :param params: Parameter overrides
    :param safety: Step size safety factor
    :param max_steps: Step limit per run
    :return: One RunReport per tolerance. Failed runs have error set and scd nan.
    """
    built = problem.build(params)

    def configure(tolerance: float) -> SolveConfig:
        return SolveConfig(atol=tolerance, rtol=tolerance, t_span=built.t_span, order_override=order_policy,
                           safety=safety, max_steps=max_steps)

    logstring.ReferenceRun(problem.name, reference_tol).record("INFO")
    reference = integrator.solve(built.code_list, built.ics, configure(reference_tol)).final_state

    reports = list()
    for tolerance in tolerances:
        p = order_policy or integrator.choose_order(tolerance, tolerance)
        logstring.SweepRowBegin(problem.name, tolerance, p).record("INFO")
        try:
            solution = integrator.solve(built.code_list, built.ics, configure(tolerance))
        except (IntegrationError, KernelError) as error:
            logstring.SweepRowFailed(problem.name, tolerance, error).record("WARNING")
            reports.append(RunReport(problem.name, tolerance, p, math.nan, 0, 0, math.nan,
                                     built.build_time_s, error=f"{type(error).__name__}: {error}"))
            continue
        reports.append(RunReport(
            problem=problem.name,
            tol=tolerance,
            p=solution.p,
            scd=scd(solution.final_state, reference),
            steps_accepted=solution.steps_accepted,
            steps_failed=solution.steps_failed,
            time_s=solution.time_s,
            build_time_s=built.build_time_s,
            final_state=solution.final_state))
    return reports


def write_csv(reports: list[RunReport], path: str) -> None:
    """Work-precision table with one row per report and floats at full precision."""
    with open(path, "w", newline="") as csv_file:
        writer = csv.writer(csv_file)
        writer.writerow(CSV_COLUMNS)
        for report in reports:
            writer.writerow([repr(float(report.tol)), report.p, repr(float(report.scd)), report.steps_accepted,
                             report.steps_failed, repr(float(report.time_s))])
    logstring.CsvWritten(path, len(reports)).record("INFO")
