# standard
from dataclasses import dataclass
import os
# external
import numpy as np
from numpy.polynomial import polynomial
# local
from codelist import CLKind, CodeList, TIME_REF


class KernelError(ArithmeticError):
    """Failure while computing Taylor coefficients. line is the code-list line being evaluated."""
    def __init__(self, message: str, line: int = None):
        super().__init__(message)
        self.line = line

    def __str__(self):
        message = super().__str__()
        return f"Line {self.line}: {message}" if self.line is not None else message


class DivisionBySingularSeries(KernelError):
    """Division by a series whose order-0 coefficient is zero."""


class BaseFunctionDomainError(KernelError):
    """Base function of a sub-ODE evaluated outside its domain, e.g. log of a negative number."""


class ForwardReadError(KernelError):
    """A coefficient was read before it was computed or written twice."""


class NonFiniteCoefficients(KernelError):
    """Inf or NaN among the computed coefficients."""


def read_trap_default() -> bool:
    return bool(int(os.getenv("TAYLOR_READ_TRAP", 0)))


@dataclass
class TaylorCoeffs:
    """Truncated Taylor series c_0 + c_1 (t - t0) + ... + c_p (t - t0)^p of one variable."""
    t0: float
    p: int
    c: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        if self.c.shape != (self.p + 1,):
            raise ValueError(f"Expected {self.p + 1} coefficients, got shape {self.c.shape}.")
        if not np.all(np.isfinite(self.c)):
            raise ValueError("Taylor coefficients must be finite.")

    def __call__(self, t: float) -> float:
        return float(polynomial.polyval(t - self.t0, self.c))


def horner(coeffs: np.ndarray, s: float) -> np.ndarray:
    """
    Evaluate series of several variables at offset s from their expansion point.
    :param coeffs: Array of shape (n, p + 1), one row of coefficients per variable
    :param s: Offset t - t0
    :return: Array of n values
    """
    return polynomial.polyval(s, np.asarray(coeffs).T)


class KernelWorkspace:
    """
    Coefficient storage for one kernel run. Row 0 is t, rows 1..N the code-list lines,
    the remaining rows constant series for immediates.
    With check_reads on, every read checks that the requested order was already computed,
    and every write checks that the coefficient is new.
    """
    def __init__(self, n_rows: int, p: int, t0: float, check_reads: bool = None):
        self.p = p
        self.t0 = t0
        self.coeffs = np.zeros((n_rows, p + 1))
        self.filled = np.full(n_rows, -1)
        self.check_reads = read_trap_default() if check_reads is None else check_reads

    def read(self, row: int, k: int, line: int) -> np.ndarray:
        """Row of coefficients, of which the caller uses orders up to k."""
        if self.check_reads and self.filled[row] < k:
            raise ForwardReadError(f"Read of order {k} from row {row}, "
                                   f"which is only computed up to order {self.filled[row]}.", line)
        return self.coeffs[row]

    def write(self, row: int, k: int, value: float, line: int) -> None:
        if self.check_reads and self.filled[row] != k - 1:
            raise ForwardReadError(f"Write of order {k} to row {row}, "
                                   f"which is computed up to order {self.filled[row]}.", line)
        self.coeffs[row, k] = value
        self.filled[row] = k

    def fill_constant(self, row: int, value: float) -> None:
        self.coeffs[row, 0] = value
        self.filled[row] = self.p

    def fill_time(self) -> None:
        self.coeffs[0, 0] = self.t0
        if self.p >= 1:
            self.coeffs[0, 1] = 1.0
        self.filled[0] = self.p


#####################
# Coefficient rules #
#####################

def ts_add(u: np.ndarray, v: np.ndarray, k: int) -> float:
    return u[k] + v[k]


def ts_sub(u: np.ndarray, v: np.ndarray, k: int) -> float:
    return u[k] - v[k]


def ts_mul(u: np.ndarray, v: np.ndarray, k: int) -> float:
    """Cauchy product: sum of u_i v_(k-i) for i = 0..k."""
    return float(np.dot(u[:k + 1], v[k::-1]))


def ts_div(u: np.ndarray, v: np.ndarray, w: np.ndarray, k: int) -> float:
    """
    Order k of w = u / v, using the already computed w_0..w_(k-1).
    :param u: Numerator series
    :param v: Denominator series, v_0 must be nonzero
    :param w: Quotient series computed so far
    :param k: Order
    :return: w_k
    """
    if v[0] == 0:
        raise DivisionBySingularSeries("Division by a series with zero constant term.")
    if k == 0:
        return u[0] / v[0]
    return float((u[k] - np.dot(v[k:0:-1], w[:k])) / v[0])


def ts_subode(definition, u: np.ndarray, h: list[np.ndarray], k: int) -> np.ndarray:
    """
    Order k of the outputs of a sub-ODE block v = g(u) with v' = h u'.
    Order 0 is g(u_0). For k >= 1, v_k = (1/k) sum of i u_i h_(k-i) for i = 1..k, per output.
    :param definition: stdfuncs.SubODEDef, only used at order 0
    :param u: Input series
    :param h: One h series per requested output, computed up to order k - 1
    :param k: Order
    :return: One value per requested output (all m outputs at order 0)
    """
    if k == 0:
        try:
            return np.array(definition.base(float(u[0])), dtype=float)
        except (ValueError, OverflowError, ZeroDivisionError) as error:
            raise BaseFunctionDomainError(f"{definition.name}({u[0]!r}): {error}") from error
    weights = np.arange(1, k + 1) * u[1:k + 1]
    return np.array([np.dot(weights, h_series[k - 1::-1]) for h_series in h]) / k


##########
# Kernel #
##########

_ALG_RULES = {"add": ts_add, "sub": ts_sub, "mul": ts_mul}


def _operand_rows(code_list: CodeList, n_lines: int) -> tuple[list[tuple], dict[int, float]]:
    """
    Row of each operand of each line. Immediates get constant rows after the line rows.
    :return: Per line (row of first operand, row of second operand), and the constant rows with their values
    """
    constants = dict()
    operand_rows = list()
    for line in code_list.lines:
        rows = list()
        for slot, ref in enumerate((line.r1, line.r2)):
            if slot < len(line.mode) and line.mode[slot] == "I":
                row = n_lines + 1 + len(constants)
                constants[row] = line.imm
                rows.append(row)
            else:
                rows.append(ref)
        operand_rows.append(tuple(rows))
    return operand_rows, constants


def run_codelist(code_list: CodeList, state_ics, t0: float, p: int,
                 check_reads: bool = None) -> KernelWorkspace:
    """
    Taylor coefficients of order 0..p of every code-list variable at t0.
    Each order is one sweep: ODE lines integrate the previous order of their derivative line,
    then ALG and SUB lines are evaluated in line order.
    :param code_list: Sound code list
    :param state_ics: Values of the n state variables at t0
    :param t0: Expansion point
    :param p: Order
    :param check_reads: Turn on the no-forward-read trap. Default from env variable TAYLOR_READ_TRAP.
    :return: Workspace with all coefficients
    """
    n_state, n_lines = code_list.n_state, len(code_list)
    state_ics = np.asarray(state_ics, dtype=float)
    if state_ics.shape != (n_state,):
        raise ValueError(f"Expected {n_state} initial values, got shape {state_ics.shape}.")

    operand_rows, constants = _operand_rows(code_list, n_lines)
    workspace = KernelWorkspace(n_lines + 1 + len(constants), p, t0, check_reads)
    workspace.fill_time()
    for row, value in constants.items():
        workspace.fill_constant(row, value)
    for i in range(n_state):
        workspace.write(i + 1, 0, state_ics[i], i + 1)

    body = code_list.lines[n_state:]
    for k in range(p + 1):
        if k > 0:
            for line in code_list.lines[:n_state]:
                out_row = operand_rows[line.index - 1][0]
                derivative = workspace.read(out_row, k - 1, line.index)[k - 1]
                workspace.write(line.index, k, derivative / k, line.index)
        for line in body:
            try:
                _evaluate_line(code_list, workspace, line, operand_rows[line.index - 1], k)
            except KernelError as error:
                error.line = line.index
                raise

    finite_rows = np.all(np.isfinite(workspace.coeffs[:n_lines + 1]), axis=1)
    if not finite_rows.all():
        row = int(np.argmin(finite_rows))
        raise NonFiniteCoefficients("Non-finite Taylor coefficient.", line=row if row != TIME_REF else None)
    return workspace


def _evaluate_line(code_list: CodeList, workspace: KernelWorkspace, line, rows: tuple, k: int) -> None:
    index = line.index
    if line.kind is CLKind.ALG:
        u = workspace.read(rows[0], k, index)
        v = workspace.read(rows[1], k, index)
        if line.op == "div":
            w = workspace.read(index, k - 1, index) if k > 0 else None
            value = ts_div(u, v, w, k)
        else:
            value = _ALG_RULES[line.op](u, v, k)
        workspace.write(index, k, value, index)
        return

    block = code_list.blocks.get(index)
    u = workspace.read(rows[1], k, index)
    if k == 0:
        if block is not None:           # Block head computes every output at order 0
            for offset, value in enumerate(ts_subode(block.definition, u, [], 0)):
                workspace.write(index + offset, 0, value, index + offset)
        return
    h = workspace.read(rows[0], k - 1, index)
    workspace.write(index, k, ts_subode(None, u, [h], k)[0], index)


def state_coeffs(workspace: KernelWorkspace, n_state: int) -> np.ndarray:
    """Coefficients of the state variables, shape (n_state, p + 1)."""
    return workspace.coeffs[1:n_state + 1]


def line_series(workspace: KernelWorkspace, index: int) -> TaylorCoeffs:
    return TaylorCoeffs(workspace.t0, workspace.p, workspace.coeffs[index].copy())
