# standard
from dataclasses import dataclass, field
import enum
import itertools
from typing import Callable, Sequence
# external
import numpy as np
from scipy.optimize import linear_sum_assignment
# local
from codelist import CLKind, CodeList, TIME_REF
import logstring


NEG_INF = -10 ** 9                  # Stands for -inf ("variable does not occur") in integer signature matrices
BRUTE_FORCE_LIMIT = 6               # Largest size for which all transversals are enumerated in checks

VALID = "valid"
WEAKLY_VALID = "weakly valid, not certified"
INVALID = "invalid"


class StructurallyIllPosed(ValueError):
    """Signature matrix without a finite transversal."""


class TheoremViolation(AssertionError):
    """A structural transformation did not preserve what it is proven to preserve."""


#####################
# Signature helpers #
#####################

def signature_matrix(entries: Sequence[Sequence]) -> np.ndarray:
    """
    Square integer signature matrix from nested rows. None, -inf or anything at or below NEG_INF mark
    an absent entry.
    """
    rows = [[NEG_INF if entry is None or entry <= NEG_INF else int(entry) for entry in row] for row in entries]
    sigma = np.array(rows, dtype=np.int64)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValueError(f"Signature matrix must be square, got shape {sigma.shape}.")
    return sigma


def finite_mask(sigma: np.ndarray) -> np.ndarray:
    return sigma > NEG_INF // 2


def signature_row(entries: Sequence) -> np.ndarray:
    return np.array([NEG_INF if entry is None or entry <= NEG_INF else int(entry) for entry in entries],
                    dtype=np.int64)


@dataclass(eq=False)
class Offsets:
    """Equation offsets c and variable offsets d."""
    c: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.int64)
        self.d = np.asarray(self.d, dtype=np.int64)

    def __eq__(self, other):
        return isinstance(other, Offsets) and np.array_equal(self.c, other.c) and np.array_equal(self.d, other.d)

    def __repr__(self):
        return f"Offsets(c={self.c.tolist()}, d={self.d.tolist()})"

    def normalised(self) -> "Offsets":
        """Shift so that min c = 0."""
        shift = int(self.c.min()) if self.c.size else 0
        return Offsets(self.c - shift, self.d - shift)

    @property
    def structural_index(self) -> int:
        """Largest equation offset."""
        return int(self.c.max()) if self.c.size else 0


@dataclass
class Verdict:
    status: str
    violations: list[tuple[int, int]] = field(default_factory=list)
    transversal: tuple[int, ...] | None = None

    @property
    def valid(self) -> bool:
        return self.status == VALID


################
# Transversals #
################

def transversal_value(sigma: np.ndarray, transversal: Sequence[int]) -> int:
    return int(sum(sigma[row, column] for row, column in enumerate(transversal)))


def hvt(sigma: np.ndarray) -> tuple[tuple[int, ...], int]:
    """
    A highest-value transversal and its value, from a linear assignment problem.
    :param sigma: Signature matrix
    :return: Column of the transversal in each row, and Val(sigma)
    """
    if sigma.size == 0:
        return tuple(), 0
    rows, columns = linear_sum_assignment(sigma, maximize=True)
    if not finite_mask(sigma)[rows, columns].all():
        raise StructurallyIllPosed("No transversal with only finite entries.")
    transversal = tuple(int(column) for column in columns[np.argsort(rows)])
    return transversal, transversal_value(sigma, transversal)


def highest_value_transversals(sigma: np.ndarray) -> tuple[set[tuple[int, ...]], int]:
    """All highest-value transversals by enumeration. Only for small matrices."""
    n = sigma.shape[0]
    finite = finite_mask(sigma)
    best_value, best = None, set()
    for permutation in itertools.permutations(range(n)):
        if not all(finite[row, column] for row, column in enumerate(permutation)):
            continue
        value = transversal_value(sigma, permutation)
        if best_value is None or value > best_value:
            best_value, best = value, {permutation}
        elif value == best_value:
            best.add(permutation)
    if best_value is None:
        raise StructurallyIllPosed("No transversal with only finite entries.")
    return best, best_value


###########
# Offsets #
###########

def canonical_offsets(sigma: np.ndarray) -> Offsets:
    """
    Smallest valid offsets by fixed-point iteration on a highest-value transversal T:
    d_j = max_i (sigma_ij + c_i), then c_i = d_T(i) - sigma_iT(i), starting from c = 0.
    """
    n = sigma.shape[0]
    if n == 0:
        return Offsets(np.zeros(0), np.zeros(0))
    transversal, value = hvt(sigma)
    finite = finite_mask(sigma)
    rows, columns = np.arange(n), np.array(transversal, dtype=int)
    largest_entry = int(np.abs(sigma[finite]).max()) if finite.any() else 0
    c = np.zeros(n, dtype=np.int64)
    for _ in range(10 * n * (largest_entry + 1) + 10):
        d = np.where(finite, sigma + c[:, None], NEG_INF).max(axis=0)
        new_c = d[columns] - sigma[rows, columns]
        if np.array_equal(new_c, c):
            break
        c = new_c
    else:
        raise StructurallyIllPosed("Offset iteration did not converge.")

    offsets = Offsets(c, d).normalised()
    if int(offsets.d.sum() - offsets.c.sum()) != value:
        raise TheoremViolation(f"sum(d) - sum(c) = {offsets.d.sum() - offsets.c.sum()} differs from Val = {value}.")
    return offsets


def check_valid(sigma: np.ndarray, offsets: Offsets, jacobian: np.ndarray = None) -> Verdict:
    """
    Check offsets against a signature matrix.
    Invalid if some finite entry has sigma_ij > d_j - c_i or some c_i < 0.
    Valid if the entries with sigma_ij = d_j - c_i (and, given a numeric system Jacobian,
    a nonzero Jacobian entry) contain a transversal, and the Jacobian is nonsingular.
    Weakly valid otherwise.
    """
    n = sigma.shape[0]
    finite = finite_mask(sigma)
    slack = np.where(finite, offsets.d[None, :] - offsets.c[:, None] - sigma, 0)
    violations = [(int(row), int(column)) for row, column in zip(*np.nonzero(finite & (slack < 0)))]
    if violations or (offsets.c < 0).any():
        return Verdict(INVALID, violations)

    tight = finite & (slack == 0)
    if jacobian is not None:
        tight &= np.asarray(jacobian) != 0
    rows, columns = linear_sum_assignment(tight.astype(int), maximize=True)
    transversal = None
    if n == 0 or tight[rows, columns].all():
        transversal = tuple(int(column) for column in columns[np.argsort(rows)])

    if transversal is None:
        return Verdict(WEAKLY_VALID)
    if jacobian is not None and np.linalg.matrix_rank(np.asarray(jacobian, dtype=float)) < n:
        return Verdict(WEAKLY_VALID, transversal=transversal)
    return Verdict(VALID, transversal=transversal)


def _assert_valid(sigma: np.ndarray, offsets: Offsets, context: str, accept_weak: bool = False) -> Verdict:
    verdict = check_valid(sigma, offsets)
    if verdict.status == INVALID or (verdict.status == WEAKLY_VALID and not accept_weak):
        logstring.StructuralCheckFailed(verdict.status, verdict.violations, context=context).record("WARNING")
        raise TheoremViolation(f"{context}: offsets {offsets} are {verdict.status}.")
    return verdict


###################
# Transformations #
###################

def _increment_rows(sigma: np.ndarray, increments: np.ndarray) -> np.ndarray:
    return np.where(finite_mask(sigma), sigma + increments[:, None], NEG_INF)


def dif_r(sigma: np.ndarray, offsets: Offsets, row: int, check: bool = True) -> tuple[np.ndarray, Offsets]:
    """
    Differentiate equation `row` once: its finite entries go up by one and c_row down by one.
    If c_row becomes -1, all offsets shift up by one.
    With check on, raise TheoremViolation unless Val went up by one, the highest-value transversals
    stayed the same (compared by enumeration for small matrices) and the new offsets are valid.
    """
    increments = np.zeros(sigma.shape[0], dtype=np.int64)
    increments[row] = 1
    new_sigma = _increment_rows(sigma, increments)
    c, d = offsets.c.copy(), offsets.d.copy()
    c[row] -= 1
    if c[row] == -1:
        c += 1
        d += 1
    new_offsets = Offsets(c, d)

    if check:
        _, value = hvt(sigma)
        _, new_value = hvt(new_sigma)
        if new_value != value + 1:
            raise TheoremViolation(f"Val went from {value} to {new_value}, expected {value + 1}.")
        if sigma.shape[0] <= BRUTE_FORCE_LIMIT:
            if highest_value_transversals(sigma)[0] != highest_value_transversals(new_sigma)[0]:
                raise TheoremViolation("Highest-value transversals changed.")
        _assert_valid(new_sigma, new_offsets, f"dif_r(row={row})")
    return new_sigma, new_offsets


def dif(sigma: np.ndarray, offsets: Offsets, orders: Sequence[int], check: bool = True) -> tuple[np.ndarray, Offsets]:
    """
    Differentiate equation i orders[i] times. Offsets become c - k, then shifted so that min c = 0.
    Same result as applying dif_r once per differentiation.
    """
    orders = np.asarray(orders, dtype=np.int64)
    if orders.shape != (sigma.shape[0],) or (orders < 0).any():
        raise ValueError("Need one nonnegative differentiation order per equation.")
    new_sigma = _increment_rows(sigma, orders)
    new_offsets = Offsets(offsets.c - orders, offsets.d).normalised()
    if check:
        _assert_valid(new_sigma, new_offsets, "dif")
    return new_sigma, new_offsets


@dataclass
class Extraction:
    sigma: np.ndarray
    offsets: Offsets
    verdict: Verdict


def extract_subexpr(sigma: np.ndarray, offsets: Offsets | None, psi: Sequence, rows: Sequence[int],
                    body: np.ndarray = None) -> Extraction:
    """
    Replace a subexpression psi of equations `rows` by a new variable x_(n+1) and add
    the equation x_(n+1) - psi = 0.
    :param sigma: Signature matrix of the system
    :param offsets: Valid offsets of sigma, canonical offsets if None
    :param psi: Signature row of the subexpression, with psi_j <= sigma_rj for every r in rows
    :param rows: Equations that contain the subexpression
    :param body: Signature of the rest of the system. Rows outside `rows` must equal sigma,
        rows in `rows` must satisfy max(body_rj, psi_j) = sigma_rj. Defaults to sigma.
    :return: Extended signature matrix, the extended offsets (d_(n+1) = c_(n+1) = max c_r over rows,
        0 if rows is empty) and their verdict
    """
    n = sigma.shape[0]
    psi = signature_row(psi)
    rows = sorted(set(int(row) for row in rows))
    offsets = canonical_offsets(sigma) if offsets is None else offsets
    if psi.shape != (n,):
        raise ValueError(f"Subexpression row needs {n} entries.")

    finite_psi = psi > NEG_INF // 2
    for row in rows:
        if (finite_psi & (psi > sigma[row])).any():
            raise ValueError(f"Subexpression has an entry above the signature of equation {row}.")

    if body is None:
        body = sigma.copy()
    else:
        body = signature_matrix(body)
        for row in range(n):
            expected = np.maximum(body[row], psi) if row in rows else body[row]
            if not np.array_equal(expected, sigma[row]):
                raise ValueError(f"Body row {row} is not consistent with the signature matrix.")

    extended = np.full((n + 1, n + 1), NEG_INF, dtype=np.int64)
    extended[:n, :n] = body
    extended[n, :n] = psi
    extended[rows, n] = 0
    extended[n, n] = 0

    new_offset = max((int(offsets.c[row]) for row in rows), default=0)
    extended_offsets = Offsets(np.append(offsets.c, new_offset), np.append(offsets.d, new_offset))
    verdict = _assert_valid(extended, extended_offsets, "extract_subexpr", accept_weak=True)
    return Extraction(extended, extended_offsets, verdict)


##########################
# Code lists as DAEs     #
##########################

class RowKind(enum.Enum):
    ODE = "ODE"
    SUB = "SUB"
    ORDINARY = "ordinary"
    TIME = "time"


@dataclass
class DaePoint:
    """Values and first derivatives of the DAE variables at one t."""
    values: np.ndarray
    rates: np.ndarray
    t: float


@dataclass
class DaeView:
    """
    A code list as a DAE: one variable and one equation per line, optionally with t as an extra variable.
    partials maps (row, column) to the derivative of the equation with respect to the highest
    derivative of the variable that occurs in it.
    """
    labels: list[str]
    row_kinds: list[RowKind]
    sigma: np.ndarray
    partials: dict[tuple[int, int], Callable[[DaePoint], float]]
    line_of: list[int | None]
    sub_inputs: list[int]

    @property
    def size(self) -> int:
        return len(self.labels)

    def point(self, workspace) -> DaePoint:
        """DaePoint from a kernel workspace of order 1 or more."""
        values, rates = np.zeros(self.size), np.zeros(self.size)
        for column, line in enumerate(self.line_of):
            row = TIME_REF if line is None else line
            values[column], rates[column] = workspace.coeffs[row, 0], workspace.coeffs[row, 1]
        return DaePoint(values, rates, workspace.t0)


class _RowEntries:
    """Highest derivative order per column of one equation, with the partials at that order."""
    def __init__(self):
        self.entries: dict[int, tuple[int, list[Callable]]] = dict()

    def add(self, column: int | None, order: int, partial: Callable[[DaePoint], float]) -> None:
        if column is None:
            return
        current = self.entries.get(column)
        if current is None or order > current[0]:
            self.entries[column] = (order, [partial])
        elif order == current[0]:
            current[1].append(partial)


def _operand_partials(op: str, left: Callable, right: Callable) -> tuple[Callable, Callable]:
    """Derivatives of add/sub/mul/div with respect to each operand."""
    if op == "add":
        return (lambda point: 1.0), (lambda point: 1.0)
    if op == "sub":
        return (lambda point: 1.0), (lambda point: -1.0)
    if op == "mul":
        return right, left
    return (lambda point: 1.0 / right(point)), (lambda point: -left(point) / right(point) ** 2)


def dae_view(code_list: CodeList, time_alias: bool = True) -> DaeView:
    """
    DAE form of a code list. ODE line i: x_i' - x_out(i) = 0. ALG line j: x_j - phi(operands) = 0.
    SUB line j: x_j' - h_j x_u' = 0. With time_alias, t is variable n+1 with equation x_(n+1) - t = 0,
    and lines n+1..N move one index up. Indices are 0-based.
    """
    n_state = code_list.n_state

    def column(ref: int | None) -> int | None:
        if ref is None:
            return None
        if ref == TIME_REF:
            return n_state if time_alias else None
        return ref - 1 if ref <= n_state or not time_alias else ref

    size = len(code_list) + (1 if time_alias else 0)
    labels, row_kinds, line_of = [None] * size, [None] * size, [None] * size
    entries = [_RowEntries() for _ in range(size)]
    sub_inputs = list()

    def value_of(line, slot: int, ref: int | None) -> Callable[[DaePoint], float]:
        if line.mode[slot] == "I":
            return lambda point: line.imm
        operand_column = column(ref)
        if operand_column is None:
            return lambda point: point.t
        return lambda point: point.values[operand_column]

    if time_alias:
        labels[n_state], row_kinds[n_state] = "t", RowKind.TIME
        entries[n_state].add(n_state, 0, lambda point: 1.0)

    for line in code_list.lines:
        row = column(line.index)
        labels[row], line_of[row] = f"x{line.index}", line.index
        if line.kind is CLKind.ODE:
            row_kinds[row] = RowKind.ODE
            entries[row].add(row, 1, lambda point: 1.0)
            if line.mode == "R":
                entries[row].add(column(line.r1), 0, lambda point: -1.0)
        elif line.kind is CLKind.ALG:
            row_kinds[row] = RowKind.ORDINARY
            entries[row].add(row, 0, lambda point: 1.0)
            left, right = value_of(line, 0, line.r1), value_of(line, 1, line.r2)
            for slot, (ref, partial) in enumerate(zip((line.r1, line.r2), _operand_partials(line.op, left, right))):
                if line.mode[slot] == "R":
                    entries[row].add(column(ref), 0, lambda point, partial=partial: -partial(point))
        else:
            row_kinds[row] = RowKind.SUB
            u_column, h_value = column(line.r2), value_of(line, 0, line.r1)
            if u_column is not None:
                sub_inputs.append(u_column)
            entries[row].add(row, 1, lambda point: 1.0)
            entries[row].add(u_column, 1, lambda point, h_value=h_value: -h_value(point))
            if line.mode[0] == "R":
                rate = (lambda point, u_column=u_column: point.rates[u_column]) if u_column is not None \
                    else (lambda point: 1.0)
                entries[row].add(column(line.r1), 0, lambda point, rate=rate: -rate(point))

    sigma = np.full((size, size), NEG_INF, dtype=np.int64)
    partials = dict()
    for row, row_entries in enumerate(entries):
        for entry_column, (order, row_partials) in row_entries.entries.items():
            sigma[row, entry_column] = order
            partials[(row, entry_column)] = lambda point, row_partials=row_partials: sum(
                partial(point) for partial in row_partials)
    return DaeView(labels, row_kinds, sigma, partials, line_of, sorted(set(sub_inputs)))


def codelist_offsets(view: DaeView) -> Offsets:
    """Closed-form offsets of a code-list DAE: d = 1, c = 0 on ODE and SUB rows, c = 1 elsewhere."""
    c = np.array([0 if kind in (RowKind.ODE, RowKind.SUB) else 1 for kind in view.row_kinds], dtype=np.int64)
    return Offsets(c, np.ones(view.size, dtype=np.int64))


def system_jacobian(view: DaeView, offsets: Offsets, point: DaePoint = None) -> np.ndarray:
    """
    System Jacobian: entry (i, j) is the partial of equation i with respect to the derivative
    of order d_j - c_i of variable j, where that order equals sigma_ij, zero elsewhere.
    Without a point, the boolean pattern of those entries.
    """
    tight = finite_mask(view.sigma) & (offsets.d[None, :] - offsets.c[:, None] == view.sigma)
    if point is None:
        return tight
    jacobian = np.zeros(tight.shape)
    for row, column in zip(*np.nonzero(tight)):
        jacobian[row, column] = view.partials[(int(row), int(column))](point)
    return jacobian


def finite_difference_system_jacobian(functions: Sequence[Callable[[dict], float]], offsets: Offsets,
                                      point: dict[tuple[int, int], float], step: float = 1e-6) -> np.ndarray:
    """
    System Jacobian of equations given as functions of a {(variable, derivative order): value} mapping,
    by central differences. Entries whose derivative order d_j - c_i is negative or absent from the point are 0.
    """
    n = len(functions)
    jacobian = np.zeros((n, n))
    for row, function in enumerate(functions):
        for column in range(n):
            key = (column, int(offsets.d[column] - offsets.c[row]))
            if key[1] < 0 or key not in point:
                continue
            upper, lower = dict(point), dict(point)
            delta = step * max(1.0, abs(point[key]))
            upper[key] += delta
            lower[key] -= delta
            jacobian[row, column] = (function(upper) - function(lower)) / (2 * delta)
    return jacobian


def sub_inputs_are_differential(view: DaeView) -> bool:
    """True if no SUB line takes its input from an ordinary row (an ALG line or the t alias)."""
    return all(view.row_kinds[column] in (RowKind.ODE, RowKind.SUB) for column in view.sub_inputs)


#############
# Rendering #
#############

def render_sigma(sigma: np.ndarray, offsets: Offsets = None, labels: Sequence[str] = None) -> str:
    """Signature matrix as text with 1-based default labels, '-' for absent entries and offsets in the margins."""
    n = sigma.shape[0]
    labels = list(labels) if labels is not None else [f"x{j + 1}" for j in range(n)]
    row_labels = [f"f{i + 1}" for i in range(n)] + (["d"] if offsets is not None else [])
    cells = [[str(int(entry)) if entry > NEG_INF // 2 else "-" for entry in row] for row in sigma]
    width = max([len(label) for label in labels + row_labels] + [len(cell) for row in cells for cell in row] + [1])
    label_width = max(len(label) for label in row_labels) if row_labels else 1

    def format_row(label: str, values: list[str], margin: str = "") -> str:
        text = label.ljust(label_width) + " " + " ".join(value.rjust(width) for value in values)
        return (text + (f" | {margin}" if margin else "")).rstrip()

    lines = [format_row("", labels, "c" if offsets is not None else "")]
    for i, row in enumerate(cells):
        lines.append(format_row(row_labels[i], row, str(int(offsets.c[i])) if offsets is not None else ""))
    if offsets is not None:
        lines.append(format_row("d", [str(int(value)) for value in offsets.d]))
    return "\n".join(lines)


def render_pattern(pattern: np.ndarray, labels: Sequence[str] = None) -> str:
    """Boolean matrix as rows of 'x' (nonzero) and '.' (zero)."""
    lines = list()
    if labels is not None:
        lines.append(" ".join(labels))
    lines.extend(" ".join("x" if entry else "." for entry in row) for row in np.asarray(pattern, dtype=bool))
    return "\n".join(lines)
