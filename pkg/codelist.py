# standard
from dataclasses import dataclass, field
import enum
import hashlib
import numbers
import operator
from typing import Callable, Mapping
# local
import logstring


TIME_REF = 0                # Operand reference to t. Its series (t0, 1, 0, ...) is injected, no line is emitted.


class UnsupportedFunction(TypeError):
    """Operation on a traced variable that has no code-list representation."""


class UnsupportedParamExponent(TypeError):
    """Power with a parameter exponent. The emitted structure would depend on the parameter value."""


class UnknownParameter(KeyError):
    """Parameter name that the code list does not have."""


class UnsoundCodeList(ValueError):
    """Code list that reads a variable before it is assigned."""


class CLKind(enum.Enum):
    ODE = "ODE"
    ALG = "ALG"
    SUB = "SUB"


@dataclass
class CLLine:
    """
    One code-list instruction. Line numbers are 1-based.
    mode has one I/R flag per operand slot: "RI" means r1 is a reference and the second operand is imm.
    """
    index: int
    kind: CLKind
    op: str = ""
    mode: str = ""
    r1: int | None = None
    r2: int | None = None
    imm: float | None = None
    param_ref: str | None = None        # Key of the parameter expression that imm is the current value of


@dataclass
class ParamSlot:
    name: str
    value: float
    lines_using: set[int] = field(default_factory=set)


@dataclass
class SubBlock:
    """A sub-ODE block: m SUB lines starting at `start`, followed by the lines of its h fragment up to `end`."""
    start: int
    m: int
    end: int
    definition: object                  # stdfuncs.SubODEDef
    u_ref: int

    @property
    def sub_lines(self) -> range:
        return range(self.start, self.start + self.m)


class CodeList:
    """
    Ordered SSA program. Lines 1..n_state are the ODE lines, the rest ALG and SUB lines in emission order.
    Structure is fixed after tracing. Only imm fields of parameter lines change, through set_param.
    """
    def __init__(self, n_state: int, param_defs: Mapping[str, float] = None, dedup: bool = True):
        self.n_state = n_state
        self.lines: list[CLLine] = [CLLine(index=i, kind=CLKind.ODE, mode="R") for i in range(1, n_state + 1)]
        # Line holding dx_i/dt. A constant derivative is the immediate of ODE line i itself, so out(i) = i.
        self.out_map: list[int] = list(range(1, n_state + 1))
        self.params = {name: ParamSlot(name, float(value)) for name, value in (param_defs or dict()).items()}
        self.param_exprs: dict[str, ParamValue] = dict()
        self.dedup_index: dict[int, list[tuple[tuple, int | tuple[int, ...]]]] = dict()
        self.dedup_enabled = dedup
        self.blocks: dict[int, SubBlock] = dict()

    def __len__(self):
        return len(self.lines)

    def __repr__(self):
        return f"CodeList(n_state={self.n_state}, lines={len(self.lines)}, sub_blocks={len(self.blocks)})"

    def line(self, index: int) -> CLLine:
        return self.lines[index - 1]

    def block_of(self, index: int) -> SubBlock | None:
        """SUB block whose SUB lines include the given line."""
        for block in self.blocks.values():
            if index in block.sub_lines:
                return block
        return None

    def lookup(self, key_tuple: tuple):
        """Existing line (or block output lines) for an (op, operands) tuple, None if absent."""
        if not self.dedup_enabled:
            return None
        for stored_tuple, target in self.dedup_index.get(dedup_key(*key_tuple), list()):
            if stored_tuple == key_tuple:           # Full comparison, so hash collisions never merge lines
                return target
        return None

    def remember(self, key_tuple: tuple, target) -> None:
        self.dedup_index.setdefault(dedup_key(*key_tuple), list()).append((key_tuple, target))


def dedup_key(op: str, operands: tuple) -> int:
    """
    64-bit key of an operation and its resolved operand descriptors.
    Operand descriptors are ("R", line), ("I", value) or ("P", parameter expression key).
    No commutativity canonicalization: mul(R3, R4) and mul(R4, R3) may get different keys.
    """
    digest = hashlib.blake2b(repr((op, tuple(operands))).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


###############################
# Parameters as tracer values #
###############################

class ParamValue:
    """
    Constant-time expression built from parameters and constants, e.g. k/m.
    Folded to its current value in imm fields, recomputed by set_param.
    """
    def __init__(self, key: str, compute: Callable[[Mapping[str, float]], float],
                 names: frozenset[str], slots: dict[str, ParamSlot]):
        self.key = key
        self.compute = compute
        self.names = names
        self.slots = slots

    def __repr__(self):
        return f"ParamValue({self.key} = {self.value})"

    @classmethod
    def of_slot(cls, slot: ParamSlot, slots: dict[str, ParamSlot]) -> "ParamValue":
        name = slot.name
        return cls(name, lambda values: values[name], frozenset([name]), slots)

    @property
    def value(self) -> float:
        return float(self.compute({name: slot.value for name, slot in self.slots.items()}))

    def _combine(self, other, symbol: str, function: Callable, reflected: bool = False):
        if isinstance(other, ParamValue):
            other_key, other_compute, other_names = other.key, other.compute, other.names
        elif isinstance(other, numbers.Real):
            constant = float(other)
            other_key, other_compute, other_names = repr(constant), (lambda values: constant), frozenset()
        else:
            return NotImplemented
        own_compute = self.compute
        if reflected:
            key = f"({other_key}{symbol}{self.key})"
            compute = lambda values: function(other_compute(values), own_compute(values))
        else:
            key = f"({self.key}{symbol}{other_key})"
            compute = lambda values: function(own_compute(values), other_compute(values))
        return ParamValue(key, compute, self.names | other_names, self.slots)

    def __add__(self, other):
        return self._combine(other, "+", operator.add)

    def __radd__(self, other):
        return self._combine(other, "+", operator.add, reflected=True)

    def __sub__(self, other):
        return self._combine(other, "-", operator.sub)

    def __rsub__(self, other):
        return self._combine(other, "-", operator.sub, reflected=True)

    def __mul__(self, other):
        return self._combine(other, "*", operator.mul)

    def __rmul__(self, other):
        return self._combine(other, "*", operator.mul, reflected=True)

    def __truediv__(self, other):
        return self._combine(other, "/", operator.truediv)

    def __rtruediv__(self, other):
        return self._combine(other, "/", operator.truediv, reflected=True)

    def __pow__(self, other):
        return self._combine(other, "**", operator.pow)

    def __rpow__(self, other):
        return self._combine(other, "**", operator.pow, reflected=True)

    def __neg__(self):
        return 0.0 - self

    def __pos__(self):
        return self

    def map(self, name: str, function: Callable[[float], float]) -> "ParamValue":
        """Apply a scalar function, e.g. the base function of a sub-ODE."""
        own_compute = self.compute
        return ParamValue(f"{name}({self.key})", lambda values: function(own_compute(values)), self.names, self.slots)


#########################
# Traced state variable #
#########################

def _coerce(value):
    if isinstance(value, (Var, ParamValue)):
        return value
    if isinstance(value, numbers.Real):
        return float(value)
    return NotImplemented


class Var:
    """
    A code-list variable during tracing: a state variable, t, or the output of an emitted line.
    Arithmetic on it emits ALG lines into the tracer's code list.
    """
    __array_priority__ = 1000

    def __init__(self, tracer: "Tracer", ref: int):
        self.tracer = tracer
        self.ref = ref

    def __repr__(self):
        return "t" if self.ref == TIME_REF else f"x{self.ref}"

    def _emit(self, op: str, left, right):
        left, right = _coerce(left), _coerce(right)
        if left is NotImplemented or right is NotImplemented:
            return NotImplemented
        return self.tracer.emit_alg(op, left, right)

    def __add__(self, other):
        return self._emit("add", self, other)

    def __radd__(self, other):
        return self._emit("add", other, self)

    def __sub__(self, other):
        return self._emit("sub", self, other)

    def __rsub__(self, other):
        return self._emit("sub", other, self)

    def __mul__(self, other):
        return self._emit("mul", self, other)

    def __rmul__(self, other):
        return self._emit("mul", other, self)

    def __truediv__(self, other):
        return self._emit("div", self, other)

    def __rtruediv__(self, other):
        return self._emit("div", other, self)

    def __neg__(self):
        return self.tracer.emit_alg("sub", 0.0, self)

    def __pos__(self):
        return self

    def __pow__(self, exponent):
        import stdfuncs
        return stdfuncs.lower_power(self, exponent)

    def __rpow__(self, base):
        import stdfuncs
        if isinstance(base, numbers.Real) and base > 0:
            return stdfuncs.exp(self * stdfuncs.log(float(base)))
        raise UnsupportedFunction(f"Power with base {base!r} and a traced exponent is not supported.")

    def __abs__(self):
        raise UnsupportedFunction("abs() is not differentiable and has no code-list representation.")

    def __float__(self):
        raise UnsupportedFunction(
            f"Traced variable {self!r} was converted to a number. "
            f"Use the functions of the stdfuncs module instead of math functions.")

    def __bool__(self):
        raise UnsupportedFunction("Conditionals on traced variables are not supported.")

    def __lt__(self, other):
        raise UnsupportedFunction("Comparisons of traced variables are not supported.")

    __le__ = __gt__ = __ge__ = __lt__

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        import stdfuncs
        functions = {
            "add": operator.add, "subtract": operator.sub, "multiply": operator.mul,
            "true_divide": operator.truediv, "negative": operator.neg, "positive": operator.pos,
            "power": operator.pow, "exp": stdfuncs.exp, "log": stdfuncs.log, "sqrt": stdfuncs.sqrt,
            "cos": stdfuncs.cos, "sin": stdfuncs.sin, "tan": stdfuncs.tan}
        if method != "__call__" or kwargs or ufunc.__name__ not in functions:
            raise UnsupportedFunction(f"numpy.{ufunc.__name__} is not a registered standard function.")
        operands = tuple(_coerce(value) for value in inputs)     # numpy scalars become floats
        if any(operand is NotImplemented for operand in operands):
            raise UnsupportedFunction(f"numpy.{ufunc.__name__} applied to an unsupported operand type.")
        return functions[ufunc.__name__](*operands)


##########
# Tracer #
##########

def _descriptor(value) -> tuple:
    if isinstance(value, Var):
        return "R", value.ref
    if isinstance(value, ParamValue):
        return "P", value.key
    return "I", value


class Tracer:
    """Builds a CodeList from operations on Var objects."""
    def __init__(self, code_list: CodeList):
        self.code_list = code_list

    def _new_line(self, kind: CLKind, **fields) -> CLLine:
        line = CLLine(index=len(self.code_list.lines) + 1, kind=kind, **fields)
        self.code_list.lines.append(line)
        return line

    def _attach_param(self, line: CLLine, value: ParamValue) -> None:
        line.param_ref = value.key
        self.code_list.param_exprs[value.key] = value
        for name in value.names:
            self.code_list.params[name].lines_using.add(line.index)

    def emit_alg(self, op: str, left, right):
        """Emit (or reuse) an ALG line. Constant-only operations fold to a constant or ParamValue."""
        if not isinstance(left, Var) and not isinstance(right, Var):
            return {"add": operator.add, "sub": operator.sub,
                    "mul": operator.mul, "div": operator.truediv}[op](left, right)
        for operand in (left, right):
            if isinstance(operand, Var) and operand.tracer is not self:
                raise UnsoundCodeList("Operand belongs to a different code list.")

        key_tuple = (op, (_descriptor(left), _descriptor(right)))
        existing = self.code_list.lookup(key_tuple)
        if existing is not None:
            return Var(self, existing)

        constant = right if isinstance(left, Var) else left
        line = self._new_line(
            CLKind.ALG,
            op=op,
            mode=("R" if isinstance(left, Var) else "I") + ("R" if isinstance(right, Var) else "I"),
            r1=left.ref if isinstance(left, Var) else None,
            r2=right.ref if isinstance(right, Var) else None)
        if not isinstance(constant, Var):
            if isinstance(constant, ParamValue):
                line.imm = constant.value
                self._attach_param(line, constant)
            else:
                line.imm = constant
        self.code_list.remember(key_tuple, line.index)
        return Var(self, line.index)

    def emit_subode(self, definition, u: "Var") -> tuple["Var", ...]:
        """
        Emit (or reuse) a sub-ODE block for v = g(u): m SUB lines, then the lines of h(u, v).
        SUB line j gets r1 = line holding h_j, r2 = u.
        """
        operands = (("R", u.ref),) if definition.constant is None else (("I", definition.constant), ("R", u.ref))
        key_tuple = (definition.name, operands)
        existing = self.code_list.lookup(key_tuple)
        if existing is not None:
            return tuple(Var(self, index) for index in existing)

        sub_lines = [self._new_line(CLKind.SUB, op=definition.name if component == 0 else "", r2=u.ref)
                     for component in range(definition.m)]
        outputs = tuple(Var(self, line.index) for line in sub_lines)
        h_values = tuple(definition.h_template(u, outputs))
        if len(h_values) != definition.m:
            raise UnsoundCodeList(f"h fragment of '{definition.name}' returned {len(h_values)} values, "
                                  f"expected {definition.m}.")
        for line, h_value in zip(sub_lines, h_values):
            if isinstance(h_value, Var):
                line.mode, line.r1 = "RR", h_value.ref
            elif isinstance(h_value, ParamValue):
                line.mode, line.imm = "IR", h_value.value
                self._attach_param(line, h_value)
            else:
                line.mode, line.imm = "IR", float(h_value)

        block = SubBlock(
            start=sub_lines[0].index,
            m=definition.m,
            end=len(self.code_list.lines),
            definition=definition,
            u_ref=u.ref)
        self.code_list.blocks[block.start] = block
        self.code_list.remember(key_tuple, tuple(line.index for line in sub_lines))
        return outputs

    def set_outputs(self, derivatives: list) -> None:
        """Fill the ODE lines: out(i) is the line holding dx_i/dt."""
        for i, value in enumerate(derivatives):
            line = self.code_list.lines[i]
            value = _coerce(value)
            if value is NotImplemented:
                raise UnsupportedFunction(f"Derivative {i + 1} has unsupported type {type(value).__name__}.")
            if isinstance(value, Var):
                line.mode, line.r1 = "R", value.ref
                self.code_list.out_map[i] = value.ref
            else:
                line.mode, line.r1 = "I", None
                self.code_list.out_map[i] = line.index
                if isinstance(value, ParamValue):
                    line.imm = value.value
                    self._attach_param(line, value)
                else:
                    line.imm = value


####################
# Public interface #
####################

def trace(f: Callable, n_state: int, param_defs: Mapping[str, float] = None, dedup: bool = True) -> CodeList:
    """
    Turn a right-hand side f(t, x, p) into a code list by running it on tracer values.
    :param f: Function of t, the list of state variables x and the parameter mapping p, returning dx/dt
    :param n_state: Number of state variables
    :param param_defs: Parameter names and their initial values
    :param dedup: Reuse the line of an already emitted identical operation
    :return: Sound CodeList
    """
    code_list = CodeList(n_state, param_defs, dedup=dedup)
    tracer = Tracer(code_list)
    state = [Var(tracer, i) for i in range(1, n_state + 1)]
    params = {name: ParamValue.of_slot(slot, code_list.params) for name, slot in code_list.params.items()}

    derivatives = list(f(Var(tracer, TIME_REF), state, params))
    if len(derivatives) != n_state:
        raise ValueError(f"Right-hand side returned {len(derivatives)} derivatives for {n_state} states.")
    tracer.set_outputs(derivatives)
    check_sound(code_list)

    logstring.CodeListBuilt(
        n_state=n_state,
        n_lines=len(code_list),
        n_blocks=len(code_list.blocks),
        context=getattr(f, "__name__", None)).record("INFO")
    return code_list


def check_sound(code_list: CodeList) -> None:
    """
    Raise UnsoundCodeList unless lines are numbered 1..N, ALG lines only reference earlier lines,
    and each SUB line takes its input from before its block and its h value from no later than the block end.
    """
    n_lines = len(code_list.lines)
    for position, line in enumerate(code_list.lines, start=1):
        if line.index != position:
            raise UnsoundCodeList(f"Line {position} is numbered {line.index}.")
        references = [ref for ref in (line.r1, line.r2) if ref is not None]
        if any(ref < 0 or ref > n_lines for ref in references):
            raise UnsoundCodeList(f"Line {line.index} references a line outside 1..{n_lines}.")
        if line.kind is CLKind.ALG and any(ref >= line.index for ref in references):
            raise UnsoundCodeList(f"ALG line {line.index} references a line that is not earlier.")
        if line.kind is CLKind.ODE and line.index > code_list.n_state:
            raise UnsoundCodeList(f"ODE line {line.index} is not among the first {code_list.n_state} lines.")
        expected_out = line.r1 if line.mode == "R" else line.index
        if line.kind is CLKind.ODE and code_list.out_map[line.index - 1] != expected_out:
            raise UnsoundCodeList(f"out({line.index}) does not name the line holding dx_{line.index}/dt.")
        if line.kind is CLKind.SUB:
            block = code_list.block_of(line.index)
            if block is None:
                raise UnsoundCodeList(f"SUB line {line.index} belongs to no block.")
            if line.r2 >= block.start:
                raise UnsoundCodeList(f"SUB line {line.index} takes its input from inside its own block.")
            if line.r1 is not None and line.r1 > block.end:
                raise UnsoundCodeList(f"SUB line {line.index} references line {line.r1} past its block.")


def set_param(code_list: CodeList, name: str, value: float) -> None:
    """Change a parameter. Only imm fields of the lines using it change."""
    if name not in code_list.params:
        raise UnknownParameter(name)
    slot = code_list.params[name]
    old_value = slot.value
    slot.value = float(value)
    for index in slot.lines_using:
        line = code_list.line(index)
        line.imm = code_list.param_exprs[line.param_ref].value
    logstring.ParamUpdated(name, old_value, slot.value, len(slot.lines_using)).record("DEBUG")


def structure_hash(code_list: CodeList) -> str:
    """Hash of the (kind, op, mode, r1, r2) projection and the output map."""
    projection = [(line.kind.value, line.op, line.mode, line.r1, line.r2) for line in code_list.lines]
    return hashlib.sha256(repr((projection, code_list.out_map)).encode()).hexdigest()


def _format_ref(ref: int | None) -> str:
    if ref is None:
        return ""
    return "t" if ref == TIME_REF else str(ref)


def _format_imm(imm: float | None) -> str:
    return "" if imm is None else format(imm, ".15g")


def dump_records(code_list: CodeList) -> list[dict]:
    """One record per line with the fields of the text dump."""
    return [{"line": line.index,
             "kind": line.kind.value,
             "op": line.op,
             "mode": line.mode,
             "r1": line.r1,
             "r2": line.r2,
             "imm": line.imm} for line in code_list.lines]


def dump(code_list: CodeList) -> str:
    """Text table with columns Line, Kind, Op, Mode, R1, R2, Imm."""
    header = ("Line", "Kind", "Op", "Mode", "R1", "R2", "Imm")
    rows = [header] + [(str(line.index), line.kind.value, line.op, line.mode,
                        _format_ref(line.r1), _format_ref(line.r2), _format_imm(line.imm))
                       for line in code_list.lines]
    widths = [max(len(row[column]) for row in rows) for column in range(len(header))]
    text_rows = [" ".join(cell.rjust(width) if column in (0, 4, 5) else cell.ljust(width)
                          for column, (cell, width) in enumerate(zip(row, widths))).rstrip()
                 for row in rows]
    return "\n".join(text_rows)
