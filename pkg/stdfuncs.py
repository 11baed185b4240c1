# standard
from dataclasses import dataclass
import functools
import math
import numbers
from typing import Callable
# local
from codelist import ParamValue, UnsupportedFunction, UnsupportedParamExponent, Var
import logstring


INTEGER_POWER_CUTOFF = 2 ** 31      # Integer exponents up to this size become a square-and-multiply chain of muls
SELF_TEST_RELATIVE_STEP = 1e-5
SELF_TEST_TOLERANCE = 1e-6


class DuplicateSubODE(ValueError):
    """A sub-ODE function with this name is already registered."""


class InconsistentSubODE(ValueError):
    """The h fragment of a sub-ODE function does not match the derivative of its base function."""


@dataclass(frozen=True)
class SubODEDef:
    """
    Standard function v = g(u) with v' = h(u, v) * u', where h is built from arithmetic only.
    base evaluates g in floating point. h_template gets u and the tuple of the m outputs, and returns m values.
    It runs on tracer values when emitting code-list lines and on floats in the self-test.
    """
    name: str
    m: int
    base: Callable[[float], tuple[float, ...]]
    h_template: Callable[[object, tuple], tuple]
    sample_points: tuple[float, ...]
    constant: float | None = None           # Exponent of the power family, None for the other functions


REGISTRY: dict[str, SubODEDef] = dict()


def self_test(definition: SubODEDef) -> None:
    """
    Compare h(u, g(u)) against a central finite difference of g at each sample point.
    :param definition: Sub-ODE definition to check
    :return: None, raises InconsistentSubODE on mismatch
    """
    for u in definition.sample_points:
        step = SELF_TEST_RELATIVE_STEP * max(1.0, abs(u))
        try:
            upper, lower = definition.base(u + step), definition.base(u - step)
        except OverflowError:           # Large exponents of the power family
            continue
        h_values = definition.h_template(u, definition.base(u))
        for component in range(definition.m):
            numeric = (upper[component] - lower[component]) / (2 * step)
            if abs(numeric - h_values[component]) > SELF_TEST_TOLERANCE * (1 + abs(h_values[component])):
                raise InconsistentSubODE(
                    f"'{definition.name}' component {component + 1} at u={u}: "
                    f"h gives {h_values[component]}, finite difference gives {numeric}.")


def register(definition: SubODEDef) -> SubODEDef:
    """Self-test and add a sub-ODE function to the registry."""
    if definition.name in REGISTRY:
        raise DuplicateSubODE(definition.name)
    if definition.m < 1:
        raise ValueError(f"Sub-ODE '{definition.name}' needs at least one output, got m={definition.m}.")
    self_test(definition)
    REGISTRY[definition.name] = definition
    logstring.SubODERegistered(definition.name, definition.m).record("DEBUG")
    return definition


def builtin_library() -> set[SubODEDef]:
    """Register the standard functions exp, log, sqrt, cs (cos and sin together) and tan."""
    definitions = [
        SubODEDef(
            name="exp",
            m=1,
            base=lambda u: (math.exp(u),),
            h_template=lambda u, v: (v[0],),
            sample_points=(-1.0, -0.3, 0.0, 0.5, 1.2)),
        SubODEDef(
            name="log",
            m=1,
            base=lambda u: (math.log(u),),
            h_template=lambda u, v: (1 / u,),
            sample_points=(0.3, 0.8, 1.0, 2.0, 5.0)),
        SubODEDef(
            name="sqrt",
            m=1,
            base=lambda u: (math.sqrt(u),),
            h_template=lambda u, v: (0.5 * v[0] / u,),
            sample_points=(0.25, 0.5, 1.0, 2.0, 9.0)),
        SubODEDef(
            name="cs",
            m=2,
            base=lambda u: (math.cos(u), math.sin(u)),
            h_template=lambda u, v: (-v[1], v[0]),
            sample_points=(-1.0, 0.0, 0.4, 1.3, 2.9)),
        SubODEDef(
            name="tan",
            m=1,
            base=lambda u: (math.tan(u),),
            h_template=lambda u, v: (1 + v[0] * v[0],),
            sample_points=(-1.2, -0.5, 0.0, 0.4, 1.1))]
    for definition in definitions:
        if definition.name not in REGISTRY:
            register(definition)
    return {REGISTRY[definition.name] for definition in definitions}


@functools.lru_cache(maxsize=None)
def power_definition(exponent: float) -> SubODEDef:
    """Sub-ODE definition of u**c for one real exponent c. Not kept in the registry: one definition per c."""
    definition = SubODEDef(
        name="pow",
        m=1,
        base=lambda u: (math.pow(u, exponent),),
        h_template=lambda u, v: (exponent * v[0] / u,),
        sample_points=(0.3, 0.8, 1.0, 2.0, 4.0),
        constant=exponent)
    self_test(definition)
    return definition


##################
# Tracer entries #
##################

def apply(definition: SubODEDef, u) -> tuple:
    """
    Apply a sub-ODE function to a tracer value, parameter expression or number.
    Traced input emits (or reuses) a SUB block. Anything else is folded.
    """
    if isinstance(u, Var):
        return u.tracer.emit_subode(definition, u)
    if isinstance(u, ParamValue):
        return tuple(u.map(f"{definition.name}[{component}]", lambda value, c=component: definition.base(value)[c])
                     for component in range(definition.m))
    if isinstance(u, numbers.Real):
        return definition.base(float(u))
    raise UnsupportedFunction(f"'{definition.name}' applied to unsupported type {type(u).__name__}.")


def call(name: str, u) -> tuple:
    if name not in REGISTRY:
        raise UnsupportedFunction(f"'{name}' is not a registered standard function.")
    return apply(REGISTRY[name], u)


def exp(u):
    return call("exp", u)[0]


def log(u):
    return call("log", u)[0]


def sqrt(u):
    return call("sqrt", u)[0]


def cs(u) -> tuple:
    """cos(u) and sin(u) from one shared block."""
    return call("cs", u)


def cos(u):
    return call("cs", u)[0]


def sin(u):
    return call("cs", u)[1]


def tan(u):
    return call("tan", u)[0]


def _square_and_multiply(u, exponent: int):
    """Left-to-right binary exponentiation: u**11 is u, u², u⁴·u, u⁵², u¹⁰·u, i.e. five muls."""
    result = u
    for bit in bin(exponent)[3:]:
        result = result * result
        if bit == "1":
            result = result * u
    return result


def lower_power(u, exponent):
    """
    u ** c for a constant c.
    Integer c becomes a chain of muls (negative c: one div into 1), c = 0.5 uses sqrt,
    other real c a pow sub-ODE block.
    """
    if isinstance(exponent, ParamValue):
        raise UnsupportedParamExponent(
            f"Exponent {exponent.key} is a parameter. The code-list structure would depend on its value.")
    if isinstance(exponent, Var):
        raise UnsupportedFunction("Power with a traced exponent is not supported.")
    if not isinstance(exponent, numbers.Real):
        raise UnsupportedFunction(f"Power with exponent of type {type(exponent).__name__} is not supported.")
    exponent = float(exponent)
    if isinstance(u, ParamValue):
        return u ** exponent
    if not isinstance(u, Var):
        return math.pow(float(u), exponent)

    if exponent.is_integer() and abs(exponent) <= INTEGER_POWER_CUTOFF:
        if exponent == 0:
            return 1.0
        result = _square_and_multiply(u, int(abs(exponent)))
        return result if exponent > 0 else 1.0 / result
    if exponent == 0.5:
        return sqrt(u)
    return apply(power_definition(exponent), u)[0]


def power(u, exponent):
    return lower_power(u, exponent)


builtin_library()
