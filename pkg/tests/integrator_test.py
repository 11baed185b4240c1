# standard
import math
import pytest
# external
import numpy as np
# local
import codelist
import integrator
from integrator import IntegrationError, MaxStepsExceeded, OutsideSpan, SolveConfig
import stdfuncs


def exp_minus_x():
    return codelist.trace(lambda t, x, p: [stdfuncs.exp(-x[0])], 1)


def growth():
    return codelist.trace(lambda t, x, p: [x[0]], 1)


#################
# Step control  #
#################

@pytest.mark.parametrize("tolerance, expected", [
    (1e-10, 13),
    (1e-13, 16),
    (1e-1, 4),
    (1e-40, 40)])
def test_choose_order(tolerance, expected):
    assert integrator.choose_order(tolerance, tolerance) == expected


def test_choose_order_uses_smaller_tolerance():
    assert integrator.choose_order(1e-3, 1e-10) == integrator.choose_order(1e-10, 1e-10)


def test_propose_step():
    coeffs = np.array([[1.0, 1.0, 0.5]])
    scale = np.ones(1)
    assert integrator.propose_step(coeffs, scale, 2, safety=1.0) == pytest.approx(1.0)
    assert integrator.propose_step(coeffs, scale, 2, safety=0.5) == pytest.approx(0.5)


def test_propose_step_vanishing_coefficients():
    coeffs = np.array([[1.0, 0.0, 0.0]])
    assert integrator.propose_step(coeffs, np.ones(1), 2, safety=0.8) == math.inf
    assert integrator.propose_step(coeffs, np.ones(1), 2, safety=0.8, previous_h=0.25) == 0.5


def test_step_accept():
    coeffs = np.array([[1.0, 1.0, 4.0]])
    accepted, error = integrator.step_accept(coeffs, 0.5, np.ones(1), 2)
    assert accepted
    assert error == pytest.approx(1.0)
    accepted, error = integrator.step_accept(coeffs, -1.0, np.ones(1), 2)
    assert not accepted
    assert error == pytest.approx(4.0)


def test_error_scale():
    np.testing.assert_allclose(integrator.error_scale(np.array([-2.0, 0.0]), 1e-6, 1e-3), [2e-3 + 1e-6, 1e-6])


@pytest.mark.parametrize("changes", [
    {"atol": 0.0},
    {"rtol": -1e-6},
    {"safety": 1.5},
    {"order_override": 0}])
def test_solve_config_validation(changes):
    settings = {"atol": 1e-8, "rtol": 1e-8, "t_span": (0.0, 1.0)} | changes
    with pytest.raises(ValueError):
        SolveConfig(**settings)


############
# Solving  #
############

@pytest.mark.parametrize("tolerance", [1e-6, 1e-9, 1e-12])
def test_exp_minus_x_reaches_log_2(tolerance):
    solution = integrator.solve(exp_minus_x(), [0.0], SolveConfig(tolerance, tolerance, (0.0, 1.0)))
    assert abs(solution.final_state[0] - math.log(2.0)) <= 10 * tolerance
    assert solution.p == integrator.choose_order(tolerance, tolerance)
    assert solution.mesh[-1] == 1.0


@pytest.mark.parametrize("exponent", range(5, 14))
def test_error_proportional_to_tolerance(exponent):
    tolerance = 10.0 ** -exponent
    solution = integrator.solve(exp_minus_x(), [0.0], SolveConfig(tolerance, tolerance, (0.0, 1.0)))
    assert abs(solution.final_state[0] - math.log(2.0)) <= 100 * tolerance


@pytest.mark.parametrize("tolerance", [1e-6, 1e-10])
def test_forward_then_backward_returns_to_start(tolerance):
    forward = integrator.solve(exp_minus_x(), [0.0], SolveConfig(tolerance, tolerance, (0.0, 3.0)))
    backward = integrator.solve(exp_minus_x(), forward.final_state, SolveConfig(tolerance, tolerance, (3.0, 0.0)))
    assert abs(backward.final_state[0]) <= 100 * tolerance


def test_rejected_steps(caplog):
    # x = t + t^7/7: the order-6 series has no terms of order 5 and 6, so the first proposal spans the interval
    caplog.set_level("DEBUG")
    code_list = codelist.trace(lambda t, x, p: [1 + t ** 6], 1)
    solution = integrator.solve(code_list, [0.0], SolveConfig(1e-8, 1e-8, (0.0, 1.0), order_override=6))
    assert solution.steps_failed >= 2
    assert not solution.steps[0].accepted
    assert all(step.error > 1 for step in solution.steps if not step.accepted)
    assert all(step.error <= 1 for step in solution.steps if step.accepted)
    assert solution.final_state[0] == pytest.approx(1 + 1 / 7, abs=1e-7)
    assert "Step rejected." in caplog.text


def test_order_override():
    solution = integrator.solve(growth(), [1.0], SolveConfig(1e-10, 1e-10, (0.0, 1.0), order_override=25))
    assert solution.p == 25
    assert {step.p for step in solution.steps} == {25}
    assert solution.final_state[0] == pytest.approx(math.e, rel=1e-9)


def test_backward_integration():
    solution = integrator.solve(growth(), [math.e], SolveConfig(1e-11, 1e-11, (1.0, 0.0)))
    assert solution.final_state[0] == pytest.approx(1.0, rel=1e-9)
    assert all(step.h < 0 for step in solution.steps)
    assert np.all(np.diff(solution.mesh) < 0)


def test_last_step_ends_on_interval_end():
    solution = integrator.solve(growth(), [1.0], SolveConfig(1e-8, 1e-8, (0.0, 3.3)))
    last = solution.segments[-1]
    assert last.t0 + last.h == pytest.approx(3.3)
    assert solution.steps_accepted == len(solution.segments)


def test_constant_solution_takes_one_step():
    code_list = codelist.trace(lambda t, x, p: [0.0], 1)
    solution = integrator.solve(code_list, [2.0], SolveConfig(1e-8, 1e-8, (0.0, 100.0)))
    assert solution.steps_accepted == 1
    assert solution.final_state[0] == 2.0


def test_empty_interval():
    with pytest.raises(ValueError):
        SolveConfig(1e-8, 1e-8, (1.0, 1.0))


def test_solve_logs(caplog):
    caplog.set_level("INFO")
    integrator.solve(growth(), [1.0], SolveConfig(1e-8, 1e-8, (0.0, 1.0)))
    assert "Starting Taylor integration. States: 1." in caplog.text
    assert "Finished Taylor integration." in caplog.text


################
# Dense output #
################

def test_dense_eval_at_mesh_points():
    solution = integrator.solve(growth(), [1.0], SolveConfig(1e-10, 1e-10, (0.0, 2.0)))
    for segment in solution.segments:
        np.testing.assert_array_equal(integrator.dense_eval(solution, segment.t0), segment.coeffs[:, 0])
    np.testing.assert_array_equal(integrator.dense_eval(solution, 2.0), solution.final_state)


def test_dense_eval_between_mesh_points():
    solution = integrator.solve(growth(), [1.0], SolveConfig(1e-10, 1e-10, (0.0, 2.0)))
    for t in np.linspace(0.0, 2.0, 17):
        assert integrator.dense_eval(solution, t)[0] == pytest.approx(math.exp(t), rel=1e-8)


def test_dense_eval_backward():
    solution = integrator.solve(growth(), [math.e], SolveConfig(1e-10, 1e-10, (1.0, 0.0)))
    assert integrator.dense_eval(solution, 0.5)[0] == pytest.approx(math.exp(0.5), rel=1e-8)


@pytest.mark.parametrize("t", [-0.1, 2.5])
def test_dense_eval_outside_span(t):
    solution = integrator.solve(growth(), [1.0], SolveConfig(1e-8, 1e-8, (0.0, 2.0)))
    with pytest.raises(OutsideSpan):
        integrator.dense_eval(solution, t)


##########
# Errors #
##########

def test_max_steps(caplog):
    with pytest.raises(MaxStepsExceeded) as error:
        integrator.solve(growth(), [1.0], SolveConfig(1e-12, 1e-12, (0.0, 50.0), max_steps=3))
    assert error.value.t0 > 0
    assert "Maximum number of steps exceeded. Limit: 3." in caplog.text


def test_kernel_error_is_wrapped():
    code_list = codelist.trace(lambda t, x, p: [1.0 / x[0]], 1)
    with pytest.raises(IntegrationError) as error:
        integrator.solve(code_list, [0.0], SolveConfig(1e-8, 1e-8, (0.0, 1.0)))
    assert (error.value.t0, error.value.line) == (0.0, 2)
    assert error.value.__cause__ is not None


def test_blow_up_stops():
    # x' = x^2, x(0) = 1 has a pole at t = 1
    code_list = codelist.trace(lambda t, x, p: [x[0] * x[0]], 1)
    with pytest.raises(IntegrationError) as error:
        integrator.solve(code_list, [1.0], SolveConfig(1e-8, 1e-8, (0.0, 2.0)))
    assert error.value.t0 == pytest.approx(1.0, abs=1e-6)
