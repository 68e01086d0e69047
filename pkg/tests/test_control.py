import math
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from condensate.control import (
    StepRejected,
    control_drivers,
    integrate,
    integrate_fixed,
    long_time_gamma,
    project_simplex,
    rk4_step,
    simplex_violation,
)
from condensate.model import ModelParams, RateSpec, drift_b, fixed_point_ybar, gamma_closed_form_A1, gamma_of_y

LEAD1 = RateSpec.leading_example(1, 1.0)


def test_rk4_exact_on_cubic():
    # RK4 integrates polynomials of degree <= 4 in t exactly
    f = lambda t, y: np.array([4 * t**3])
    y = rk4_step(f, 0.5, np.array([0.5**4]), 0.3)
    assert y[0] == pytest.approx(0.8**4, abs=1e-15)


@pytest.mark.parametrize("rho", [0.025, 0.25, 0.65, 1.0])
def test_matches_closed_form(rho):
    grid = np.linspace(0, 3, 301)
    sol = integrate(ModelParams(LEAD1, rho), [1.0], grid)
    assert np.max(np.abs(sol.gamma_track - gamma_closed_form_A1(1.0, rho, grid))) < 1e-8
    assert sol.states.shape == (301, 1)


def test_fourth_order_convergence():
    params = ModelParams(LEAD1, 1.0)
    grid = np.array([0.0, 2.0])
    exact = gamma_closed_form_A1(1.0, 1.0, 2.0)
    errs = [abs(integrate_fixed(params, [1.0], grid, h).gamma_track[-1] - exact) for h in (0.2, 0.1, 0.05)]
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert all(3.7 < p < 4.3 for p in orders), orders


def test_runtime_budget():
    params = ModelParams(LEAD1, 0.65)
    integrate(params, [1.0], np.linspace(0, 3, 301))
    t0 = time.perf_counter()
    integrate(params, [1.0], np.linspace(0, 3, 301))
    assert time.perf_counter() - t0 < 1.0


def test_grid_must_increase():
    with pytest.raises(ValueError):
        integrate_fixed(ModelParams(LEAD1, 1.0), [1.0], [0.0, 1.0, 1.0], 0.1)


@given(st.lists(st.floats(-0.5, 1.5), min_size=1, max_size=5))
def test_projection_lands_in_simplex(y):
    p = project_simplex(np.array(y))
    assert simplex_violation(p) <= 1e-15


def test_simplex_violation_values():
    assert simplex_violation([0.2, 0.3]) == 0.0
    assert simplex_violation([-0.1, 0.3]) == pytest.approx(0.1)
    assert simplex_violation([0.7, 0.6]) == pytest.approx(0.3)


def test_state_stays_in_simplex_generic():
    spec = RateSpec(A=3, q=(1.0, 2.0, 0.5), r=(3.0, 2.5, 2.0, 1.0))
    params = ModelParams(spec, 4.0)
    sol = integrate_fixed(params, [1.0, 0.0, 0.0], np.linspace(0, 5, 51), 0.01)
    assert np.all(sol.states >= 0) and np.all(sol.states.sum(axis=1) <= 1 + 1e-12)


def test_large_step_is_rejected():
    params = ModelParams(RateSpec(A=1, q=(50.0,), r=(50.0, 50.0)), 1.0)
    with pytest.raises(StepRejected):
        integrate_fixed(params, [1.0], [0.0, 1.0], 0.5)


@pytest.mark.parametrize("A,rho,expect", [(1, 2.0, 0.75), (2, 3.0, 2 / 3), (1, 0.25, 0.0), (3, 2.0, 0.25)])
def test_long_time_limit(A, rho, expect):
    y0 = np.zeros(A)
    y0[0] = 1.0
    res = long_time_gamma(ModelParams(RateSpec.leading_example(A, 1.0), rho), y0)
    assert res.converged
    assert abs(res.gamma - expect) < 1e-6


def test_long_time_flags_non_convergence():
    res = long_time_gamma(ModelParams(LEAD1, 2.0), [1.0], horizon=2.0)
    assert not res.converged and res.t_end == 2.0
    assert res.drift_norm > 1e-6


def test_long_time_reaches_fixed_point_generic():
    spec = RateSpec(A=2, q=(1.0, 6.0), r=(2.0, 3.0, 6.0))
    params = ModelParams(spec, 3.0)
    res = long_time_gamma(params, [1.0, 0.0])
    assert np.allclose(res.y_end, fixed_point_ybar(spec)[:-1], atol=1e-9)
    assert res.gamma == pytest.approx(params.gamma_bar, abs=1e-9)


def test_drivers_interpolate_to_integrator_accuracy():
    params = ModelParams(LEAD1, 1.0)
    g, th = control_drivers(params, [1.0], 2.0)
    for t in (0.0, 0.1234, 0.5, 1.7777, 2.0):
        gc = gamma_closed_form_A1(1.0, 1.0, t)
        assert g(t) == pytest.approx(gc, abs=1e-10)
        # theta(y) = Theta * y_0 and y_0 = gamma at unit density
        assert th(t) == pytest.approx(gc, abs=1e-10)


def test_gamma_zero_is_absorbing():
    params = ModelParams(LEAD1, 0.5)
    sol = integrate_fixed(params, [0.0], np.linspace(0, 3, 7), 0.05)
    assert np.all(sol.gamma_track == 0.0)
    assert np.all(drift_b(params, sol.states) == 0.0)
    assert gamma_of_y(params, [0.0]) == 0.0


def test_csv_header():
    sol = integrate(ModelParams(LEAD1, 1.0), [1.0], [0.0, 1.0])
    lines = sol.to_csv("# h").splitlines()
    assert lines[:2] == ["# h", "t,y_0,gamma,theta"] and len(lines) == 4
