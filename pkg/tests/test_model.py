import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from condensate.model import (
    DegenerateGamma,
    ModelParams,
    RateSpec,
    as_control_state,
    beta_bar,
    beta_of_y,
    drift_b,
    fixed_point_ybar,
    full_occupation,
    gamma_closed_form_A1,
    gamma_of_y,
    rho_crit,
    theta_of_y,
    u1,
    u2,
)
from strategies import params_and_y, rate_specs


def test_leading_rates_by_hand():
    spec = RateSpec.leading_example(2, 3.0)
    L = 100
    n = np.array([0, 1, 2, 3, 7])
    assert np.allclose(u1(spec, L, n), [0.0, 0.03, 0.03, 1.0, 5.0])
    assert np.allclose(u2(spec, L, n), [0.03, 0.03, 0.03, 1.03, 5.03])
    assert u1(spec, L, 5) == spec.u1(L, 5)


def test_generic_rates_by_hand():
    spec = RateSpec(A=2, q=(1.0, 2.0), r=(0.5, 1.5, 4.0))
    L = 10
    assert np.allclose(u1(spec, L, [0, 1, 2, 3]), [0.0, 0.1, 0.2, 1.0])
    assert np.allclose(u2(spec, L, [0, 1, 2, 3]), [0.05, 0.15, 0.4, 1.0])


@pytest.mark.parametrize("bad", [
    dict(A=1, q=(1.0,), r=(1.0,)),
    dict(A=1, q=(2.0,), r=(1.0, 1.0)),
    dict(A=1, q=(1.0,), r=(0.0, 1.0)),
    dict(A=-1, q=(), r=()),
    dict(A=1, q=(1.0,), r=(1.0, 1.0), zeta_scale=-1.0),
])
def test_rate_spec_rejects_invalid(bad):
    with pytest.raises(ValueError):
        RateSpec(**bad)


def test_rate_spec_check_escape_hatch():
    spec = RateSpec(A=1, q=(2.0,), r=(1.0, 1.0), check=False)
    assert spec.q == (2.0,)


def test_rate_spec_round_trip_and_fractions():
    spec = RateSpec.from_dict({"A": 2, "q": ["1/3", 1], "r": [0.5, "2/3", 2]})
    assert spec.q[0] == pytest.approx(1 / 3, abs=0)
    assert RateSpec.loads(spec.dumps()) == spec
    lead = RateSpec.leading_example(3, 0.7)
    again = RateSpec.loads(lead.dumps())
    assert again == lead and again.is_leading
    assert RateSpec.from_dict({"A": 1, "theta": 2}) == RateSpec.leading_example(1, 2.0)


def test_zero_threshold_spec():
    spec = RateSpec(A=0, q=(), r=(1.0,))
    assert spec.r == (1.0,)
    assert rho_crit(spec) == 0.0
    assert np.allclose(u1(spec, 10, [0, 1, 4]), [0.0, 1.0, 4.0])


def test_rho_crit_leading_is_half_threshold():
    assert rho_crit(RateSpec.leading_example(1, 1.0)) == 0.5
    for A in range(1, 11):
        spec = RateSpec.leading_example(A, 2.5)
        assert np.allclose(fixed_point_ybar(spec), 1.0 / (A + 1), atol=1e-15)
        assert rho_crit(spec) == pytest.approx(A / 2, rel=1e-15)


def test_fixed_point_by_hand():
    # weights 1, r0/q1 = 2, 2 * r1/q2 = 2 * 3/6 = 1
    spec = RateSpec(A=2, q=(1.0, 6.0), r=(2.0, 3.0, 6.0))
    assert np.allclose(fixed_point_ybar(spec), [0.25, 0.5, 0.25])
    assert rho_crit(spec) == pytest.approx(1.0)


@given(rate_specs())
def test_fixed_point_is_stationary_for_drift(spec):
    ybar = fixed_point_ybar(spec)
    assert abs(ybar.sum() - 1.0) < 1e-14
    params = ModelParams(spec, rho_crit(spec) * 2 + 0.1)
    assert np.max(np.abs(drift_b(params, ybar[:-1]))) < 1e-12


@given(params_and_y())
def test_gamma_and_theta_definitions(pair):
    params, y = pair
    yf = full_occupation(y)
    assert abs(yf.sum() - 1.0) < 1e-12
    k = np.arange(params.A + 1)
    assert gamma_of_y(params, y) == pytest.approx(max(1 - (k * yf).sum() / params.rho, 0.0), abs=1e-12)
    spec = params.spec
    theta = sum((spec.r[j] - (spec.q[j - 1] if j else 0.0)) * yf[j] for j in range(params.A + 1))
    assert theta_of_y(params, y) == pytest.approx(theta, abs=1e-12)


@given(params_and_y())
def test_drift_by_loops(pair):
    params, y = pair
    spec, A, rho = params.spec, params.A, params.rho
    yf = full_occupation(y)
    q = (0.0,) + spec.q
    r = spec.r
    g = float(gamma_of_y(params, y))
    expect = []
    for k in range(A):
        up = q[k + 1] * yf[k + 1]
        down = r[k - 1] * yf[k - 1] if k >= 1 else 0.0
        expect.append(rho * g * (up + down - (q[k] + r[k]) * yf[k]))
    assert np.allclose(drift_b(params, y), expect, atol=1e-12)


@given(params_and_y())
def test_beta_matches_continuous_extension(pair):
    params, y = pair
    g = gamma_of_y(params, y)
    if g == 0:
        with pytest.raises(DegenerateGamma):
            beta_of_y(params, y)
    elif g > 1e-6:
        assert abs(beta_of_y(params, y) - beta_bar(params, y)) < 1e-10


def test_batch_evaluation_matches_pointwise(rng):
    params = ModelParams(RateSpec(A=3, q=(1, 2, 3), r=(1, 2, 3, 4)), 2.5)
    Y = rng.dirichlet(np.ones(4), size=50)[:, :3]
    B = drift_b(params, Y)
    for i in range(0, 50, 7):
        assert np.allclose(B[i], drift_b(params, Y[i]))
        assert gamma_of_y(params, Y)[i] == pytest.approx(gamma_of_y(params, Y[i]), abs=1e-15)


def test_control_state_validation():
    with pytest.raises(ValueError):
        as_control_state([0.7, 0.6], 2)
    with pytest.raises(ValueError):
        as_control_state([0.5], 2)
    assert as_control_state([0.5, 0.5], 2).tolist() == [0.5, 0.5]


@pytest.mark.parametrize("rho", [0.025, 0.25, 0.5, 0.65, 1.0, 2.0])
@pytest.mark.parametrize("gamma0", [1.0, 0.3])
def test_closed_form_solves_logistic_equation(rho, gamma0):
    theta = 1.3
    t = np.linspace(0.0, 3.0, 61)
    g = gamma_closed_form_A1(theta, rho, t, gamma0)
    h = 1e-5
    dg = (gamma_closed_form_A1(theta, rho, t + h, gamma0) - gamma_closed_form_A1(theta, rho, t - h, gamma0)) / (2 * h)
    assert g[0] == pytest.approx(gamma0, abs=1e-15)
    assert np.allclose(dg, theta * g * (2 * rho * (1 - g) - 1), atol=1e-7)


def test_closed_form_limits():
    assert gamma_closed_form_A1(1.0, 1.0, 1.0) == pytest.approx(1 / (2 - math.exp(-1)), abs=1e-15)
    assert gamma_closed_form_A1(1.0, 2.0, 200.0) == pytest.approx(0.75, abs=1e-12)
    assert gamma_closed_form_A1(1.0, 0.25, 200.0) == pytest.approx(0.0, abs=1e-12)
    # critical density: algebraic decay
    assert gamma_closed_form_A1(2.0, 0.5, 4.0) == pytest.approx(1 / 9, abs=1e-15)


@given(st.floats(0.05, 3.0), st.floats(0.0, 1.0))
def test_closed_form_agrees_with_drift_for_A1(rho, y0):
    # for A = 1, gamma = 1 - (1 - y_0)/rho and gamma' = b_0/rho
    params = ModelParams(RateSpec.leading_example(1, 1.0), rho)
    g = float(gamma_of_y(params, [y0]))
    if g <= 0:
        assert drift_b(params, [y0])[0] == 0.0
        return
    assert drift_b(params, [y0])[0] / rho == pytest.approx(g * (2 * rho * (1 - g) - 1), abs=1e-12)


def test_gamma_bar_and_rho_c():
    params = ModelParams(RateSpec.leading_example(2, 1.0), 3.0)
    assert params.rho_c == pytest.approx(1.0)
    assert params.gamma_bar == pytest.approx(2 / 3)
    assert ModelParams(RateSpec.leading_example(1, 1.0), 0.3).gamma_bar == 0.0
    with pytest.raises(ValueError):
        ModelParams(RateSpec.leading_example(1, 1.0), 0.0)
