import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from covert_pursuit.dc_transform import surrogate_propulsion
from covert_pursuit.power import (
    DomainError,
    PropulsionParams,
    SolarParams,
    ThrustParams,
    fit_solar_linear,
    hover_power,
    induced_factor,
    propulsion_power_exact,
    solar_approx_from_constants,
    solar_lower_bound_gap,
    solar_power_exact,
    solve_q_exact,
    thrust_power,
)

PROP = PropulsionParams()
SOLAR = SolarParams()


def test_hover_power_is_blade_plus_induced():
    assert propulsion_power_exact(0.0, PROP) == 121.4
    assert hover_power(PROP) == 121.4


def test_propulsion_dips_below_hover_then_rises():
    v = np.linspace(0.0, 30.0, 301)
    p = propulsion_power_exact(v, PROP)
    i = int(np.argmin(p))
    assert 15.0 < v[i] < 25.0
    assert p[i] < 60.0
    assert p[-1] > p[i]


def test_propulsion_rejects_negative_speed():
    with pytest.raises(DomainError):
        propulsion_power_exact(-1.0, PROP)
    with pytest.raises(DomainError):
        propulsion_power_exact(float("nan"), PROP)


@given(st.floats(0.0, 60.0))
def test_q_root_satisfies_relation(v):
    q = solve_q_exact(v, PROP.v0)
    lhs = 1.0 / q**2
    rhs = q**2 + v**2 / PROP.v0**2
    assert q > 0
    assert math.isclose(lhs, rhs, rel_tol=1e-12)


def test_q_at_hover_is_one():
    assert solve_q_exact(0.0, PROP.v0) == 1.0


def test_induced_factor_has_no_cancellation_at_high_speed():
    # v^2/2v0^2 ~ 1.7e9: the naive difference would round to zero
    v = 1e5 * PROP.v0
    q = induced_factor(v, PROP.v0)
    assert q > 0
    assert math.isclose(q, PROP.v0 / v, rel_tol=1e-9)


@given(st.floats(0.0, 30.0))
def test_surrogate_matches_exact_at_q_root(v):
    delta = 0.2
    q = solve_q_exact(v, PROP.v0)
    sur = surrogate_propulsion(v * delta, 0.0, q, PROP, delta)
    assert math.isclose(sur, propulsion_power_exact(v, PROP), rel_tol=1e-9)


@given(st.floats(0.0, 30.0), st.floats(0.0, 0.5))
def test_surrogate_grows_with_q(v, extra):
    delta = 0.2
    q = solve_q_exact(v, PROP.v0)
    assert surrogate_propulsion(v * delta, 0.0, q + extra, PROP, delta) >= propulsion_power_exact(v, PROP) - 1e-9


def test_thrust_sign_and_zero():
    tp = ThrustParams()
    assert tp.weight_force == pytest.approx(39.2)
    assert thrust_power(101.0, 100.0, tp, 0.2) == pytest.approx(196.0)
    assert thrust_power(100.0, 101.0, tp, 0.2) == pytest.approx(-196.0)
    assert thrust_power(100.0, 100.0, tp, 0.2) == 0.0
    with pytest.raises(DomainError):
        thrust_power(1.0, 0.0, tp, 0.0)


@given(st.floats(0.0, 40000.0), st.floats(1.0, 100.0))
def test_solar_power_increases_with_altitude(z, dz):
    assert solar_power_exact(z + dz, SOLAR) > solar_power_exact(z, SOLAR)


def test_solar_rejects_out_of_domain():
    with pytest.raises(DomainError):
        solar_power_exact(-1.0, SOLAR)
    with pytest.raises(DomainError):
        solar_power_exact(1e6, SOLAR)


@given(st.floats(0.0, 2000.0), st.floats(1.0, 300.0))
def test_fitted_line_is_a_lower_bound(lo, width):
    approx = fit_solar_linear(SOLAR, (lo, lo + width))
    over, _ = solar_lower_bound_gap(approx, SOLAR)
    assert over <= 0.0


def test_fit_rejects_empty_band():
    with pytest.raises(DomainError):
        fit_solar_linear(SOLAR, (10.0, 10.0))


def test_supplied_coefficients_warn_when_above_curve():
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        approx = solar_approx_from_constants(0.0, 1e4, SOLAR, (101.0, 201.0))
    assert not approx.audited
    assert any("exceed" in str(w.message) for w in rec)


@pytest.mark.parametrize("field,value", [("p0", 0.0), ("v0", -1.0), ("rho", 0.0)])
def test_propulsion_params_validate(field, value):
    with pytest.raises(DomainError):
        PropulsionParams(**{field: value})


def test_solar_params_validate():
    with pytest.raises(DomainError):
        SolarParams(eta=1.5)
    with pytest.raises(DomainError):
        SolarParams(cos_zenith=0.0)
