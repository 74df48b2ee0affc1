import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from identikit.models import (IntegrationError, ModelSpec, ParameterVector, Trajectory,
                              evaluate_rhs, get_model, integrate, reference_rk4)

SIR = {"beta": 0.3, "r": 0.1, "S0": 0.95, "I0": 0.05, "R0": 0.0}
SEIRDZ = {"beta1": 0.28, "z": 0.18, "i": 0.18, "r": 0.11, "d": 0.018,
          "S0": 0.95, "E0": 0.04, "I0": 0.01, "R0": 0.0, "D0": 0.0}


def test_sir_matches_fixed_step_rk4():
    m = get_model("sir")
    theta = m.parameter_vector(SIR)
    t = np.arange(0, 101.0)
    ref = reference_rk4(m, theta, t, h=1e-2)
    got = integrate(m, theta, t, rtol=1e-10, atol=1e-12).states
    assert np.max(np.abs(got - ref)) < 1e-8


def test_seirdz_switch_matches_rk4_and_changes_slope():
    m = get_model("seirdz")
    theta = m.parameter_vector(SEIRDZ)
    t = np.arange(0, 41.0)
    ref = reference_rk4(m, theta, t, h=1e-2)
    got = integrate(m, theta, t, rtol=1e-10, atol=1e-12).states
    assert np.max(np.abs(got - ref)) < 1e-8
    before = evaluate_rhs(m, got[15], 15.0, theta)
    after = evaluate_rhs(m, got[15], 15.0 + 1e-9, theta)
    # infection term drops from beta1 to beta1 - z
    assert after[0] / before[0] == pytest.approx((0.28 - 0.18) / 0.28, rel=1e-6)


def test_seirdz_without_lockdown_equals_seird():
    a = get_model("seirdz")
    b = get_model("seird")
    vals = dict(SEIRDZ, z=0.0)
    t = np.linspace(0, 60, 61)
    ya = integrate(a, a.parameter_vector(vals), t, 1e-10, 1e-12).states
    yb = integrate(b, b.parameter_vector(dict(vals, beta=0.28)), t, 1e-10, 1e-12).states
    assert np.max(np.abs(ya - yb)) < 1e-9


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
@settings(max_examples=30, deadline=None)
@given(beta=st.floats(0.05, 1.0), r=st.floats(0.01, 0.5), i0=st.floats(1e-4, 0.2))
def test_sir_conserves_population(beta, r, i0):
    m = get_model("sir")
    theta = m.parameter_vector({"beta": beta, "r": r, "S0": 1 - i0, "I0": i0, "R0": 0.0})
    y = integrate(m, theta, np.linspace(0, 100, 51), 1e-10, 1e-12).states
    assert np.max(np.abs(y.sum(axis=1) - 1.0)) <= 1e-8


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
@settings(max_examples=20, deadline=None)
@given(z=st.floats(0.0, 0.2), n_pop=st.floats(1.0, 1e6))
def test_seirdz_conserves_population(z, n_pop):
    m = get_model("seirdz", n_pop=n_pop)
    vals = {k: (v * n_pop if k.endswith("0") else v) for k, v in SEIRDZ.items()}
    vals["z"] = z
    y = integrate(m, m.parameter_vector(vals), np.linspace(0, 100, 51), 1e-10, 1e-12).states
    assert np.max(np.abs(y.sum(axis=1) / n_pop - 1.0)) <= 1e-8


def test_output_grid_does_not_change_values():
    m = get_model("sir")
    theta = m.parameter_vector(SIR)
    coarse = integrate(m, theta, [10.0, 50.0])
    fine = integrate(m, theta, np.linspace(0, 50, 501))
    assert np.allclose(coarse.states[0], fine.states[100], atol=1e-6)


def test_trajectory_is_read_only_and_labelled():
    m = get_model("sir")
    tr = integrate(m, m.parameter_vector(SIR), [0.0, 1.0, 2.0])
    assert isinstance(tr, Trajectory)
    assert tr.column("I")[0] == pytest.approx(0.05)
    with pytest.raises(ValueError):
        tr.states[0, 0] = 1.0


def test_bad_grids_rejected():
    m = get_model("sir")
    theta = m.parameter_vector(SIR)
    with pytest.raises(ValueError):
        integrate(m, theta, [2.0, 1.0])
    with pytest.raises(ValueError):
        integrate(m, theta, [-1.0, 1.0])
    with pytest.raises(ValueError):
        integrate(m, theta, [])


def test_missing_parameter_named():
    m = get_model("sir")
    with pytest.raises(KeyError, match="I0"):
        m.parameter_vector({"beta": 0.3, "r": 0.1, "S0": 1.0, "R0": 0.0})


def test_parameter_vector_bounds_and_replace():
    pv = ParameterVector(("a", "b"), [1.0, 2.0], [[0, 2], [1, 3]])
    assert pv["b"] == 2.0
    assert pv.replace(a=1.5)["a"] == 1.5
    with pytest.raises(ValueError):
        ParameterVector(("a",), [5.0], [[0, 1]])


def test_unknown_model():
    with pytest.raises(KeyError):
        get_model("sirs")


def test_out_of_range_state_warns():
    m = get_model("sir")
    theta = m.parameter_vector({"beta": 0.3, "r": 0.1, "S0": 1.2, "I0": 0.05, "R0": 0.0})
    with pytest.warns(RuntimeWarning):
        integrate(m, theta, [0.0, 1.0])


def test_blow_up_raises_integration_error():
    from numba import njit

    @njit
    def rhs(t, y, p, seg):
        out = np.empty(1)
        out[0] = y[0] * y[0]
        return out

    m = ModelSpec("blowup", ("x",), ("c",), rhs, n_pop=1e300)
    theta = m.parameter_vector({"c": 0.0, "x0": 1.0})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(IntegrationError) as err:
            integrate(m, theta, [0.5, 2.0])
    assert err.value.t_fail == pytest.approx(1.0, abs=1e-2)
