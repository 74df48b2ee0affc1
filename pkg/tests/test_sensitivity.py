import numpy as np
import pytest

from identikit.models import get_model
from identikit.observe import scaled_state
from identikit.sample import uniform
from identikit.sensitivity import sobol_indices, sobol_over_time, sobol_rows


def test_additive_linear_matches_analytic():
    a = np.array([1.0, 2.0, 3.0])
    priors = [uniform(0, 1)] * 3
    res = sobol_indices(lambda x: float(a @ x), priors, n=4096, seed=1)
    exact = a ** 2 / np.sum(a ** 2)
    assert np.all(np.abs(res.principal - exact) <= 3 * res.principal_se + 1e-12)
    assert np.all(np.abs(res.total - exact) <= 3 * res.total_se + 1e-12)


def test_ishigami_interaction_shows_in_total_only():
    def ishigami(x):
        return np.sin(x[0]) + 7 * np.sin(x[1]) ** 2 + 0.1 * x[2] ** 4 * np.sin(x[0])

    priors = [uniform(-np.pi, np.pi)] * 3
    res = sobol_indices(ishigami, priors, n=4096, seed=2)
    assert abs(res.principal[2]) < 0.05
    assert res.total[2] == pytest.approx(0.2437, abs=0.05)
    assert res.principal[1] == pytest.approx(0.4424, abs=0.05)


def test_constant_output_flagged_undefined():
    res = sobol_indices(lambda x: 1.0, [uniform(0, 1)] * 2, n=64, seed=0)
    assert bool(res.undefined)
    assert np.all(np.isnan(res.principal))


def test_deterministic_and_minimum_n():
    f = lambda x: x[0] + x[1] ** 2
    a = sobol_indices(f, [uniform(0, 1)] * 2, n=128, seed=5)
    b = sobol_indices(f, [uniform(0, 1)] * 2, n=128, seed=5)
    assert np.array_equal(a.principal, b.principal) and np.array_equal(a.total_se, b.total_se)
    with pytest.raises(ValueError):
        sobol_indices(f, [uniform(0, 1)] * 2, n=32)


def test_sir_late_times_dominated_by_r():
    m = get_model("sir")
    base = {"S0": 0.95, "I0": 0.05, "R0": 0.0, "beta": 0.3, "r": 0.1}
    ops = [scaled_state(s) for s in m.state_names]
    res = sobol_over_time(m, ops, [uniform(0.25, 0.35), uniform(0.06, 0.18)], ["beta", "r"],
                          base, [10.0, 100.0], n=256, seed=0)
    assert res.total.shape == (2, 2, 3)
    late = res.total[:, 1, :]
    assert np.all(late[1] > late[0])
    assert len(sobol_rows(res)) == 2 * 3 * 2
