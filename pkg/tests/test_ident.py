import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from identikit.fit import KnownSigma, LikelihoodSpec, fisher_jacobian, mle
from identikit.ident import (InconsistentCoefficientsError, ProfileCurve, StructuralCase,
                             bootstrap_are, chi2_threshold, correlation_matrix,
                             equivalent_sir_parameters, fim_diagnostics, indistinguishable,
                             invert_coefficients, pl_interval, profile_likelihood,
                             structural_coefficients)
from identikit.models import get_model
from identikit.observe import scaled_state, synthesize

SIR = {"beta": 0.3, "r": 0.1, "K": 3.0, "N_pop": 1.0, "S0": 0.95, "I0": 0.05, "R0": 0.0}
SEIRD = {"beta": 0.28, "r": 0.11, "d": 0.018, "i": 0.18, "K": 3.0, "N_pop": 1.0}


def test_coefficient_examples():
    assert np.allclose(structural_coefficients(StructuralCase("sir_I_only"), SIR), [0.9, 0.09])
    assert np.allclose(structural_coefficients(StructuralCase("sir_I_and_R"), SIR),
                       [0.3, 0.9, 0.1])
    case = StructuralCase("seird_IRD", {"N_pop"})
    got = invert_coefficients(case, structural_coefficients(case, SEIRD), {"N_pop": 1.0})
    assert got.kind == "unique"
    for k in ("beta", "r", "d", "i", "K"):
        assert got.values[k] == pytest.approx(SEIRD[k], abs=1e-10)


def test_i_only_verdicts():
    unique = invert_coefficients(StructuralCase("sir_I_only"), [0.9, 0.09],
                                 {"K": 3.0, "N_pop": 1.0})
    assert unique.kind == "unique"
    assert unique.values == pytest.approx({"beta": 0.3, "r": 0.1})
    combo = invert_coefficients(StructuralCase("sir_I_only", {"N_pop"}), [0.9, 0.09],
                                {"N_pop": 1.0})
    assert combo.kind == "combinations"
    assert combo.to_dict()["identified"] == ["r", "K*beta"]
    assert combo.values == pytest.approx({"r": 0.1, "K*beta": 0.9})


def test_inconsistent_and_zero_coefficients():
    case = StructuralCase("seird_IRD", {"N_pop"})
    c = structural_coefficients(case, SEIRD)
    c[3] *= 1 + 1e-6
    with pytest.raises(InconsistentCoefficientsError):
        invert_coefficients(case, c, {"N_pop": 1.0})
    with pytest.raises(ZeroDivisionError):
        invert_coefficients(StructuralCase("sir_I_only"), [0.0, 0.09], {"K": 3.0, "N_pop": 1.0})
    with pytest.raises(ValueError):
        structural_coefficients(StructuralCase("sir_I_only"), dict(SIR, r=-0.1))
    with pytest.raises(ValueError):
        StructuralCase("sir_I_only", {"beta"})


@pytest.mark.parametrize("case_id,knowns,names", [
    ("sir_I_only", {"K", "N_pop"}, ("beta", "r")),
    ("sir_I_and_R", {"N_pop"}, ("beta", "r", "K")),
    ("sir_I_and_R", {"K"}, ("beta", "r", "N_pop")),
    ("seird_IRD", {"N_pop"}, ("beta", "i", "r", "d", "K")),
])
def test_round_trip_random_draws(case_id, knowns, names):
    case = StructuralCase(case_id, knowns)
    rng = np.random.default_rng(11)
    for _ in range(100):
        theta = {"beta": rng.uniform(0.05, 1.0), "r": rng.uniform(0.01, 0.5),
                 "K": rng.uniform(1.0, 10.0), "N_pop": rng.uniform(1.0, 1e6),
                 "i": rng.uniform(0.05, 0.5), "d": rng.uniform(0.001, 0.05)}
        got = invert_coefficients(case, structural_coefficients(case, theta),
                                  {k: theta[k] for k in knowns})
        assert got.kind == "unique"
        for k in names:
            assert got.values[k] == pytest.approx(theta[k], rel=1e-8)


def test_indistinguishable_pair_only_with_I_data():
    m = get_model("sir")
    b = equivalent_sir_parameters(SIR, 0.45, 2.0)
    i_only = indistinguishable(m, [scaled_state("I")], SIR, b, 100.0)
    assert i_only.indistinguishable and i_only.max_gap < 1e-5
    both = indistinguishable(m, [scaled_state("I"), scaled_state("R")], SIR, b, 100.0)
    assert not both.indistinguishable and both.max_gap > 1e-3
    same = indistinguishable(m, [scaled_state("I")], SIR, SIR, 100.0)
    assert same.indistinguishable and same.max_gap == 0.0


@settings(max_examples=15, deadline=None)
@given(beta=st.floats(0.1, 0.8), k_b=st.floats(1.0, 8.0), dr=st.floats(-0.5, 0.5))
def test_output_equality_tracks_coefficient_equality(beta, k_b, dr):
    m = get_model("sir")
    case = StructuralCase("sir_I_only")
    beta_b = SIR["K"] * SIR["beta"] / k_b
    b = equivalent_sir_parameters(SIR, beta_b, k_b)
    if b["R0"] < 0:
        return
    assert indistinguishable(m, [scaled_state("I")], SIR, b, 60.0).indistinguishable
    c = dict(SIR, beta=beta, r=SIR["r"] * (1 + dr))
    ca, cc = structural_coefficients(case, SIR), structural_coefficients(case, c)
    if np.max(np.abs(ca - cc) / np.abs(ca)) > 1e-2:
        assert not indistinguishable(m, [scaled_state("I")], SIR, c, 60.0).indistinguishable


def test_chi2_threshold_matches_bisection_oracle():
    # chi-square(1) CDF is erf(sqrt(x/2))
    lo, hi = 0.0, 20.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if special.erf(math.sqrt(mid / 2)) < 0.95 else (lo, mid)
    assert chi2_threshold(0.95) == pytest.approx(lo, abs=1e-9)
    assert chi2_threshold(0.95) == pytest.approx(3.8415, abs=1e-3)
    with pytest.raises(ValueError):
        chi2_threshold(1.0)


def _curve(grid, values):
    return ProfileCurve("p", np.asarray(grid, float), np.asarray(values, float),
                        float(np.min(values)), float(np.min(values)) + chi2_threshold())


def test_pl_interval_flat_curve():
    g = np.linspace(0, 1, 25)
    iv = pl_interval(_curve(g, np.full(25, 10.0)))
    assert (iv.lower, iv.upper, iv.identifiable) == (0.0, 1.0, False)


def test_pl_interval_quadratic_half_width():
    v, x0 = 0.04, 0.3
    g = np.linspace(-1, 1.6, 261)
    iv = pl_interval(_curve(g, 5.0 + (g - x0) ** 2 / v))
    half = math.sqrt(v * chi2_threshold())
    step = g[1] - g[0]
    assert iv.identifiable
    assert iv.lower == pytest.approx(x0 - half, abs=step)
    assert iv.upper == pytest.approx(x0 + half, abs=step)


def test_pl_interval_one_sided_not_identifiable():
    g = np.linspace(0, 1, 25)
    iv = pl_interval(_curve(g, 20 * g))
    assert not iv.identifiable and iv.lower == 0.0 and iv.upper < 1.0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 50), min_size=5, max_size=30))
def test_pl_interval_monotone_in_alpha(vals):
    c = _curve(np.arange(len(vals), dtype=float), vals)
    a, b = pl_interval(c, 0.95), pl_interval(c, 0.99)
    assert b.lower <= a.lower + 1e-12 and b.upper >= a.upper - 1e-12


def test_correlation_matrix():
    assert np.array_equal(correlation_matrix(np.diag([2.0, 5.0])), np.eye(2))
    c = correlation_matrix(np.array([[0.7995, 0.1064], [0.1064, 0.2609]]))
    assert c[0, 1] == pytest.approx(0.233, abs=1e-3)
    assert np.all(np.diag(c) == 1.0)
    with pytest.raises(ValueError):
        correlation_matrix(np.array([[0.0, 0.0], [0.0, 1.0]]))


def test_fim_diagnostics_rank():
    d = fim_diagnostics(np.eye(3))
    assert d.rank == 3 and d.flagged_directions.shape == (0, 3)
    v = np.array([1.0, 2.0, -1.0])
    d = fim_diagnostics(np.outer(v, v))
    assert d.rank == 1
    assert np.allclose(d.flagged_directions @ v, 0.0, atol=1e-12)


def _i_only_spec(sigma=0.025, seed=1, free=("beta", "K")):
    m = get_model("sir")
    vals = {k: SIR[k] for k in ("beta", "r", "S0", "I0", "R0", "K")}
    ops = (scaled_state("I", 3.0),)
    d = synthesize(m, m.parameter_vector(vals), ops, np.arange(1, 41.0), [sigma], seed)
    bounds = {"beta": (0.05, 1.0), "r": (0.01, 1.0), "K": (1.0, 10.0)}
    return LikelihoodSpec(d, m, ops, vals, free, {k: bounds[k] for k in free},
                          KnownSigma((sigma,)))


def test_weak_direction_follows_k_beta_curve():
    spec = _i_only_spec()
    fit = mle(spec, restarts=5)
    H = fisher_jacobian(spec, fit.x, [0.025])
    w, v = np.linalg.eigh(H)
    beta, K = fit.x
    tangent = np.array([beta, -K]) / math.hypot(beta, K)
    assert abs(v[:, 0] @ tangent) > 0.95


def test_profile_stays_above_mle_and_touches_it():
    spec = _i_only_spec(free=("beta", "r"))
    fit = mle(spec, restarts=5)
    curve = profile_likelihood(spec, fit, "r", n_points=9, restarts=2)
    assert np.all(np.diff(curve.grid) > 0)
    assert np.all(curve.values >= curve.nll_at_mle - 1e-6)
    k = int(np.argmin(np.abs(curve.grid - fit.x[1])))
    assert curve.values[k] == pytest.approx(curve.nll_at_mle, abs=1e-6)
    assert curve.threshold == pytest.approx(curve.nll_at_mle + chi2_threshold())
    assert pl_interval(curve).identifiable


def test_bootstrap_noise_free_recovers_truth():
    m = get_model("sir")
    vals = {k: SIR[k] for k in ("beta", "r", "S0", "I0", "R0", "K")}
    table = bootstrap_are(m, [scaled_state("I"), scaled_state("R")], vals, np.arange(1, 41.0),
                          [0.0], ("beta", "r"), {"beta": (0.05, 1.0), "r": (0.01, 1.0)},
                          M=10, restarts=2)
    assert np.all(table.are <= 1e-3)
    assert len(table.rows()) == 2
    with pytest.raises(ValueError):
        bootstrap_are(m, [scaled_state("I")], vals, [1.0, 2.0], [0.0], ("beta",),
                      {"beta": (0.05, 1.0)}, M=5)
