"""Structural and practical identifiability diagnostics.

Structural side: a fixed catalogue of input-output coefficient maps (SIR
observed through ``I``, SIR through ``I`` and ``R``, SEIRD through ``I``, ``R``
and ``D``), their inversion, and a numerical indistinguishability test.
Practical side: profile likelihood with chi-square thresholds, bootstrap
average relative error, correlation matrix and Fisher-information rank.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import chi2

from identikit.fit import (FitError, KnownSigma, LikelihoodSpec, ProfiledCommon, FitResult,
                           mle, minimize_restarts, nll, _objective)
from identikit.models import ModelSpec, integrate
from identikit.observe import ObservationOperator, observe, synthesize
from identikit.parallel import map_ordered

CONSISTENCY_TOL = 1e-8
RANK_TOL = 1e-10
REOPT_TOL = 1e-6
DEFAULT_ALPHA = 0.95
DEFAULT_M = 100


# -- structural catalogue ------------------------------------------------------

_LABELS = {
    "sir_I_only": ("K*beta/N_pop", "K*r*beta/N_pop"),
    "sir_I_and_R": ("beta", "K*beta/N_pop", "r"),
    "seird_IRD": ("i+d+r", "i*(d+r-beta)", "K*beta/N_pop", "K*beta*(i+d+r)/N_pop", "r", "d"),
}
_REQUIRED = {
    "sir_I_only": ("beta", "r", "K", "N_pop"),
    "sir_I_and_R": ("beta", "r", "K", "N_pop"),
    "seird_IRD": ("beta", "i", "r", "d", "K", "N_pop"),
}


class InconsistentCoefficientsError(ValueError):
    pass


@dataclass(frozen=True)
class StructuralCase:
    id: str
    knowns: frozenset[str] = frozenset({"K", "N_pop"})

    def __post_init__(self):
        if self.id not in _LABELS:
            raise ValueError(f"unknown structural case {self.id!r}; choose from {sorted(_LABELS)}")
        object.__setattr__(self, "knowns", frozenset(self.knowns))
        bad = self.knowns - {"K", "N_pop"}
        if bad:
            raise ValueError(f"knowns may only contain K and N_pop, got {sorted(bad)}")

    @property
    def coefficient_labels(self) -> tuple[str, ...]:
        return _LABELS[self.id]


@dataclass
class StructuralVerdict:
    kind: str  # "unique" or "combinations"
    values: dict[str, float]
    expressions: list[str]

    def to_dict(self) -> dict:
        return {"verdict": self.kind, "values": self.values, "identified": self.expressions}


def structural_coefficients(case: StructuralCase, theta: Mapping[str, float]) -> np.ndarray:
    """Coefficients of the monic input-output equations for ``case``."""
    missing = [k for k in _REQUIRED[case.id] if k not in theta]
    if missing:
        raise ValueError(f"missing parameters {missing}")
    p = {k: float(theta[k]) for k in _REQUIRED[case.id]}
    if any(v <= 0 for v in p.values()):
        raise ValueError("structural coefficients need positive parameters")
    b, r, K, N = p["beta"], p["r"], p["K"], p["N_pop"]
    if case.id == "sir_I_only":
        return np.array([K * b / N, K * r * b / N])
    if case.id == "sir_I_and_R":
        return np.array([b, b * K / N, r])
    i, d = p["i"], p["d"]
    c1 = i + d + r
    c3 = b * K / N
    return np.array([c1, i * (d + r - b), c3, c3 * c1, r, d])


def _nonzero(x: float, what: str) -> float:
    if x == 0 or not np.isfinite(x):
        raise ZeroDivisionError(f"coefficient {what} is zero")
    return x


def invert_coefficients(case: StructuralCase, coeffs: Sequence[float],
                        knowns: Mapping[str, float]) -> StructuralVerdict:
    """Recover parameters from coefficients; report combinations when not unique.

    ``knowns`` supplies values for the entries of ``case.knowns``.
    """
    c = np.asarray(coeffs, dtype=float)
    if c.size != len(case.coefficient_labels):
        raise ValueError(f"{case.id} needs {len(case.coefficient_labels)} coefficients")
    has_k = "K" in case.knowns
    has_n = "N_pop" in case.knowns
    K = float(knowns["K"]) if has_k else None
    N = float(knowns["N_pop"]) if has_n else None

    if case.id == "sir_I_only":
        r = c[1] / _nonzero(c[0], "C1")
        if has_k and has_n:
            return StructuralVerdict("unique", {"beta": c[0] * N / _nonzero(K, "K"), "r": r},
                                     ["beta", "r"])
        if has_n:
            return StructuralVerdict("combinations", {"r": r, "K*beta": c[0] * N},
                                     ["r", "K*beta"])
        if has_k:
            return StructuralVerdict("combinations", {"r": r, "beta/N_pop": c[0] / K},
                                     ["r", "beta/N_pop"])
        return StructuralVerdict("combinations", {"r": r, "K*beta/N_pop": c[0]},
                                 ["r", "K*beta/N_pop"])

    if case.id == "sir_I_and_R":
        beta, kb, r = c
        _nonzero(beta, "beta")
        if has_n:
            return StructuralVerdict("unique", {"beta": beta, "K": kb * N / beta, "r": r},
                                     ["beta", "K", "r"])
        if has_k:
            return StructuralVerdict("unique", {"beta": beta, "N_pop": beta * K / kb, "r": r},
                                     ["beta", "N_pop", "r"])
        return StructuralVerdict("combinations", {"beta": beta, "r": r, "K/N_pop": kb / beta},
                                 ["beta", "r", "K/N_pop"])

    c1, c2, c3, c4, r, d = c
    scale = max(abs(c4), abs(c3 * c1), 1e-300)
    if abs(c4 - c3 * c1) / scale > CONSISTENCY_TOL:
        raise InconsistentCoefficientsError(
            "redundant coefficient disagrees with the product of its factors")
    i = c1 - d - r
    beta = d + r - c2 / _nonzero(i, "i")
    _nonzero(beta, "beta")
    if has_n:
        kb = c3 * N
        return StructuralVerdict("unique", {"beta": beta, "i": i, "r": r, "d": d, "K": kb / beta},
                                 ["beta", "i", "r", "d", "K"])
    return StructuralVerdict("combinations",
                             {"beta": beta, "i": i, "r": r, "d": d, "K/N_pop": c3 / beta},
                             ["beta", "i", "r", "d", "K/N_pop"])


def equivalent_sir_parameters(values: Mapping[str, float], beta_b: float,
                              K_b: float) -> dict[str, float]:
    """SIR parameters with new ``(beta, K)`` whose scaled ``I`` output is unchanged.

    Keeps ``K beta`` and ``beta S`` invariant and ``I / K`` at time zero, which
    is the family of models that ``I`` data cannot tell apart.
    """
    a = dict(values)
    if not math.isclose(a["K"] * a["beta"], K_b * beta_b, rel_tol=1e-12):
        raise ValueError("K*beta must be preserved")
    n = a.get("N_pop", 1.0)
    s0 = a["S0"] * a["beta"] / beta_b
    i0 = a["I0"] * K_b / a["K"]
    out = dict(a, beta=beta_b, K=K_b, S0=s0, I0=i0, R0=n - s0 - i0)
    return out


@dataclass
class Distinguishability:
    indistinguishable: bool
    max_gap: float


def indistinguishable(model: ModelSpec, ops: Sequence[ObservationOperator],
                      theta_a: Mapping[str, float], theta_b: Mapping[str, float],
                      horizon: float, tol: float | None = None, rtol: float = 1e-10,
                      atol: float = 1e-12, n_grid: int = 200) -> Distinguishability:
    """Compare observed outputs of two parameter sets on a dense grid.

    The trajectories are integrated more tightly than the default so that the
    default tolerance ``10 x 1e-6`` reflects the model, not the integrator.
    """
    tol = 10 * 1e-6 if tol is None else tol
    grid = np.linspace(model.t0, horizon, n_grid)
    outs = []
    for vals in (theta_a, theta_b):
        theta = model.parameter_vector(vals)
        traj = integrate(model, theta, grid, rtol, atol)
        o = [op.with_K(vals["K"]) if "K" in vals else op for op in ops]
        outs.append(np.column_stack([np.asarray(observe(traj, x, theta, model)) for x in o]))
    gap = float(np.max(np.abs(outs[0] - outs[1])))
    return Distinguishability(gap < tol, gap)


# -- profile likelihood ----------------------------------------------------------

def chi2_threshold(alpha: float = DEFAULT_ALPHA) -> float:
    """``alpha`` quantile of the chi-square distribution with one degree of freedom."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    return float(chi2.ppf(alpha, 1))


@dataclass
class ProfileCurve:
    param: str
    grid: np.ndarray
    values: np.ndarray
    nll_at_mle: float
    threshold: float
    alpha: float = DEFAULT_ALPHA
    reopt_log: list[dict] = field(default_factory=list)
    flagged: list[int] = field(default_factory=list)

    def rows(self) -> list[tuple]:
        return [(self.param, float(g), float(v), self.threshold)
                for g, v in zip(self.grid, self.values)]


def profile_grid(fit: FitResult, param: str, bounds: tuple[float, float],
                 n_points: int = 25, full_range: bool = False) -> np.ndarray:
    lo, hi = bounds
    if not full_range:
        j = fit.names.index(param)
        mu = fit.x[j]
        sd = math.sqrt(max(fit.covariance[j, j], 0.0))
        lo, hi = max(lo, mu - 4 * sd), min(hi, mu + 4 * sd)
        if not hi > lo:
            lo, hi = bounds
    return np.linspace(lo, hi, n_points)


def profile_likelihood(spec: LikelihoodSpec, fit: FitResult, param: str,
                       grid: Sequence[float] | None = None, n_points: int = 25,
                       full_range: bool = False, restarts: int = 3, seed: int = 0,
                       alpha: float = DEFAULT_ALPHA, options: Mapping | None = None
                       ) -> ProfileCurve:
    """Profile of the full NLL in ``param``, noise level held at the fitted ``sigma_hat``.

    Each grid point reoptimizes the remaining free parameters from fresh random
    starts plus the neighbour's optimum, sweeping left-to-right and then
    right-to-left; the pointwise minimum of the two sweeps is kept.
    """
    if param not in spec.free:
        raise ValueError(f"{param!r} is not a free parameter")
    g = profile_grid(fit, param, spec.bounds[param], n_points, full_range) if grid is None \
        else np.asarray(grid, dtype=float)
    lo, hi = spec.bounds[param]
    if np.any(g < lo) or np.any(g > hi) or np.any(np.diff(g) <= 0):
        raise ValueError("profile grid must be increasing and inside the bounds")
    sigmas = np.array(list(fit.sigma_hat.values()))
    sig_spec = spec.replace(sigma_mode=KnownSigma(tuple(map(float, sigmas))))
    others = tuple(n for n in spec.free if n != param)
    j = spec.free.index(param)
    mle_rest = np.delete(fit.x, j)
    nll_at_mle = nll(fit.x, sig_spec, sigmas)

    def sub(v):
        vals = dict(spec.values)
        vals.update(zip(spec.free, fit.x))
        vals[param] = float(v)
        return sig_spec.replace(values=vals, free=others,
                                bounds={k: spec.bounds[k] for k in others})

    if not others:
        vals = np.array([nll([], sub(v), sigmas) for v in g])
        return ProfileCurve(param, g, vals, nll_at_mle, nll_at_mle + chi2_threshold(alpha),
                            alpha, [{"grid": float(v), "converged": True} for v in g], [])

    def solve(k, warm):
        s = sub(g[k])
        f = _objective(s, 1.0 / sigmas ** 2)
        starts = list(warm) + [np.random.default_rng([seed, k, r]).uniform(s.lower, s.upper)
                               for r in range(restarts)]
        try:
            best, log = minimize_restarts(f, s.lower, s.upper, starts, options)
        except FitError:
            return math.inf, None, False
        x = log[best]["end"]
        return nll(x, s, sigmas), x, bool(log[best]["converged"])

    n = g.size
    values = np.full(n, np.inf)
    xs: list = [None] * n
    conv = [False] * n
    near = int(np.argmin(np.abs(g - fit.x[j])))
    for order in (range(n), range(n - 1, -1, -1)):
        prev = None
        for k in order:
            warm = [w for w in (prev, mle_rest if k == near else None, xs[k]) if w is not None]
            v, x, ok = solve(k, warm)
            if v < values[k]:
                values[k], xs[k], conv[k] = v, x, ok
            prev = xs[k] if xs[k] is not None else prev
    log = [{"grid": float(v), "converged": c, "others": (x.tolist() if x is not None else None)}
           for v, c, x in zip(g, conv, xs)]
    flagged = [k for k in range(n) if not conv[k] or not np.isfinite(values[k])]
    return ProfileCurve(param, g, values, nll_at_mle, nll_at_mle + chi2_threshold(alpha),
                        alpha, log, flagged)


@dataclass
class ProfileInterval:
    lower: float
    upper: float
    identifiable: bool
    minimum_at: float


def pl_interval(curve: ProfileCurve, alpha: float | None = None) -> ProfileInterval:
    """Connected region around the profile minimum below ``min + chi2_1(alpha)``."""
    alpha = curve.alpha if alpha is None else alpha
    g, v = curve.grid, curve.values
    finite = np.isfinite(v)
    if not finite.any():
        return ProfileInterval(float(g[0]), float(g[-1]), False, math.nan)
    k = int(np.argmin(np.where(finite, v, np.inf)))
    thr = v[k] + chi2_threshold(alpha)

    def cross(a, b):
        if not np.isfinite(v[b]):
            return g[b]
        return g[a] + (thr - v[a]) * (g[b] - g[a]) / (v[b] - v[a])

    lo, left = g[0], False
    for a in range(k, 0, -1):
        if v[a - 1] > thr:
            lo, left = cross(a, a - 1), True
            break
    hi, right = g[-1], False
    for a in range(k, g.size - 1):
        if v[a + 1] > thr:
            hi, right = cross(a, a + 1), True
            break
    return ProfileInterval(float(lo), float(hi), left and right, float(g[k]))


# -- bootstrap --------------------------------------------------------------------

@dataclass
class AreTable:
    noise_levels: np.ndarray
    names: tuple[str, ...]
    are: np.ndarray  # (levels, params)
    M: int
    failures: np.ndarray

    def rows(self) -> list[tuple]:
        return [(float(s), name, float(self.are[a, b]))
                for a, s in enumerate(self.noise_levels) for b, name in enumerate(self.names)]


def bootstrap_are(model: ModelSpec, ops: Sequence[ObservationOperator],
                  theta_true: Mapping[str, float], times: Sequence[float],
                  noise_levels: Sequence[float], free: Sequence[str],
                  bounds: Mapping[str, tuple[float, float]], M: int = DEFAULT_M,
                  n_params_jointly: int | None = None, seed: int = 0, restarts: int = 5
                  ) -> AreTable:
    """Average relative error of re-fitted parameters over ``M`` synthetic datasets.

    ``n_params_jointly`` keeps only the first that many entries of ``free``
    free; the rest stay at truth.
    """
    if M < 10:
        raise ValueError("M must be >= 10")
    free = tuple(free)[: n_params_jointly or len(free)]
    truth = np.array([theta_true[k] for k in free], dtype=float)
    if np.any(truth == 0):
        raise ValueError("true values must be nonzero in every estimated coordinate")
    theta = model.parameter_vector(theta_true)
    base_ops = [op.with_K(theta_true["K"]) if "K" in theta_true else op for op in ops]
    levels = np.asarray(noise_levels, dtype=float)
    are = np.zeros((levels.size, len(free)))
    fails = np.zeros(levels.size, dtype=int)
    for a, s in enumerate(levels):
        def one(k, s=s, a=a):
            data = synthesize(model, theta, base_ops, times, [s] * len(ops),
                              seed=int(np.random.SeedSequence([seed, a, k]).generate_state(1)[0]))
            spec = LikelihoodSpec(data, model, tuple(ops), dict(theta_true), free,
                                  {k2: bounds[k2] for k2 in free}, ProfiledCommon())
            try:
                return mle(spec, restarts=restarts, seed=seed + k).x
            except FitError:
                return None

        ests = map_ordered(one, list(range(M)))
        ok = [e for e in ests if e is not None]
        fails[a] = M - len(ok)
        if fails[a] >= 0.2 * M:
            raise FitError(f"{fails[a]} of {M} bootstrap fits failed at noise level {s}")
        are[a] = np.mean(np.abs(np.array(ok) - truth) / np.abs(truth), axis=0)
    return AreTable(levels, free, are, M, fails)


# -- local diagnostics ------------------------------------------------------------

def correlation_matrix(sigma_g: np.ndarray) -> np.ndarray:
    s = np.asarray(sigma_g, dtype=float)
    d = np.diag(s)
    if np.any(d <= 0):
        raise ValueError("covariance diagonal must be positive")
    sd = np.sqrt(d)
    c = s / np.outer(sd, sd)
    np.fill_diagonal(c, 1.0)
    return c


@dataclass
class FimDiagnostics:
    eigenvalues: np.ndarray
    rank: int
    flagged_directions: np.ndarray  # rows are eigenvectors


def fim_diagnostics(H: np.ndarray) -> FimDiagnostics:
    H = np.asarray(H, dtype=float)
    w, v = np.linalg.eigh(0.5 * (H + H.T))
    top = float(np.max(np.abs(w))) if w.size else 0.0
    keep = w > RANK_TOL * top
    return FimDiagnostics(w, int(keep.sum()), v[:, ~keep].T)
