"""Likelihood, maximum-likelihood / MAP estimation and Fisher-Gaussian posteriors.

The negative log-likelihood is ``-2 log L``::

    NLL = sum_s [ N_s log(2 pi sigma_s^2) + SS_s / sigma_s^2 ]  (+ Gaussian prior penalty)

where ``SS_s`` is the sum of squared misfits of series ``s``.  The Fisher
information reported in :class:`FitResult` is the Hessian of ``-log L``,
i.e. half the Hessian of ``NLL``, so that its inverse is the usual asymptotic
covariance ``sigma^2 (J^T J)^{-1}``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping, Sequence

import numpy as np

from identikit.models import (DEFAULT_ATOL, DEFAULT_RTOL, IntegrationError, ModelSpec,
                              ParameterVector, integrate)
from identikit.observe import Dataset, ObservationOperator, observe
from identikit.optim import BoxTransform, nelder_mead
from identikit.parallel import map_ordered
from identikit.sample import GaussianPosterior

EIG_FLOOR = 1e-10
HESSIAN_REL_STEP = 1e-4
JACOBIAN_REL_STEP = 1e-5
DEFAULT_RESTARTS = 20


class FitError(RuntimeError):
    pass


# -- likelihood specification -------------------------------------------------

@dataclass(frozen=True)
class KnownSigma:
    sigmas: tuple[float, ...]

    def __post_init__(self):
        if any(s <= 0 for s in self.sigmas):
            raise ValueError("known sigmas must be > 0")


@dataclass(frozen=True)
class ProfiledCommon:
    """One unknown sigma shared by all series, profiled out at the optimum."""


@dataclass(frozen=True)
class ProfiledTwo:
    """Separate unknown sigmas for exactly two series, resolved by a lambda sweep."""

    lambda_grid: tuple[float, ...] = tuple(float(v) for v in range(1, 91))

    def __post_init__(self):
        g = np.asarray(self.lambda_grid, dtype=float)
        if g.size == 0 or np.any(g <= 0) or np.any(np.diff(g) <= 0):
            raise ValueError("lambda grid must be positive and increasing")


@dataclass(frozen=True)
class UniformPrior:
    pass


@dataclass(frozen=True)
class GaussianPrior:
    means: Mapping[str, float]
    sds: Mapping[str, float]

    def __post_init__(self):
        if any(s <= 0 for s in self.sds.values()):
            raise ValueError("prior standard deviations must be > 0")


@dataclass(frozen=True)
class LikelihoodSpec:
    """What is fitted to what.

    ``values`` assigns every model coefficient, every initial condition
    (``S0``, ``I0``, ...) and optionally the under-reporting factor ``K``;
    when ``K`` is present it overrides the factor of every operator.
    ``free`` lists the entries estimated from data, each with ``bounds``.
    """

    data: Dataset
    model: ModelSpec
    ops: tuple[ObservationOperator, ...]
    values: Mapping[str, float]
    free: tuple[str, ...]
    bounds: Mapping[str, tuple[float, float]]
    sigma_mode: KnownSigma | ProfiledCommon | ProfiledTwo = ProfiledCommon()
    prior: UniformPrior | GaussianPrior = UniformPrior()
    rtol: float = DEFAULT_RTOL
    atol: float = DEFAULT_ATOL

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        object.__setattr__(self, "free", tuple(self.free))
        object.__setattr__(self, "values", dict(self.values))
        object.__setattr__(self, "bounds", {k: tuple(map(float, v))
                                            for k, v in self.bounds.items()})
        if len(self.ops) != len(self.data.series):
            raise ValueError("need one observation operator per data series")
        for name in self.free:
            if name not in self.bounds:
                raise ValueError(f"free parameter {name!r} has no bounds")
            lo, hi = self.bounds[name]
            if not lo < hi:
                raise ValueError(f"bounds for {name!r} must satisfy lo < hi")
        missing = [n for n in self.model.theta_names if n not in self.values]
        if missing:
            raise ValueError(f"no value given for {missing}")
        if isinstance(self.sigma_mode, KnownSigma) and \
                len(self.sigma_mode.sigmas) != len(self.ops):
            raise ValueError("need one known sigma per series")
        if isinstance(self.sigma_mode, ProfiledTwo) and len(self.ops) != 2:
            raise ValueError("profiled_two needs exactly two series")
        for i, op in enumerate(self.ops):
            if not op.is_series:
                raise ValueError(f"operator {i} ({op.kind}) is not a series observable")

    def replace(self, **changes) -> "LikelihoodSpec":
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw.update(changes)
        return LikelihoodSpec(**kw)

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.bounds[n][0] for n in self.free])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.bounds[n][1] for n in self.free])

    @cached_property
    def _grid(self) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
        grid = self.data.all_times()
        idx = [np.searchsorted(grid, t) for t, _ in self.data.series.values()]
        obs = [v for _, v in self.data.series.values()]
        return grid, idx, obs

    @property
    def n_per_series(self) -> np.ndarray:
        return np.array([len(t) for t, _ in self.data.series.values()])

    def assignment(self, x: Sequence[float]) -> dict[str, float]:
        vals = dict(self.values)
        vals.update(zip(self.free, map(float, x)))
        return vals

    def theta(self, x: Sequence[float]) -> ParameterVector:
        return self.model.parameter_vector(self.assignment(x))

    def ops_for(self, vals: Mapping[str, float]) -> tuple[ObservationOperator, ...]:
        if "K" in vals:
            return tuple(op.with_K(vals["K"]) for op in self.ops)
        return self.ops

    def predictions(self, x: Sequence[float], rtol: float | None = None,
                    atol: float | None = None) -> list[np.ndarray]:
        """Model predictions at each series' data times."""
        grid, idx, _ = self._grid
        vals = self.assignment(x)
        theta = self.model.parameter_vector(vals)
        traj = integrate(self.model, theta, grid, rtol or self.rtol, atol or self.atol)
        return [np.asarray(observe(traj, op, theta, self.model))[i]
                for op, i in zip(self.ops_for(vals), idx)]

    def residuals(self, x: Sequence[float]) -> list[np.ndarray]:
        """Per-series misfits (data minus prediction)."""
        if self.data.n_points == 0:
            return [np.empty(0) for _ in self.ops]
        _, _, obs = self._grid
        return [o - p for o, p in zip(obs, self.predictions(x))]

    def series_ss(self, x: Sequence[float]) -> np.ndarray:
        """Sum of squared misfits per series; ``inf`` when integration fails."""
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = self.residuals(x)
        except (IntegrationError, ValueError, FloatingPointError):
            return np.full(len(self.ops), np.inf)
        ss = np.array([float(r @ r) for r in res])
        return np.where(np.isfinite(ss), ss, np.inf)

    def prior_penalty(self, x: Sequence[float]) -> float:
        if not isinstance(self.prior, GaussianPrior):
            return 0.0
        vals = self.assignment(x)
        return float(sum((vals[k] - m) ** 2 / self.prior.sds[k] ** 2
                         for k, m in self.prior.means.items()))

    def known_sigmas(self) -> np.ndarray | None:
        if isinstance(self.sigma_mode, KnownSigma):
            return np.asarray(self.sigma_mode.sigmas, dtype=float)
        return None


def nll(theta: Sequence[float], spec: LikelihoodSpec,
        sigmas: Sequence[float] | None = None) -> float:
    """Full ``-2 log L`` (plus Gaussian prior penalty) at free-parameter values ``theta``.

    Profiled sigma modes need ``sigmas`` passed explicitly; nothing is
    substituted here.  Returns ``inf`` when the model cannot be integrated.
    """
    if sigmas is None:
        sigmas = spec.known_sigmas()
        if sigmas is None:
            raise ValueError("sigma is profiled in this spec; pass sigmas explicitly")
    sig = np.asarray(sigmas, dtype=float)
    ss = spec.series_ss(theta)
    if not np.all(np.isfinite(ss)):
        return math.inf
    n = spec.n_per_series
    return float(np.sum(n * np.log(2 * np.pi * sig ** 2) + ss / sig ** 2)
                 + spec.prior_penalty(theta))


# -- numerical derivatives ---------------------------------------------------

def _steps(x: np.ndarray, rel_step: float) -> np.ndarray:
    return np.maximum(rel_step * np.abs(x), rel_step * 1e-2)


def fd_hessian(f: Callable[[np.ndarray], float], x: Sequence[float],
               rel_step: float = HESSIAN_REL_STEP) -> np.ndarray:
    """Centered second differences with ``h_i = max(rel_step |x_i|, rel_step 1e-2)``."""
    x = np.asarray(x, dtype=float)
    n = x.size
    h = _steps(x, rel_step)
    f0 = f(x)
    cache: dict[tuple, float] = {}

    def at(*moves):
        key = tuple(sorted(moves))
        if key not in cache:
            xx = x.copy()
            for i, s in moves:
                xx[i] += s * h[i]
            cache[key] = f(xx)
        return cache[key]

    H = np.empty((n, n))
    for i in range(n):
        H[i, i] = (at((i, 1)) - 2 * f0 + at((i, -1))) / h[i] ** 2
        for j in range(i + 1, n):
            H[i, j] = (at((i, 1), (j, 1)) - at((i, 1), (j, -1)) - at((i, -1), (j, 1))
                       + at((i, -1), (j, -1))) / (4 * h[i] * h[j])
            H[j, i] = H[i, j]
    if not np.all(np.isfinite(H)) or not np.isfinite(f0):
        raise FitError("non-finite objective inside the finite-difference stencil")
    return 0.5 * (H + H.T)


def fd_jacobian(g: Callable[[np.ndarray], np.ndarray], x: Sequence[float],
                rel_step: float = JACOBIAN_REL_STEP) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    h = _steps(x, rel_step)
    cols = []
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h[i]
        xm[i] -= h[i]
        cols.append((np.asarray(g(xp)) - np.asarray(g(xm))) / (2 * h[i]))
    J = np.column_stack(cols)
    if not np.all(np.isfinite(J)):
        raise FitError("non-finite model output inside the finite-difference stencil")
    return J


def fisher_jacobian(spec: LikelihoodSpec, theta_mle: Sequence[float],
                    sigma_hat: Sequence[float],
                    rel_step: float = JACOBIAN_REL_STEP) -> np.ndarray:
    """Gauss-Newton Fisher information ``sum_s J_s^T J_s / sigma_s^2``.

    ``J_s`` differentiates the observed predictions (the ``1/K`` factor
    included) of series ``s``; a Gaussian prior adds ``1/s_i^2`` on its
    diagonal entries.
    """
    sig = np.asarray(sigma_hat, dtype=float)
    weights = np.concatenate([np.full(n, 1.0 / s) for n, s in zip(spec.n_per_series, sig)])

    def scaled(x):
        return np.concatenate(spec.predictions(x)) * weights

    J = fd_jacobian(scaled, theta_mle, rel_step)
    return J.T @ J + _prior_curvature(spec)


def _prior_curvature(spec: LikelihoodSpec) -> np.ndarray:
    out = np.zeros((len(spec.free), len(spec.free)))
    if isinstance(spec.prior, GaussianPrior):
        for i, name in enumerate(spec.free):
            if name in spec.prior.sds:
                out[i, i] = 1.0 / spec.prior.sds[name] ** 2
    return out


def regularized_inverse(H: np.ndarray) -> tuple[np.ndarray, bool, np.ndarray]:
    """Inverse with eigenvalues floored at ``EIG_FLOOR * max eigenvalue``.

    Returns ``(covariance, ill_conditioned, offending_eigenvectors)``.
    """
    H = 0.5 * (np.asarray(H, dtype=float) + np.asarray(H, dtype=float).T)
    w, v = np.linalg.eigh(H)
    top = max(float(w.max()), 0.0)
    floor = EIG_FLOOR * top if top > 0 else EIG_FLOOR
    low = w < floor
    w = np.where(low, floor, w)
    cov = (v / w) @ v.T
    return 0.5 * (cov + cov.T), bool(low.any()), v[:, low].T


# -- fitting -------------------------------------------------------------------

@dataclass
class FitResult:
    names: tuple[str, ...]
    theta_mle: ParameterVector
    nll_value: float
    sigma_hat: dict[str, float]
    hessian: np.ndarray
    covariance: np.ndarray
    restart_log: list[dict] = field(default_factory=list)
    method_tags: dict[str, str] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    null_directions: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    objective_value: float = math.nan

    @property
    def x(self) -> np.ndarray:
        return np.array(self.theta_mle.values)

    @property
    def ill_conditioned(self) -> bool:
        return any(f.startswith("ill-conditioned") for f in self.flags)

    def to_dict(self) -> dict:
        return {
            "theta_mle": self.theta_mle.as_dict(),
            "sigma_hat": self.sigma_hat,
            "nll": self.nll_value,
            "hessian": self.hessian.tolist(),
            "covariance": self.covariance.tolist(),
            "flags": list(self.flags),
            "null_directions": self.null_directions.tolist(),
            "method_tags": dict(self.method_tags),
            "restart_log": [{k: (v.tolist() if isinstance(v, np.ndarray) else v)
                             for k, v in r.items()} for r in self.restart_log],
        }


def _objective(spec: LikelihoodSpec, weights: np.ndarray | None) -> Callable[[np.ndarray], float]:
    """Least-squares form: ``sum_s w_s SS_s`` plus the prior penalty."""

    def f(x):
        ss = spec.series_ss(x)
        if not np.all(np.isfinite(ss)):
            return math.inf
        total = float(ss.sum()) if weights is None else float(ss @ weights)
        return total + spec.prior_penalty(x)

    return f


def _weights(spec: LikelihoodSpec, sigmas: np.ndarray | None) -> np.ndarray | None:
    if sigmas is not None:
        return 1.0 / np.asarray(sigmas) ** 2
    known = spec.known_sigmas()
    return None if known is None else 1.0 / known ** 2


def _random_starts(spec: LikelihoodSpec, restarts: int, seed: int) -> list[np.ndarray]:
    lo, hi = spec.lower, spec.upper
    return [np.random.default_rng([seed, r]).uniform(lo, hi) for r in range(restarts)]


def minimize_restarts(f: Callable[[np.ndarray], float], lower: np.ndarray, upper: np.ndarray,
                      starts: Sequence[np.ndarray], options: Mapping | None = None
                      ) -> tuple[int, list[dict]]:
    """Nelder-Mead from each start in logit coordinates.

    Returns the index of the best run (lowest final value, earliest on ties)
    and the per-run log.
    """
    opts = {"step": 0.5, "ftol": 1e-10, "xtol": 1e-8, "max_iter": 2000}
    opts.update(options or {})
    box = BoxTransform(lower, upper)

    def g(u):
        return f(box.to_box(u))

    def run(start):
        start = np.clip(start, lower, upper)
        res = nelder_mead(g, box.to_free(start), **opts)
        return {"start": np.asarray(start, dtype=float), "end": box.to_box(res.x),
                "objective": res.fun, "converged": res.converged,
                "iterations": res.iterations}

    log = map_ordered(run, list(starts))
    finals = np.array([r["objective"] for r in log])
    if not np.any(np.isfinite(finals)):
        raise FitError("every restart ended at a non-finite objective")
    best = int(np.argmin(np.where(np.isfinite(finals), finals, np.inf)))
    return best, log


def sigma_mle(theta_mle: Sequence[float], spec: LikelihoodSpec) -> dict[str, float]:
    """Plug-in noise level: pooled ``sqrt(SS_total / N_total)`` for a common sigma."""
    names = spec.data.names
    known = spec.known_sigmas()
    if known is not None:
        return dict(zip(names, map(float, known)))
    n_total = spec.data.n_points
    if n_total == 0:
        raise FitError("sigma cannot be estimated without data points")
    ss = spec.series_ss(theta_mle)
    if isinstance(spec.sigma_mode, ProfiledTwo):
        return {k: math.sqrt(s / n) for k, s, n in zip(names, ss, spec.n_per_series)}
    s = math.sqrt(float(ss.sum()) / n_total)
    return {k: s for k in names}


def _finish(spec: LikelihoodSpec, x: np.ndarray, sigmas: np.ndarray, log: list[dict],
            rel_step: float, tags: dict[str, str], hessian_route: str = "fd") -> FitResult:
    lo, hi = spec.lower, spec.upper
    theta = ParameterVector(spec.free, np.clip(x, lo, hi), np.column_stack([lo, hi]))

    if hessian_route == "fd":
        def half_nll(z):
            return 0.5 * nll(z, spec, sigmas)

        H = fd_hessian(half_nll, theta.values, rel_step)
        tags = {**tags, "hessian": "finite-difference"}
    else:
        H = fisher_jacobian(spec, theta.values, sigmas)
        tags = {**tags, "hessian": "jacobian-gram"}
    cov, ill, null = regularized_inverse(H)
    flags = []
    if ill:
        flags.append("ill-conditioned: possible non-identifiability")
    if not any(r.get("converged", True) for r in log):
        flags.append("no restart met the convergence test")
    return FitResult(spec.free, theta, nll(theta.values, spec, sigmas),
                     dict(zip(spec.data.names, map(float, sigmas))), H, cov, log, tags,
                     flags, null)


def _log_with_nll(spec: LikelihoodSpec, log: list[dict], sigmas: np.ndarray | None) -> None:
    """Attach the full NLL of each restart end, using that run's own sigma plug-in."""
    for entry in log:
        if sigmas is not None:
            entry["nll"] = nll(entry["end"], spec, sigmas)
            continue
        ss = spec.series_ss(entry["end"])
        n = spec.n_per_series
        if not np.all(np.isfinite(ss)):
            entry["nll"] = math.inf
            continue
        s2 = max(float(ss.sum()) / n.sum(), 1e-300)
        entry["nll"] = float(np.sum(n * np.log(2 * np.pi * s2)) + ss.sum() / s2
                             + spec.prior_penalty(entry["end"]))


def mle(spec: LikelihoodSpec, restarts: int = DEFAULT_RESTARTS, seed: int = 0,
        options: Mapping | None = None, starts: Sequence[np.ndarray] | None = None,
        rel_step: float = HESSIAN_REL_STEP, hessian_route: str = "fd") -> FitResult:
    """Multi-restart Nelder-Mead estimate with a Fisher-Gaussian covariance.

    Uniform prior: minimizes the (weighted) sum of squares.  Gaussian prior:
    minimizes ``SS/sigma^2 + sum (theta_i - mean_i)^2 / s_i^2``; with an unknown
    sigma it is first estimated by an unpenalized fit and then held fixed.
    """
    if restarts < 1 and not starts:
        raise ValueError("restarts must be >= 1")
    if isinstance(spec.sigma_mode, ProfiledTwo):
        raise ValueError("use lambda_sweep for two profiled sigmas")
    sigmas = spec.known_sigmas()
    tags = {"optimizer": "nelder-mead", "prior": type(spec.prior).__name__}
    if isinstance(spec.prior, GaussianPrior) and sigmas is None and spec.data.n_points:
        pre = mle(spec.replace(prior=UniformPrior()), restarts, seed, options, starts,
                  rel_step)
        sigmas = np.array(list(pre.sigma_hat.values()))
        tags["sigma"] = "plug-in from unpenalized fit"
    elif isinstance(spec.prior, GaussianPrior) and sigmas is None:
        sigmas = np.ones(len(spec.ops))
    all_starts = list(starts or []) + _random_starts(spec, restarts, seed)
    f = _objective(spec, _weights(spec, sigmas))
    best, log = minimize_restarts(f, spec.lower, spec.upper, all_starts, options)
    x = log[best]["end"]
    if sigmas is None:
        sigmas = np.array(list(sigma_mle(x, spec).values()))
        tags["sigma"] = "profiled common"
    sigma_arr = np.asarray(sigmas, dtype=float)
    if np.any(sigma_arr <= 0):
        # exact fit to noise-free data: no finite likelihood curvature scale
        sigma_arr = np.where(sigma_arr > 0, sigma_arr, 1e-300)
    _log_with_nll(spec, log, None if spec.known_sigmas() is None and
                  not isinstance(spec.prior, GaussianPrior) else sigma_arr)
    if spec.data.n_points and np.all(sigma_arr > 1e-200):
        result = _finish(spec, x, sigma_arr, log, rel_step, tags, hessian_route)
    else:
        result = _degenerate_result(spec, x, sigma_arr, log, tags)
    result.objective_value = log[best]["objective"]
    result.nll_value = float(min(r["nll"] for r in log))
    if not any(r["converged"] for r in log):
        raise FitError("no restart converged")
    return result


def _degenerate_result(spec, x, sigmas, log, tags) -> FitResult:
    """Result for exact fits (zero residual) or prior-only problems."""
    lo, hi = spec.lower, spec.upper
    theta = ParameterVector(spec.free, np.clip(x, lo, hi), np.column_stack([lo, hi]))
    H = _prior_curvature(spec)
    cov, ill, null = regularized_inverse(H) if np.any(H) else \
        (np.zeros_like(H), False, np.empty((0, len(spec.free))))
    flags = ["degenerate: zero residual or no data; covariance not informative"]
    if ill:
        flags.append("ill-conditioned: possible non-identifiability")
    return FitResult(spec.free, theta, float(min(r["nll"] for r in log)),
                     dict(zip(spec.data.names, map(float, sigmas))), H, cov, log,
                     {**tags, "hessian": "none"}, flags, null)


def map_gaussian_prior(spec: LikelihoodSpec, restarts: int = DEFAULT_RESTARTS, seed: int = 0,
                       options: Mapping | None = None) -> FitResult:
    """Maximum a-posteriori estimate under independent Gaussian priors (Tikhonov form)."""
    if not isinstance(spec.prior, GaussianPrior):
        raise ValueError("map_gaussian_prior needs a GaussianPrior")
    return mle(spec, restarts, seed, options)


def gaussian_posterior(fit: FitResult,
                       bounds: Mapping[str, tuple[float, float]] | np.ndarray | None = None
                       ) -> GaussianPosterior:
    """Fisher-Gaussian approximation ``N(theta_mle, Sigma_G)``."""
    if bounds is None:
        b = np.array(fit.theta_mle.bounds)
    elif isinstance(bounds, Mapping):
        b = np.array([bounds[n] for n in fit.names], dtype=float)
    else:
        b = np.asarray(bounds, dtype=float)
    return GaussianPosterior(fit.x, fit.covariance, b, fit.names)


# -- two noise levels ------------------------------------------------------------

@dataclass
class LambdaSweepResult:
    lambda_min: float
    fit: FitResult
    sigma_I: float
    sigma_R: float
    table: list[dict]


def lambda_sweep(spec: LikelihoodSpec, lambda_grid: Sequence[float] | None = None,
                 restarts: int = 3, seed: int = 0, options: Mapping | None = None,
                 rel_step: float = HESSIAN_REL_STEP) -> LambdaSweepResult:
    """Weighted least squares ``SS_1 + lambda SS_2`` over a grid of variance ratios.

    For each ``lambda`` the plug-ins ``sigma_1^2 = T_min / N_total`` and
    ``sigma_2^2 = sigma_1^2 / lambda`` enter the full NLL; the ``lambda`` with
    the smallest NLL wins.  Each grid point is warm-started from the previous
    optimum in addition to ``restarts`` fresh starts.
    """
    if len(spec.ops) != 2:
        raise ValueError("lambda_sweep needs exactly two series")
    if lambda_grid is None:
        lambda_grid = spec.sigma_mode.lambda_grid if isinstance(spec.sigma_mode, ProfiledTwo) \
            else tuple(float(v) for v in range(1, 91))
    grid = np.asarray(lambda_grid, dtype=float)
    if grid.size == 0 or np.any(grid <= 0):
        raise ValueError("lambda grid must be non-empty and positive")
    n = spec.n_per_series
    n_total = float(n.sum())
    table = []
    prev = None
    for j, lam in enumerate(grid):
        f = _objective(spec, np.array([1.0, lam]))
        starts = ([prev] if prev is not None else []) + _random_starts(spec, restarts,
                                                                          seed + 7919 * j)
        try:
            best, log = minimize_restarts(f, spec.lower, spec.upper, starts, options)
        except FitError:
            table.append({"lambda": float(lam), "T_min": math.inf, "nll": math.inf})
            continue
        x = log[best]["end"]
        t_min = log[best]["objective"]
        s1 = math.sqrt(t_min / n_total)
        s2 = math.sqrt(s1 ** 2 / lam)
        value = nll(x, spec, [s1, s2])
        table.append({"lambda": float(lam), "T_min": t_min, "nll": value,
                      "theta": x, "sigma_1": s1, "sigma_2": s2, "log": log})
        prev = x
    finite = [r for r in table if np.isfinite(r["nll"])]
    if not finite:
        raise FitError("every lambda failed")
    best_row = min(finite, key=lambda r: r["nll"])
    sig = np.array([best_row["sigma_1"], best_row["sigma_2"]])
    fit = _finish(spec, best_row["theta"], sig, best_row["log"], rel_step,
                  {"optimizer": "nelder-mead", "sigma": "lambda sweep"})
    fit.objective_value = best_row["T_min"]
    _log_with_nll(spec, fit.restart_log, sig)
    slim = [{k: (v.tolist() if isinstance(v, np.ndarray) else v)
             for k, v in r.items() if k != "log"} for r in table]
    return LambdaSweepResult(float(best_row["lambda"]), fit, float(sig[0]), float(sig[1]), slim)


# -- goodness of fit ---------------------------------------------------------------

@dataclass
class GoodnessOfFit:
    rmse: float
    mae: float
    mape: float
    mape_skipped: int


def goodness_of_fit(data: Sequence[float], predictions: Sequence[float]) -> GoodnessOfFit:
    """RMSE (with the 1/N prefactor outside the root), MAE and signed MAPE.

    MAPE terms with a zero datum are skipped and counted.
    """
    d = np.asarray(data, dtype=float)
    p = np.asarray(predictions, dtype=float)
    if d.shape != p.shape:
        raise ValueError("data and predictions differ in length")
    n = d.size
    if n == 0:
        raise ValueError("no points")
    diff = p - d
    rmse = math.sqrt(float(diff @ diff)) / n
    mae = float(np.abs(diff).sum()) / n
    ok = d != 0
    mape = float(np.sum(diff[ok] / d[ok])) / n
    return GoodnessOfFit(rmse, mae, mape, int((~ok).sum()))
