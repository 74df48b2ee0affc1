"""Variance-based global sensitivity (principal and total Sobol indices).

Pick-freeze design with two independent matrices ``A``, ``B`` and the hybrids
``A_B^(i)`` (``A`` with column ``i`` taken from ``B``).  Principal indices use
the Saltelli (2010) estimator, total indices the Jansen estimator; standard
errors come from a bootstrap over design rows.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from identikit.models import DEFAULT_ATOL, DEFAULT_RTOL, ModelSpec, integrate
from identikit.observe import ObservationOperator, observe
from identikit.parallel import map_ordered
from identikit.sample import Distribution

N_BOOT = 200


@dataclass
class SobolResult:
    """Indices per parameter; arrays carry trailing output axes (time, observable)
    when computed over time."""

    names: tuple[str, ...]
    principal: np.ndarray
    principal_se: np.ndarray
    total: np.ndarray
    total_se: np.ndarray
    variance: np.ndarray
    n: int
    undefined: np.ndarray
    times: np.ndarray | None = None
    outputs: tuple[str, ...] = field(default=())

    def at(self, time_index: int, output: int | str = 0) -> "SobolResult":
        """Scalar slice of a time-resolved result."""
        j = self.outputs.index(output) if isinstance(output, str) else output
        sl = (slice(None), time_index, j)
        return SobolResult(self.names, self.principal[sl], self.principal_se[sl],
                           self.total[sl], self.total_se[sl],
                           self.variance[time_index, j], self.n,
                           self.undefined[time_index, j])


def pick_freeze_design(priors: Sequence[Distribution], n: int, seed: int):
    """Return ``A``, ``B`` and the stacked hybrids ``AB`` with shape (k, n, k)."""
    rng = np.random.default_rng(seed)
    k = len(priors)
    a = np.column_stack([d.sample(rng, n) for d in priors])
    b = np.column_stack([d.sample(rng, n) for d in priors])
    ab = np.repeat(a[None, :, :], k, axis=0)
    for i in range(k):
        ab[i, :, i] = b[:, i]
    return a, b, ab


def _estimate(fa: np.ndarray, fb: np.ndarray, fab: np.ndarray):
    """Estimator core on evaluations with shape (n, ...) and (k, n, ...)."""
    var = np.var(np.concatenate([fa, fb], axis=0), axis=0, ddof=1)
    first = np.mean(fb[None] * (fab - fa[None]), axis=1)
    total = 0.5 * np.mean((fa[None] - fab) ** 2, axis=1)
    return first, total, var


def _undefined(var: np.ndarray, fa: np.ndarray, fb: np.ndarray) -> np.ndarray:
    scale = np.maximum(np.max(np.abs(fa), axis=0), np.max(np.abs(fb), axis=0))
    return var <= (1e-9 * scale) ** 2 + 1e-300


def indices_from_evaluations(names: Sequence[str], fa: np.ndarray, fb: np.ndarray,
                             fab: np.ndarray, seed: int, n_boot: int = N_BOOT) -> SobolResult:
    fa = np.asarray(fa, dtype=float)
    fb = np.asarray(fb, dtype=float)
    fab = np.asarray(fab, dtype=float)
    n = fa.shape[0]
    first, total, var = _estimate(fa, fb, fab)
    undefined = _undefined(var, fa, fb)
    safe_var = np.where(undefined, 1.0, var)
    s1 = np.where(undefined, np.nan, first / safe_var)
    st = np.where(undefined, np.nan, total / safe_var)
    rng = np.random.default_rng([seed, 0xB007])
    boot_s1 = np.empty((n_boot,) + s1.shape)
    boot_st = np.empty((n_boot,) + st.shape)
    for b in range(n_boot):
        rows = rng.integers(0, n, n)
        f1, ft, v = _estimate(fa[rows], fb[rows], fab[:, rows])
        v = np.where(undefined | (v <= 0), 1.0, v)
        boot_s1[b] = f1 / v
        boot_st[b] = ft / v
    se1 = np.where(undefined, np.nan, boot_s1.std(axis=0, ddof=1))
    set_ = np.where(undefined, np.nan, boot_st.std(axis=0, ddof=1))
    return SobolResult(tuple(names), s1, se1, st, set_, var, n, undefined)


def sobol_indices(qoi: Callable[[np.ndarray], float], priors: Sequence[Distribution],
                  n: int = 1024, seed: int = 0, names: Sequence[str] | None = None,
                  n_boot: int = N_BOOT) -> SobolResult:
    """Principal and total indices of a scalar function of the parameters."""
    if n < 64:
        raise ValueError("base sample count n must be >= 64")
    k = len(priors)
    names = tuple(names) if names else tuple(f"theta_{i + 1}" for i in range(k))
    a, b, ab = pick_freeze_design(priors, n, seed)
    rows = np.concatenate([a, b, ab.reshape(k * n, k)])
    vals = np.array(map_ordered(lambda x: float(qoi(x)), list(rows)))
    if not np.all(np.isfinite(vals)):
        raise ValueError("qoi returned non-finite values on the prior support")
    return indices_from_evaluations(names, vals[:n], vals[n:2 * n],
                                    vals[2 * n:].reshape(k, n), seed, n_boot)


def sobol_over_time(model: ModelSpec, ops: Sequence[ObservationOperator],
                    priors: Sequence[Distribution], param_names: Sequence[str],
                    base: dict[str, float], times: Sequence[float], n: int = 1024,
                    seed: int = 0, rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
                    n_boot: int = N_BOOT) -> SobolResult:
    """Time-resolved indices for each observed series on one shared design.

    ``param_names`` name the uncertain entries (model coefficients, initial
    conditions or ``K``); everything else is taken from ``base``.
    """
    if n < 64:
        raise ValueError("base sample count n must be >= 64")
    times = np.asarray(times, dtype=float)
    k = len(priors)
    a, b, ab = pick_freeze_design(priors, n, seed)
    rows = np.concatenate([a, b, ab.reshape(k * n, k)])

    def run(x):
        vals = dict(base)
        vals.update(zip(param_names, x))
        theta = model.parameter_vector(vals)
        traj = integrate(model, theta, times, rtol, atol)
        cols = []
        for op in ops:
            o = op.with_K(vals["K"]) if "K" in param_names else op
            cols.append(np.asarray(observe(traj, o, theta, model)))
        return np.column_stack(cols)

    evals = np.array(map_ordered(run, list(rows)))  # (rows, times, outputs)
    res = indices_from_evaluations(param_names, evals[:n], evals[n:2 * n],
                                   evals[2 * n:].reshape((k, n) + evals.shape[1:]), seed, n_boot)
    res.times = times
    res.outputs = tuple(op.name for op in ops)
    return res


def sobol_rows(res: SobolResult) -> list[tuple]:
    """Rows ``time, output, param, principal, principal_se, total, total_se``."""
    rows = []
    if res.times is None:
        for i, name in enumerate(res.names):
            rows.append(("", "", name, res.principal[i], res.principal_se[i],
                         res.total[i], res.total_se[i]))
        return rows
    for ti, t in enumerate(res.times):
        for j, out in enumerate(res.outputs):
            for i, name in enumerate(res.names):
                rows.append((t, out, name, res.principal[i, ti, j], res.principal_se[i, ti, j],
                             res.total[i, ti, j], res.total_se[i, ti, j]))
    return rows
