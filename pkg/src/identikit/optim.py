"""Derivative-free minimization: Nelder-Mead on a logit-transformed box."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

REFLECT, EXPAND, CONTRACT, SHRINK = 1.0, 2.0, 0.5, 0.5


@dataclass
class NMResult:
    x: np.ndarray
    fun: float
    iterations: int
    evaluations: int
    converged: bool


def nelder_mead(f: Callable[[np.ndarray], float], x0: np.ndarray, step: float | np.ndarray = 0.5,
                ftol: float = 1e-10, xtol: float = 1e-8, max_iter: int = 2000) -> NMResult:
    """Minimize ``f`` from ``x0``.

    Stops once the spread of simplex values is below ``ftol`` and the simplex
    diameter, relative to ``max(1, |best|)``, is below ``xtol``.
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    sim = np.empty((n + 1, n))
    sim[0] = x0
    step = np.broadcast_to(np.asarray(step, dtype=float), (n,))
    for i in range(n):
        sim[i + 1] = x0
        sim[i + 1, i] += step[i]
    fs = np.array([f(x) for x in sim])
    n_eval = n + 1
    it = 0
    converged = False
    while it < max_iter:
        order = np.argsort(fs, kind="stable")
        sim, fs = sim[order], fs[order]
        spread = fs[-1] - fs[0]
        diam = np.max(np.abs(sim[1:] - sim[0])) / max(1.0, np.max(np.abs(sim[0])))
        if spread < ftol and diam < xtol:
            converged = True
            break
        if not np.isfinite(fs[0]) and not np.any(np.isfinite(fs)):
            break
        it += 1
        centroid = sim[:-1].mean(axis=0)
        xr = centroid + REFLECT * (centroid - sim[-1])
        fr = f(xr)
        n_eval += 1
        if fr < fs[0]:
            xe = centroid + EXPAND * (xr - centroid)
            fe = f(xe)
            n_eval += 1
            if fe < fr:
                sim[-1], fs[-1] = xe, fe
            else:
                sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-2]:
            sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-1]:
            xc = centroid + CONTRACT * (xr - centroid)
            fc = f(xc)
            n_eval += 1
            if fc <= fr:
                sim[-1], fs[-1] = xc, fc
                continue
        else:
            xc = centroid + CONTRACT * (sim[-1] - centroid)
            fc = f(xc)
            n_eval += 1
            if fc < fs[-1]:
                sim[-1], fs[-1] = xc, fc
                continue
        for i in range(1, n + 1):
            sim[i] = sim[0] + SHRINK * (sim[i] - sim[0])
            fs[i] = f(sim[i])
        n_eval += n
    k = int(np.argmin(fs))
    return NMResult(sim[k].copy(), float(fs[k]), it, n_eval, converged)


class BoxTransform:
    """Coordinate-wise logit map between a closed box and unconstrained space.

    Unbounded coordinates pass through unchanged.
    """

    def __init__(self, lower: np.ndarray, upper: np.ndarray):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if np.any(self.upper <= self.lower):
            raise ValueError("each bound interval needs lower < upper")
        self.finite = np.isfinite(self.lower) & np.isfinite(self.upper)

    def to_box(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        x = u.copy()
        fu = np.clip(u[self.finite], -700, 700)
        span = self.upper[self.finite] - self.lower[self.finite]
        x[self.finite] = self.lower[self.finite] + span / (1.0 + np.exp(-fu))
        return x

    def to_free(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = x.copy()
        lo, hi = self.lower[self.finite], self.upper[self.finite]
        frac = np.clip((x[self.finite] - lo) / (hi - lo), 1e-15, 1 - 1e-15)
        u[self.finite] = np.log(frac) - np.log1p(-frac)
        return u
