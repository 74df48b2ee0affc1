"""Sampling schemes and output statistics for forward uncertainty propagation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

SCHEMES = ("monte_carlo", "lhs", "halton")
HALTON_SKIP = 20
_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71)


class DegenerateDensityError(ValueError):
    pass


class PosteriorSupportError(RuntimeError):
    """The Gaussian posterior barely intersects its truncation box."""


@dataclass(frozen=True)
class Distribution:
    """One of ``uniform(a, b)``, ``gaussian(mu, sigma)``,
    ``truncated_gaussian(mu, sigma, lo, hi)`` or ``lognormal(mu_log, sigma_log)``."""

    kind: str
    params: tuple[float, ...]

    def __post_init__(self):
        p = tuple(float(x) for x in self.params)
        object.__setattr__(self, "params", p)
        if self.kind == "uniform":
            if not p[0] < p[1]:
                raise ValueError("uniform needs a < b")
        elif self.kind in ("gaussian", "lognormal"):
            if not p[1] > 0:
                raise ValueError(f"{self.kind} needs sigma > 0")
        elif self.kind == "truncated_gaussian":
            if not p[1] > 0:
                raise ValueError("truncated_gaussian needs sigma > 0")
            if not p[2] < p[3]:
                raise ValueError("truncated_gaussian needs lo < hi")
        else:
            raise ValueError(f"unknown distribution {self.kind!r}")

    @property
    def frozen(self):
        p = self.params
        if self.kind == "uniform":
            return stats.uniform(loc=p[0], scale=p[1] - p[0])
        if self.kind == "gaussian":
            return stats.norm(loc=p[0], scale=p[1])
        if self.kind == "truncated_gaussian":
            mu, s, lo, hi = p
            return stats.truncnorm((lo - mu) / s, (hi - mu) / s, loc=mu, scale=s)
        return stats.lognorm(s=p[1], scale=np.exp(p[0]))

    @property
    def support(self) -> tuple[float, float]:
        if self.kind == "uniform":
            return self.params[0], self.params[1]
        if self.kind == "truncated_gaussian":
            return self.params[2], self.params[3]
        if self.kind == "lognormal":
            return 0.0, np.inf
        return -np.inf, np.inf

    def ppf(self, u: np.ndarray) -> np.ndarray:
        return self.frozen.ppf(u)

    def mean(self) -> float:
        return float(self.frozen.mean())

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        p = self.params
        if self.kind == "uniform":
            return rng.uniform(p[0], p[1], n)
        if self.kind == "gaussian":
            return rng.normal(p[0], p[1], n)
        if self.kind == "lognormal":
            return rng.lognormal(p[0], p[1], n)
        mu, s, lo, hi = p
        out = np.empty(0)
        tried = 0
        while out.size < n:
            x = rng.normal(mu, s, max(2 * (n - out.size), 16))
            tried += x.size
            out = np.concatenate([out, x[(x >= lo) & (x <= hi)]])
            if tried > 10_000 and out.size < 1e-3 * tried:
                raise ValueError("truncated_gaussian acceptance rate below 1e-3")
        return out[:n]


def uniform(a: float, b: float) -> Distribution:
    return Distribution("uniform", (a, b))


def gaussian(mu: float, sigma: float) -> Distribution:
    return Distribution("gaussian", (mu, sigma))


def truncated_gaussian(mu: float, sigma: float, lo: float, hi: float) -> Distribution:
    return Distribution("truncated_gaussian", (mu, sigma, lo, hi))


def lognormal(mu_log: float, sigma_log: float) -> Distribution:
    return Distribution("lognormal", (mu_log, sigma_log))


@dataclass(frozen=True)
class SampleSet:
    points: np.ndarray
    weights: np.ndarray
    scheme: str
    seed: int

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        w = np.array(self.weights, dtype=float)
        if pts.ndim != 2 or w.shape != (pts.shape[0],):
            raise ValueError("points must be (n, k) with one weight per row")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")
        pts.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class GaussianPosterior:
    mean: np.ndarray
    covariance: np.ndarray
    bounds: np.ndarray | None = None
    names: tuple[str, ...] = ()

    def __post_init__(self):
        mu = np.array(self.mean, dtype=float)
        cov = np.array(self.covariance, dtype=float)
        if cov.shape != (mu.size, mu.size):
            raise ValueError("covariance shape does not match the mean")
        if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-300):
            raise ValueError("covariance must be symmetric")
        cov = 0.5 * (cov + cov.T)
        scale = max(float(np.max(np.abs(cov))), 1e-300)
        if np.linalg.eigvalsh(cov).min() < -1e-12 * max(scale, 1.0):
            raise ValueError("covariance is not positive semi-definite")
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "covariance", cov)
        if self.bounds is not None:
            object.__setattr__(self, "bounds", np.array(self.bounds, dtype=float))

    def marginal_sd(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


def radical_inverse(k: int | np.ndarray, base: int) -> np.ndarray:
    """Van der Corput radical inverse of the integer(s) ``k`` in ``base``."""
    k = np.array(k, dtype=np.int64, copy=True)
    out = np.zeros(k.shape)
    f = 1.0 / base
    while np.any(k > 0):
        out += f * (k % base)
        k //= base
        f /= base
    return out


def halton_unit(n: int, dim: int, skip: int = HALTON_SKIP) -> np.ndarray:
    """First ``n`` Halton points after discarding indices 1..skip."""
    if dim > len(_PRIMES):
        raise ValueError(f"halton supports up to {len(_PRIMES)} dimensions")
    idx = np.arange(skip + 1, skip + 1 + n)
    return np.column_stack([radical_inverse(idx, b) for b in _PRIMES[:dim]])


def _lhs_unit(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    u = np.empty((n, dim))
    for j in range(dim):
        u[:, j] = (rng.permutation(n) + rng.random(n)) / n
    return u


def draw(priors: Sequence[Distribution], n: int, scheme: str = "monte_carlo",
         seed: int = 0) -> SampleSet:
    """Draw ``n`` parameter samples with equal weights."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    k = len(priors)
    rng = np.random.default_rng(seed)
    if scheme == "monte_carlo":
        pts = np.column_stack([d.sample(rng, n) for d in priors]) if k else np.empty((n, 0))
    else:
        u = _lhs_unit(rng, n, k) if scheme == "lhs" else halton_unit(n, k)
        pts = np.column_stack([d.ppf(u[:, j]) for j, d in enumerate(priors)]) if k \
            else np.empty((n, 0))
    return SampleSet(pts, np.full(n, 1.0 / n), scheme, seed)


def _sym_sqrt(cov: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(cov)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def draw_posterior(post: GaussianPosterior, n: int, seed: int = 0,
                   min_acceptance: float = 1e-3) -> SampleSet:
    """Sample N(mean, cov) via the symmetric square root, rejecting points outside bounds."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    root = _sym_sqrt(post.covariance)
    k = post.mean.size
    accepted: list[np.ndarray] = []
    have = 0
    tried = 0
    while have < n:
        batch = max(2 * (n - have), 1024)
        z = rng.standard_normal((batch, k))
        x = post.mean + z @ root
        tried += batch
        if post.bounds is not None:
            lo, hi = post.bounds[:, 0], post.bounds[:, 1]
            x = x[np.all((x >= lo) & (x <= hi), axis=1)]
        accepted.append(x)
        have += x.shape[0]
        if tried >= 10_000 and have / tried < min_acceptance:
            raise PosteriorSupportError(
                f"acceptance rate {have / tried:.2e} below {min_acceptance:g}: the Gaussian "
                "posterior barely intersects the prior box")
    pts = np.concatenate(accepted)[:n]
    return SampleSet(pts, np.full(n, 1.0 / n), "gaussian_posterior", seed)


def moments(values: np.ndarray, weights: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Weighted mean and variance over the sample axis (axis 0).

    Equal weights give the unbiased n/(n-1) variance.
    """
    y = np.asarray(values, dtype=float)
    n = y.shape[0]
    if weights is None:
        weights = np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError("values and weights differ in length")
    if n < 2:
        raise ValueError("variance needs at least two samples")
    wb = w.reshape((n,) + (1,) * (y.ndim - 1))
    mean = np.sum(wb * y, axis=0)
    var = np.sum(wb * (y - mean) ** 2, axis=0)
    if np.allclose(w, w[0], rtol=1e-12, atol=0):
        var = var * n / (n - 1)
    return mean, var


@dataclass(frozen=True)
class DensityCurve:
    x: np.ndarray
    pdf: np.ndarray
    method: str


def density(values: np.ndarray, method: str = "kde", bins: int = 30,
            n_grid: int = 512) -> DensityCurve:
    """Histogram or Gaussian-KDE density estimate (Silverman bandwidth)."""
    y = np.asarray(values, dtype=float).ravel()
    if np.unique(y).size < 2:
        raise DegenerateDensityError("need at least two distinct values for a density")
    if method == "histogram":
        counts, edges = np.histogram(y, bins=bins)
        width = np.diff(edges)
        pdf = counts / (counts.sum() * width)
        # piecewise-constant curve drawn on bin edges so trapezoid integrates exactly
        x = np.repeat(edges, 2)[1:-1]
        p = np.repeat(pdf, 2)
        x = np.concatenate([[edges[0]], x, [edges[-1]]])
        p = np.concatenate([[0.0], p, [0.0]])
        return DensityCurve(x, p, "histogram")
    if method != "kde":
        raise ValueError(f"unknown density method {method!r}")
    n = y.size
    h = 1.06 * y.std(ddof=1) * n ** (-0.2)
    x = np.linspace(y.min() - 5 * h, y.max() + 5 * h, n_grid)
    if n <= 5000:
        centers, counts = y, np.ones(n)
    else:
        # binned evaluation keeps large samples cheap; bins are far narrower than h
        counts, edges = np.histogram(y, bins=4 * n_grid, range=(x[0], x[-1]))
        centers = 0.5 * (edges[1:] + edges[:-1])
    pdf = np.zeros_like(x)
    for start in range(0, x.size, 128):
        xs = x[start:start + 128, None]
        pdf[start:start + 128] = (counts * np.exp(-0.5 * ((xs - centers) / h) ** 2)).sum(1)
    pdf /= np.trapezoid(pdf, x)
    return DensityCurve(x, pdf, "kde")


def quantile_band(per_time_values: np.ndarray,
                  levels: Sequence[float] = (0.05, 0.95)) -> np.ndarray:
    """Empirical per-time quantiles; rows are samples, columns are times."""
    v = np.asarray(per_time_values, dtype=float)
    levels = np.asarray(levels, dtype=float)
    if np.any(levels <= 0) or np.any(levels >= 1) or np.any(np.diff(levels) <= 0):
        raise ValueError("levels must be increasing inside (0, 1)")
    n = v.shape[0]
    if n < 1.0 / levels.min():
        raise ValueError(f"{n} samples are too few for quantile level {levels.min():g}")
    return np.quantile(v, levels, axis=0, method="linear")
