"""Observation operators, synthetic data and misfits."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from identikit.models import (DEFAULT_ATOL, DEFAULT_RTOL, ModelSpec, ParameterVector,
                              Trajectory, evaluate_rhs, integrate)

SERIES_KINDS = ("scaled_state", "incidence")
SCALAR_KINDS = ("state_at_time", "peak_time", "peak_value", "cumulative_incidence_peak")


@dataclass(frozen=True)
class ObservationOperator:
    """Maps a trajectory to an observable.

    ``kind`` is one of ``scaled_state``, ``incidence``, ``state_at_time``,
    ``peak_time``, ``peak_value`` or ``cumulative_incidence_peak``.
    """

    kind: str
    state: str | None = None
    K: float = 1.0
    t: float | None = None
    delta: float | None = None
    label: str | None = None

    def __post_init__(self):
        if self.kind not in SERIES_KINDS + SCALAR_KINDS:
            raise ValueError(f"unknown observation kind {self.kind!r}")
        if self.K < 1.0:
            raise ValueError(f"under-reporting factor K must be >= 1, got {self.K}")
        if self.kind in ("scaled_state", "state_at_time", "peak_time", "peak_value") \
                and not self.state:
            raise ValueError(f"{self.kind} needs a state label")
        if self.kind == "state_at_time" and self.t is None:
            raise ValueError("state_at_time needs a time")
        if self.kind == "cumulative_incidence_peak" and (self.delta is None or self.delta <= 0):
            raise ValueError("cumulative_incidence_peak needs a window delta > 0")

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if self.kind == "scaled_state":
            return self.state
        if self.kind == "incidence":
            return "incidence"
        if self.kind == "state_at_time":
            return f"{self.state}@{self.t:g}"
        if self.kind == "cumulative_incidence_peak":
            return f"cum_incidence_peak_{self.delta:g}"
        return f"{self.kind}_{self.state}"

    @property
    def is_series(self) -> bool:
        return self.kind in SERIES_KINDS

    def with_K(self, K: float) -> "ObservationOperator":
        return replace(self, K=float(K))


def scaled_state(state: str, K: float = 1.0, label: str | None = None) -> ObservationOperator:
    return ObservationOperator("scaled_state", state=state, K=K, label=label)


def incidence(K: float = 1.0, label: str | None = None) -> ObservationOperator:
    return ObservationOperator("incidence", K=K, label=label)


def state_at_time(state: str, t: float) -> ObservationOperator:
    return ObservationOperator("state_at_time", state=state, t=t)


def peak_time(state: str) -> ObservationOperator:
    return ObservationOperator("peak_time", state=state)


def peak_value(state: str) -> ObservationOperator:
    return ObservationOperator("peak_value", state=state)


def cumulative_incidence_peak(delta: float) -> ObservationOperator:
    return ObservationOperator("cumulative_incidence_peak", delta=delta)


def _refined_argmax(t: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Grid argmax refined by the parabola through the three surrounding points."""
    k = int(np.argmax(y))
    if k == 0 or k == len(y) - 1:
        return float(t[k]), float(y[k])
    t0, t1, t2 = t[k - 1], t[k], t[k + 1]
    y0, y1, y2 = y[k - 1], y[k], y[k + 1]
    # Lagrange parabola through the three points; vertex by its derivative root
    d0 = (t0 - t1) * (t0 - t2)
    d1 = (t1 - t0) * (t1 - t2)
    d2 = (t2 - t0) * (t2 - t1)
    a = y0 / d0 + y1 / d1 + y2 / d2
    b = -(y0 * (t1 + t2) / d0 + y1 * (t0 + t2) / d1 + y2 * (t0 + t1) / d2)
    if a >= 0:
        return float(t1), float(y1)
    tv = -b / (2 * a)
    if not t0 <= tv <= t2:
        return float(t1), float(y1)
    c = y0 * t1 * t2 / d0 + y1 * t0 * t2 / d1 + y2 * t0 * t1 / d2
    return float(tv), float(max(a * tv * tv + b * tv + c, y1))


def _incidence_rate(model: ModelSpec, traj: Trajectory, theta: ParameterVector) -> np.ndarray:
    # new infections per unit time = outflow of S, which is beta(t)/N * S * I
    s = model.state_index("S")
    return np.array([-evaluate_rhs(model, x, t, theta)[s]
                     for t, x in zip(traj.times, traj.states)])


def observe(traj: Trajectory, op: ObservationOperator, theta: ParameterVector,
            model: ModelSpec) -> np.ndarray | float:
    """Apply ``op`` to ``traj``; series kinds give one value per trajectory time."""
    if op.kind == "scaled_state":
        return traj.states[:, _col(model, op.state)] / op.K
    if op.kind == "incidence":
        return _incidence_rate(model, traj, theta) / op.K
    if op.kind == "state_at_time":
        if not traj.times[0] <= op.t <= traj.times[-1]:
            raise ValueError(f"t={op.t} outside trajectory horizon")
        return float(np.interp(op.t, traj.times, traj.states[:, _col(model, op.state)]))
    if op.kind == "peak_time":
        return _refined_argmax(traj.times, traj.states[:, _col(model, op.state)])[0]
    if op.kind == "peak_value":
        return _refined_argmax(traj.times, traj.states[:, _col(model, op.state)])[1]
    # cumulative_incidence_peak
    t = traj.times
    if op.delta >= t[-1] - t[0]:
        raise ValueError(f"window {op.delta} is not shorter than the horizon")
    rate = _incidence_rate(model, traj, theta)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (rate[1:] + rate[:-1]) * np.diff(t))])
    starts = t[t + op.delta <= t[-1] + 1e-12]
    window = np.interp(starts + op.delta, t, cum) - cum[:len(starts)]
    return _refined_argmax(starts, window)[0]


def _col(model: ModelSpec, label: str) -> int:
    return model.state_index(label)


@dataclass(frozen=True)
class Dataset:
    """Observed series keyed by observable name.

    ``noise`` maps each series to its Gaussian standard deviation, or ``None``
    when unknown.  ``provenance`` records seed and true parameters for
    synthetic data.
    """

    series: Mapping[str, tuple[np.ndarray, np.ndarray]]
    noise: Mapping[str, float | None] = field(default_factory=dict)
    provenance: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        frozen = {}
        for name, (t, v) in self.series.items():
            t = np.array(t, dtype=float)
            v = np.array(v, dtype=float)
            if t.shape != v.shape or t.ndim != 1:
                raise ValueError(f"series {name!r}: times and values differ in shape")
            if t.size > 1 and np.any(np.diff(t) <= 0):
                raise ValueError(f"series {name!r}: times must be strictly increasing")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"series {name!r}: non-finite values")
            t.flags.writeable = False
            v.flags.writeable = False
            frozen[name] = (t, v)
        object.__setattr__(self, "series", frozen)
        object.__setattr__(self, "noise", dict(self.noise))
        object.__setattr__(self, "provenance", dict(self.provenance))

    @property
    def names(self) -> list[str]:
        return list(self.series)

    @property
    def n_points(self) -> int:
        return sum(len(t) for t, _ in self.series.values())

    def all_times(self) -> np.ndarray:
        if not self.series:
            return np.empty(0)
        return np.unique(np.concatenate([t for t, _ in self.series.values()]))

    def values(self) -> np.ndarray:
        if not self.series:
            return np.empty(0)
        return np.concatenate([v for _, v in self.series.values()])

    def restrict(self, t_max: float) -> "Dataset":
        """Keep only points with time <= ``t_max``."""
        series = {k: (t[t <= t_max], v[t <= t_max]) for k, (t, v) in self.series.items()}
        return Dataset(series, self.noise, {**self.provenance, "t_max": t_max})


def _series_ops(ops: Sequence[ObservationOperator]) -> None:
    for op in ops:
        if not op.is_series:
            raise ValueError(f"{op.kind} is a scalar observable and cannot form a data series")


def predict(model: ModelSpec, theta: ParameterVector, ops: Sequence[ObservationOperator],
            times: np.ndarray, rtol: float = DEFAULT_RTOL,
            atol: float = DEFAULT_ATOL) -> dict[str, np.ndarray]:
    """Noise-free observed series for each operator on a shared grid."""
    _series_ops(ops)
    traj = integrate(model, theta, times, rtol, atol)
    return {op.name: np.asarray(observe(traj, op, theta, model)) for op in ops}


def synthesize(model: ModelSpec, theta_true: ParameterVector,
               ops: Sequence[ObservationOperator], times: Sequence[float],
               sigmas: Sequence[float], seed: int, rtol: float = DEFAULT_RTOL,
               atol: float = DEFAULT_ATOL) -> Dataset:
    """Noisy synthetic data: observed trajectory plus independent Gaussian noise.

    Series ``j`` draws its noise from a generator keyed on ``(seed, j)``, so
    point ``i`` always receives the ``i``-th variate of that stream.
    """
    times = np.asarray(times, dtype=float)
    if len(sigmas) != len(ops):
        raise ValueError("need one sigma per observation operator")
    if any(s < 0 for s in sigmas):
        raise ValueError("sigmas must be >= 0")
    clean = predict(model, theta_true, ops, times, rtol, atol)
    series = {}
    for j, (op, sigma) in enumerate(zip(ops, sigmas)):
        rng = np.random.default_rng([int(seed), j])
        eps = rng.standard_normal(times.size)
        series[op.name] = (times, clean[op.name] + sigma * eps)
    return Dataset(series, {op.name: float(s) for op, s in zip(ops, sigmas)},
                   {"seed": int(seed), "theta_true": theta_true.as_dict(),
                    "K": [op.K for op in ops]})


def misfits(data: Dataset, model: ModelSpec, theta: ParameterVector,
            ops: Sequence[ObservationOperator], rtol: float = DEFAULT_RTOL,
            atol: float = DEFAULT_ATOL) -> np.ndarray:
    """Data minus prediction for every point of every series, in series order."""
    return np.concatenate(list(series_misfits(data, model, theta, ops, rtol, atol).values())
                          or [np.empty(0)])


def series_misfits(data: Dataset, model: ModelSpec, theta: ParameterVector,
                   ops: Sequence[ObservationOperator], rtol: float = DEFAULT_RTOL,
                   atol: float = DEFAULT_ATOL) -> dict[str, np.ndarray]:
    if len(ops) != len(data.series):
        raise ValueError("need one observation operator per data series")
    if data.n_points == 0:
        return {op.name: np.empty(0) for op in ops}
    grid = data.all_times()
    if grid[0] < model.t0:
        raise ValueError("data times precede the model's initial time")
    pred = predict(model, theta, ops, grid, rtol, atol)
    out = {}
    for op, (name, (t, v)) in zip(ops, data.series.items()):
        idx = np.searchsorted(grid, t)
        out[name] = v - pred[op.name][idx]
    return out


# -- CSV ----------------------------------------------------------------------

def dataset_to_csv(data: Dataset) -> str:
    grid = data.all_times()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time", *data.names])
    lookup = {name: dict(zip(t.tolist(), v.tolist())) for name, (t, v) in data.series.items()}
    for t in grid.tolist():
        row = [repr(t)]
        for name in data.names:
            v = lookup[name].get(t)
            row.append("" if v is None else repr(v))
        w.writerow(row)
    return buf.getvalue()


def dataset_from_csv(text: str, noise: Mapping[str, float | None] | None = None) -> Dataset:
    """Parse ``time,<obs_1>,...``; empty cells mean "not observed at this time"."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][0].strip() != "time":
        raise ValueError("CSV header must start with 'time'")
    names = [h.strip() for h in rows[0][1:]]
    cols: dict[str, tuple[list[float], list[float]]] = {n: ([], []) for n in names}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        t = float(row[0])
        for name, cell in zip(names, row[1:]):
            if cell.strip():
                try:
                    value = float(cell)
                except ValueError:
                    raise ValueError(f"line {lineno}: bad value {cell!r} for {name}") from None
                cols[name][0].append(t)
                cols[name][1].append(value)
    noise = dict(noise or {})
    return Dataset({n: (np.array(t), np.array(v)) for n, (t, v) in cols.items()},
                   {n: noise.get(n) for n in names})
