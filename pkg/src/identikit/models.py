"""Compartmental ODE models and their integration.

The registry is closed (SIR, SEIRD, SEIRDz).  A new model is a
:class:`ModelSpec` whose ``rhs`` is a numba-jitted function with signature
``rhs(t, y, p, seg) -> dy``; ``p`` holds the coefficients followed by
``n_pop`` and ``seg`` counts the switch times already crossed.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from numba import njit
from numba.core.registry import CPUDispatcher

from identikit import _dopri

DEFAULT_RTOL = 1e-6
DEFAULT_ATOL = 1e-9


class IntegrationError(RuntimeError):
    """Raised when the adaptive integrator cannot advance."""

    def __init__(self, message: str, t_fail: float):
        super().__init__(message)
        self.t_fail = t_fail


@dataclass(frozen=True)
class ModelSpec:
    name: str
    state_names: tuple[str, ...]
    param_names: tuple[str, ...]
    rhs: Callable
    n_pop: float = 1.0
    switch_times: tuple[float, ...] = ()
    t0: float = 0.0

    def __post_init__(self):
        if len(set(self.state_names)) != len(self.state_names):
            raise ValueError(f"duplicate state names in {self.name}")
        if len(set(self.param_names)) != len(self.param_names):
            raise ValueError(f"duplicate parameter names in {self.name}")
        if list(self.switch_times) != sorted(self.switch_times):
            raise ValueError("switch_times must be ordered")

    @property
    def n_states(self) -> int:
        return len(self.state_names)

    @property
    def ic_names(self) -> tuple[str, ...]:
        return tuple(f"{s}0" for s in self.state_names)

    @property
    def theta_names(self) -> tuple[str, ...]:
        return self.param_names + self.ic_names

    def state_index(self, label: str) -> int:
        try:
            return self.state_names.index(label)
        except ValueError:
            raise KeyError(f"model {self.name!r} has no state {label!r}") from None

    def parameter_vector(self, values: Mapping[str, float],
                         bounds: Mapping[str, tuple[float, float]] | None = None
                         ) -> "ParameterVector":
        """Build the ordered [coefficients, initial conditions] vector from a mapping.

        Initial conditions are looked up as ``"S0"``, ``"I0"``, ... . Extra keys
        (e.g. observation hyper-parameters such as ``K``) are ignored.
        """
        missing = [n for n in self.theta_names if n not in values]
        if missing:
            raise KeyError(f"missing values for {missing} in model {self.name!r}")
        vals = np.array([float(values[n]) for n in self.theta_names])
        bnds = None
        if bounds is not None:
            bnds = np.array([bounds.get(n, (-np.inf, np.inf)) for n in self.theta_names],
                            dtype=float)
        return ParameterVector(self.theta_names, vals, bnds)


@dataclass(frozen=True)
class ParameterVector:
    """Named coefficients followed by initial conditions, with closed bounds."""

    names: tuple[str, ...]
    values: np.ndarray
    bounds: np.ndarray | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        if len(self.names) != vals.shape[0]:
            raise ValueError("names and values differ in length")
        bnds = self.bounds
        if bnds is None:
            bnds = np.tile([-np.inf, np.inf], (len(self.names), 1))
        bnds = np.asarray(bnds, dtype=float).copy()
        bnds.flags.writeable = False
        object.__setattr__(self, "bounds", bnds)
        outside = (vals < bnds[:, 0]) | (vals > bnds[:, 1])
        if outside.any():
            bad = [n for n, o in zip(self.names, outside) if o]
            raise ValueError(f"values outside bounds for {bad}")

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def __len__(self) -> int:
        return len(self.names)

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.values)}

    def replace(self, **updates: float) -> "ParameterVector":
        vals = self.values.copy()
        for k, v in updates.items():
            vals[self.names.index(k)] = v
        return ParameterVector(self.names, vals, self.bounds)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    model_ref: str
    state_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        x = np.asarray(self.states, dtype=float)
        if x.shape[0] != t.shape[0]:
            raise ValueError("row count must equal number of times")
        if not np.all(np.isfinite(x)):
            raise ValueError("trajectory contains non-finite values")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        for arr in (t, x):
            arr.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", x)

    def column(self, label: str) -> np.ndarray:
        return self.states[:, self.state_names.index(label)]


# -- builtin vector fields ---------------------------------------------------

@njit(cache=True, nogil=True)
def _sir_rhs(t, y, p, seg):
    beta, r, n_pop = p[0], p[1], p[2]
    inf = beta / n_pop * y[0] * y[1]
    out = np.empty(3)
    out[0] = -inf
    out[1] = inf - r * y[1]
    out[2] = r * y[1]
    return out


@njit(cache=True, nogil=True)
def _seird_rhs(t, y, p, seg):
    beta, i, r, d, n_pop = p[0], p[1], p[2], p[3], p[4]
    inf = beta / n_pop * y[0] * y[2]
    out = np.empty(5)
    out[0] = -inf
    out[1] = inf - i * y[1]
    out[2] = i * y[1] - (d + r) * y[2]
    out[3] = r * y[2]
    out[4] = d * y[2]
    return out


@njit(cache=True, nogil=True)
def _seirdz_rhs(t, y, p, seg):
    # additive lockdown: beta1 before the switch, beta1 - z after
    beta = p[0] if seg == 0 else p[0] - p[1]
    i, r, d, n_pop = p[2], p[3], p[4], p[5]
    inf = beta / n_pop * y[0] * y[2]
    out = np.empty(5)
    out[0] = -inf
    out[1] = inf - i * y[1]
    out[2] = i * y[1] - (d + r) * y[2]
    out[3] = r * y[2]
    out[4] = d * y[2]
    return out


BUILTIN_MODELS = ("sir", "seird", "seirdz")


def get_model(name: str, n_pop: float = 1.0, t_lock: float = 15.0) -> ModelSpec:
    """Return a builtin model.  ``t_lock`` only applies to SEIRDz."""
    key = name.lower()
    if key == "sir":
        return ModelSpec("sir", ("S", "I", "R"), ("beta", "r"), _sir_rhs, n_pop)
    if key == "seird":
        return ModelSpec("seird", ("S", "E", "I", "R", "D"), ("beta", "i", "r", "d"),
                         _seird_rhs, n_pop)
    if key == "seirdz":
        return ModelSpec("seirdz", ("S", "E", "I", "R", "D"),
                         ("beta1", "z", "i", "r", "d"), _seirdz_rhs, n_pop,
                         switch_times=(float(t_lock),))
    raise KeyError(f"unknown model {name!r}; builtin models are {BUILTIN_MODELS}")


def _coef_array(model: ModelSpec, theta: ParameterVector) -> np.ndarray:
    if tuple(theta.names[:len(model.param_names)]) != model.param_names:
        raise ValueError(f"parameter vector does not match model {model.name!r}")
    p = np.empty(len(model.param_names) + 1)
    p[:-1] = theta.values[:len(model.param_names)]
    p[-1] = model.n_pop
    return p


def _segment_index(model: ModelSpec, t: float) -> int:
    return int(sum(1 for s in model.switch_times if s < t))


def evaluate_rhs(model: ModelSpec, state: Sequence[float], t: float,
                 theta: ParameterVector) -> np.ndarray:
    """Evaluate the vector field on the branch active at time ``t``."""
    y = np.asarray(state, dtype=float)
    if y.shape != (model.n_states,):
        raise ValueError(f"state must have length {model.n_states}, got {y.shape}")
    return np.asarray(model.rhs(float(t), y, _coef_array(model, theta),
                                _segment_index(model, t)))


def integrate(model: ModelSpec, theta: ParameterVector, t_out: Sequence[float],
              rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL) -> Trajectory:
    """Integrate ``model`` from ``model.t0`` and report the states at ``t_out``.

    Each switch time is a mandatory step endpoint, so the branch change is
    never smeared across a step.
    """
    t_out = np.asarray(t_out, dtype=float)
    if t_out.ndim != 1 or t_out.size == 0:
        raise ValueError("t_out must be a non-empty 1-d grid")
    if np.any(np.diff(t_out) <= 0):
        raise ValueError("t_out must be strictly increasing")
    if t_out[0] < model.t0:
        raise ValueError(f"t_out starts before the initial time {model.t0}")
    if rtol <= 0 or atol <= 0:
        raise ValueError("rtol and atol must be positive")
    t_end = t_out[-1]
    breaks = np.array([model.t0] + [s for s in model.switch_times if model.t0 < s < t_end]
                      + [max(t_end, model.t0)])
    p = _coef_array(model, theta)
    y0 = np.array(theta.values[len(model.param_names):], dtype=float)
    if isinstance(model.rhs, CPUDispatcher):
        states, status, t_fail = _dopri.integrate_segments(model.rhs, p, y0, breaks, t_out,
                                                           rtol, atol)
    else:
        states, status, t_fail = _dopri.integrate_segments.py_func(model.rhs, p, y0, breaks,
                                                                   t_out, rtol, atol)
    if status == _dopri.STATUS_UNDERFLOW:
        raise IntegrationError(f"step size underflow at t={t_fail:.6g}", t_fail)
    if status == _dopri.STATUS_MAXSTEPS:
        raise IntegrationError(f"step budget exhausted at t={t_fail:.6g}", t_fail)
    if status == _dopri.STATUS_NONFINITE:
        raise IntegrationError(f"non-finite state at t={t_fail:.6g}", t_fail)
    lo, hi = -atol, model.n_pop + atol
    if states.min() < lo or states.max() > hi:
        warnings.warn(f"{model.name}: state left [0, N_pop] (min {states.min():.3g}, "
                      f"max {states.max():.3g})", RuntimeWarning, stacklevel=2)
    return Trajectory(t_out, states, model.name, model.state_names)


def reference_rk4(model: ModelSpec, theta: ParameterVector, t_out: Sequence[float],
                  h: float = 1e-3) -> np.ndarray:
    """Fixed-step RK4 states at ``t_out`` (which must sit on the step lattice)."""
    t_out = np.asarray(t_out, dtype=float)
    breaks = np.array([model.t0] + [s for s in model.switch_times if model.t0 < s < t_out[-1]]
                      + [t_out[-1]])
    y0 = np.array(theta.values[len(model.param_names):], dtype=float)
    return _dopri.rk4_fixed(model.rhs, _coef_array(model, theta), y0, breaks, t_out, h)
