"""Run configuration: one JSON document validated with pydantic.

Every model coefficient, every initial condition and ``K`` is either fixed
(a bare number or ``{"value": x}``) or uncertain (``{"prior": {...}}``).
Uncertain entries are what Sobol screening samples and what fits estimate;
their ``truth`` (or ``value``) drives synthetic data.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from identikit.fit import GaussianPrior, KnownSigma, ProfiledCommon, ProfiledTwo, UniformPrior
from identikit.models import ModelSpec, get_model
from identikit.observe import ObservationOperator
from identikit.sample import Distribution


class ConfigError(ValueError):
    """Validation failure; the message lists ``field.path: reason`` lines."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PriorSpec(_Strict):
    kind: Literal["uniform", "gaussian", "truncated_gaussian", "lognormal"]
    params: list[float]

    @model_validator(mode="after")
    def _arity(self):
        need = {"uniform": 2, "gaussian": 2, "truncated_gaussian": 4, "lognormal": 2}[self.kind]
        if len(self.params) != need:
            raise ValueError(f"{self.kind} takes {need} parameters, got {len(self.params)}")
        Distribution(self.kind, tuple(self.params))
        return self

    def distribution(self) -> Distribution:
        return Distribution(self.kind, tuple(self.params))


class ParamSpec(_Strict):
    value: Optional[float] = None
    prior: Optional[PriorSpec] = None
    truth: Optional[float] = None
    bounds: Optional[tuple[float, float]] = None

    @model_validator(mode="after")
    def _one_of(self):
        if (self.value is None) == (self.prior is None):
            raise ValueError("give exactly one of 'value' (fixed) or 'prior' (uncertain)")
        if self.bounds is not None and not self.bounds[0] < self.bounds[1]:
            raise ValueError("bounds need lo < hi")
        return self

    @property
    def fixed(self) -> bool:
        return self.prior is None

    def nominal(self) -> float:
        """Value used for simulation and synthetic data."""
        if self.value is not None:
            return self.value
        if self.truth is not None:
            return self.truth
        return self.prior.distribution().mean()

    def box(self) -> tuple[float, float]:
        if self.bounds is not None:
            return self.bounds
        lo, hi = self.prior.distribution().support
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise ValueError("an unbounded prior needs explicit 'bounds' for fitting")
        return lo, hi


Param = Union[float, ParamSpec]


class ObservableSpec(_Strict):
    kind: Literal["scaled_state", "incidence", "state_at_time", "peak_time", "peak_value",
                  "cumulative_incidence_peak"]
    state: Optional[str] = None
    t: Optional[float] = None
    delta: Optional[float] = None
    label: Optional[str] = None

    def operator(self, K: float) -> ObservationOperator:
        return ObservationOperator(self.kind, self.state, K, self.t, self.delta, self.label)


class TimeGrid(_Strict):
    start: float = 0.0
    stop: float
    n: int = Field(ge=2)

    def array(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.n)


Times = Union[TimeGrid, list[float]]


def _times(t: Times) -> np.ndarray:
    return t.array() if isinstance(t, TimeGrid) else np.asarray(t, dtype=float)


class SyntheticData(_Strict):
    times: Times
    sigmas: list[float]
    seed: int = 0

    @field_validator("sigmas")
    @classmethod
    def _nonneg(cls, v):
        if any(s < 0 for s in v):
            raise ValueError("sigmas must be >= 0")
        return v


class DataSpec(_Strict):
    csv: Optional[str] = None
    synthetic: Optional[SyntheticData] = None
    t_max: Optional[float] = None

    @model_validator(mode="after")
    def _one_of(self):
        if (self.csv is None) == (self.synthetic is None):
            raise ValueError("give exactly one of 'csv' or 'synthetic'")
        return self


class NoiseSpec(_Strict):
    mode: Literal["known", "profiled_common", "profiled_two"] = "profiled_common"
    sigmas: Optional[list[float]] = None
    lambda_grid: Optional[list[float]] = None

    @model_validator(mode="after")
    def _check(self):
        if self.mode == "known" and not self.sigmas:
            raise ValueError("mode 'known' needs sigmas")
        if self.sigmas and any(s <= 0 for s in self.sigmas):
            raise ValueError("known sigmas must be > 0")
        return self

    def mode_object(self):
        if self.mode == "known":
            return KnownSigma(tuple(self.sigmas))
        if self.mode == "profiled_two":
            return ProfiledTwo(tuple(self.lambda_grid)) if self.lambda_grid else ProfiledTwo()
        return ProfiledCommon()


class SamplingSpec(_Strict):
    scheme: Literal["monte_carlo", "lhs", "halton"] = "monte_carlo"
    n: int = Field(default=1000, ge=2)
    seed: int = 0


class ForwardSpec(_Strict):
    times: Times
    levels: list[float] = [0.05, 0.95]
    peak_state: str = "I"
    states_at: list[float] = []
    density: Literal["kde", "histogram"] = "kde"


class SobolSpec(_Strict):
    n: int = Field(default=1024, ge=64)
    times: Times
    outputs: Literal["states", "observables"] = "states"
    floor: float = 0.01
    seed: Optional[int] = None


class FitSpec(_Strict):
    restarts: int = Field(default=20, ge=1)
    seed: Optional[int] = None
    rtol: float = 1e-6
    atol: float = 1e-9
    prior: Literal["uniform", "gaussian"] = "uniform"
    hessian: Literal["fd", "jacobian"] = "fd"
    posterior_samples: int = Field(default=1000, ge=10)


class ProfileSpec(_Strict):
    params: Optional[list[str]] = None
    n_points: int = Field(default=25, ge=3)
    full_range: bool = False
    alpha: float = Field(default=0.95, gt=0, lt=1)
    restarts: int = Field(default=3, ge=0)
    grids: dict[str, list[float]] = {}


class BootstrapSpec(_Strict):
    noise_levels: list[float]
    M: int = Field(default=100, ge=10)
    n_params_jointly: Optional[int] = None
    times: Optional[Times] = None
    restarts: int = Field(default=5, ge=1)


class StructuralSpec(_Strict):
    case: Literal["sir_I_only", "sir_I_and_R", "seird_IRD"]
    knowns: list[Literal["K", "N_pop"]] = ["K", "N_pop"]


class WorkflowSpec(_Strict):
    hierarchical: bool = False


class RunConfig(_Strict):
    model: Literal["sir", "seird", "seirdz"]
    n_pop: float = Field(default=1.0, gt=0)
    t_lock: float = 15.0
    initial_conditions: dict[str, Param]
    parameters: dict[str, Param]
    K: Param = 1.0
    observables: list[ObservableSpec] = []
    simulate_times: Optional[Times] = None
    data: Optional[DataSpec] = None
    noise: NoiseSpec = NoiseSpec()
    sampling: SamplingSpec = SamplingSpec()
    forward: Optional[ForwardSpec] = None
    sobol: Optional[SobolSpec] = None
    fit: FitSpec = FitSpec()
    profile: ProfileSpec = ProfileSpec()
    bootstrap: Optional[BootstrapSpec] = None
    structural: Optional[StructuralSpec] = None
    workflow: WorkflowSpec = WorkflowSpec()
    output_dir: str = "out"

    # -- derived views -----------------------------------------------------------

    def model_spec(self) -> ModelSpec:
        return get_model(self.model, self.n_pop, self.t_lock)

    def entries(self) -> dict[str, ParamSpec]:
        """Every assignable entry (coefficients, ``<state>0`` ICs, ``K``) as a ParamSpec."""
        out = {}
        for name, p in self.parameters.items():
            out[name] = _as_spec(p)
        for state, p in self.initial_conditions.items():
            out[f"{state}0"] = _as_spec(p)
        out["K"] = _as_spec(self.K)
        return out

    def nominal_values(self) -> dict[str, float]:
        return {k: p.nominal() for k, p in self.entries().items()}

    def uncertain(self) -> list[str]:
        return [k for k, p in self.entries().items() if not p.fixed]

    def priors(self) -> list[Distribution]:
        e = self.entries()
        return [e[k].prior.distribution() for k in self.uncertain()]

    def bounds(self) -> dict[str, tuple[float, float]]:
        e = self.entries()
        return {k: e[k].box() for k in self.uncertain()}

    def operators(self) -> tuple[ObservationOperator, ...]:
        K = self.nominal_values()["K"]
        return tuple(o.operator(K) for o in self.observables)

    def prior_object(self):
        if self.fit.prior == "uniform":
            return UniformPrior()
        e = self.entries()
        means, sds = {}, {}
        for k in self.uncertain():
            d = e[k].prior
            if d.kind not in ("gaussian", "truncated_gaussian"):
                raise ConfigError(f"parameters.{k}.prior: gaussian fit prior needs a "
                                  "gaussian or truncated_gaussian prior")
            means[k], sds[k] = d.params[0], d.params[1]
        return GaussianPrior(means, sds)


def _as_spec(p: Param) -> ParamSpec:
    return p if isinstance(p, ParamSpec) else ParamSpec(value=float(p))


def _semantic_checks(cfg: RunConfig, base: Path) -> list[str]:
    errs = []
    model = cfg.model_spec()
    for name in model.param_names:
        if name not in cfg.parameters:
            errs.append(f"parameters.{name}: missing (give a value or a prior)")
    for name in cfg.parameters:
        if name not in model.param_names:
            errs.append(f"parameters.{name}: not a coefficient of model '{cfg.model}'")
    for state in model.state_names:
        if state not in cfg.initial_conditions:
            errs.append(f"initial_conditions.{state}: missing")
    for state in cfg.initial_conditions:
        if state not in model.state_names:
            errs.append(f"initial_conditions.{state}: not a state of model '{cfg.model}'")
    for k, spec in cfg.entries().items():
        if spec.prior is not None and spec.bounds is None:
            lo, hi = spec.prior.distribution().support
            if not (np.isfinite(lo) and np.isfinite(hi)):
                where = _field_of(cfg, k)
                errs.append(f"{where}.bounds: unbounded prior needs explicit bounds")
    for i, o in enumerate(cfg.observables):
        if o.state is not None and o.state not in model.state_names:
            errs.append(f"observables.{i}.state: unknown state {o.state!r}")
        try:
            o.operator(1.0)
        except ValueError as e:
            errs.append(f"observables.{i}: {e}")
    if cfg.data is not None:
        if cfg.data.csv is not None and not (base / cfg.data.csv).is_file():
            errs.append(f"data.csv: file not found: {cfg.data.csv}")
        if cfg.data.synthetic is not None and len(cfg.data.synthetic.sigmas) != len(cfg.observables):
            errs.append("data.synthetic.sigmas: need one sigma per observable")
    if cfg.noise.sigmas is not None and len(cfg.noise.sigmas) != len(cfg.observables):
        errs.append("noise.sigmas: need one sigma per observable")
    if cfg.profile.params:
        for p in cfg.profile.params:
            if p not in cfg.uncertain():
                errs.append(f"profile.params: {p!r} is not an uncertain parameter")
    return errs


def _field_of(cfg: RunConfig, key: str) -> str:
    if key == "K":
        return "K"
    if key in cfg.parameters:
        return f"parameters.{key}"
    return f"initial_conditions.{key[:-1]}"


def parse_config(doc: dict, base: Path | str = ".") -> RunConfig:
    try:
        cfg = RunConfig.model_validate(doc)
    except ValidationError as e:
        lines = [f"{'.'.join(str(x) for x in err['loc']) or '<root>'}: {err['msg']}"
                 for err in e.errors()]
        raise ConfigError("\n".join(lines)) from None
    errs = _semantic_checks(cfg, Path(base))
    if errs:
        raise ConfigError("\n".join(errs))
    return cfg


def load_config(path: Path | str) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"<config>: file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"<config>: invalid JSON ({e})") from None
    return parse_config(doc, path.parent)


def config_times(t: Times) -> np.ndarray:
    return _times(t)
