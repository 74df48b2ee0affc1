"""Command implementations shared by the CLI and the workflow."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from identikit.config import ConfigError, RunConfig, config_times
from identikit.fit import (FitResult, LikelihoodSpec, ProfiledTwo, goodness_of_fit,
                           lambda_sweep, mle)
from identikit.ident import (StructuralCase, bootstrap_are, correlation_matrix,
                             invert_coefficients, pl_interval, profile_likelihood,
                             structural_coefficients)
from identikit.models import integrate
from identikit.observe import (Dataset, ObservationOperator, dataset_from_csv, observe,
                               peak_time, peak_value, scaled_state, state_at_time, synthesize)
from identikit.parallel import map_ordered
from identikit.report import Outputs
from identikit.sample import (DegenerateDensityError, SampleSet, density, draw, moments,
                              quantile_band)
from identikit.sensitivity import sobol_over_time, sobol_rows


class GateHalt(RuntimeError):
    """A workflow gate found non-identifiability; downstream stages were skipped."""


@dataclass
class Run:
    cfg: RunConfig
    out: Outputs
    seed: int | None = None
    plot: bool = False
    base: Path = Path(".")

    def seed_for(self, configured: int | None, default: int = 0) -> int:
        if self.seed is not None:
            return self.seed
        return default if configured is None else configured


# -- shared pieces ---------------------------------------------------------------

def load_data(run: Run) -> Dataset:
    cfg = run.cfg
    if cfg.data is None:
        raise ConfigError("data: this command needs a 'data' block")
    ops = cfg.operators()
    if cfg.data.csv is not None:
        text = (run.base / cfg.data.csv).read_text()
        data = dataset_from_csv(text)
        if data.names != [o.name for o in ops]:
            raise ConfigError(f"data.csv: columns {data.names} do not match observables "
                              f"{[o.name for o in ops]}")
    else:
        syn = cfg.data.synthetic
        model = cfg.model_spec()
        theta = model.parameter_vector(cfg.nominal_values())
        data = synthesize(model, theta, ops, config_times(syn.times), syn.sigmas,
                          run.seed_for(syn.seed))
    if cfg.data.t_max is not None:
        data = data.restrict(cfg.data.t_max)
    return data


def likelihood_spec(cfg: RunConfig, data: Dataset, fixed: dict[str, float] | None = None
                    ) -> LikelihoodSpec:
    values = cfg.nominal_values()
    free = [k for k in cfg.uncertain() if not fixed or k not in fixed]
    if fixed:
        values.update(fixed)
    if not free:
        raise ConfigError("parameters: nothing to estimate (no entry has a prior)")
    bounds = cfg.bounds()
    return LikelihoodSpec(data, cfg.model_spec(), cfg.operators(), values, tuple(free),
                          {k: bounds[k] for k in free}, cfg.noise.mode_object(),
                          cfg.prior_object(), cfg.fit.rtol, cfg.fit.atol)


def run_fit(run: Run, spec: LikelihoodSpec) -> tuple[FitResult, dict]:
    seed = run.seed_for(run.cfg.fit.seed)
    extra: dict = {}
    if isinstance(spec.sigma_mode, ProfiledTwo):
        res = lambda_sweep(spec, seed=seed, restarts=max(1, min(run.cfg.fit.restarts, 3)))
        extra = {"lambda_min": res.lambda_min, "sigma_I": res.sigma_I, "sigma_R": res.sigma_R,
                 "lambda_table": [{k: v for k, v in r.items() if k != "theta"}
                                  for r in res.table]}
        return res.fit, extra
    route = "fd" if run.cfg.fit.hessian == "fd" else "jacobian"
    return mle(spec, restarts=run.cfg.fit.restarts, seed=seed, hessian_route=route), extra


def _state_ops(model) -> list[ObservationOperator]:
    return [scaled_state(s) for s in model.state_names]


def _sample_trajectories(run: Run, samples: np.ndarray, names: list[str],
                         times: np.ndarray) -> np.ndarray:
    cfg = run.cfg
    model = cfg.model_spec()
    base = cfg.nominal_values()

    def one(x):
        vals = dict(base)
        vals.update(zip(names, x))
        return integrate(model, model.parameter_vector(vals), times).states

    return np.array(map_ordered(one, list(samples)))


def forward_tables(run: Run, samples: SampleSet, names: list[str], times: np.ndarray,
                   prefix: str) -> dict:
    """Moments, quantile bands and QoI densities of every state over ``samples``."""
    cfg = run.cfg
    fw = cfg.forward
    levels = fw.levels if fw else [0.05, 0.95]
    model = cfg.model_spec()
    states = _sample_trajectories(run, samples.points, names, times)  # (n, T, S)
    mean, var = moments(states, samples.weights)
    band = quantile_band(states.reshape(len(states), -1), levels).reshape(
        (len(levels),) + states.shape[1:])
    rows = []
    for ti, t in enumerate(times):
        for si, s in enumerate(model.state_names):
            rows.append((t, s, mean[ti, si], var[ti, si],
                         *[band[li, ti, si] for li in range(len(levels))]))
    run.out.csv(f"{prefix}_moments.csv",
                ["time", "state", "mean", "variance", *[f"q{lv:g}" for lv in levels]], rows)

    peak_state = fw.peak_state if fw else "I"
    qoi_ops = [peak_time(peak_state), peak_value(peak_state)]
    for t in (fw.states_at if fw else []):
        qoi_ops += [state_at_time(s, t) for s in model.state_names]
    base = cfg.nominal_values()
    qvals = np.empty((len(states), len(qoi_ops)))
    for k, x in enumerate(samples.points):
        vals = dict(base)
        vals.update(zip(names, x))
        theta = model.parameter_vector(vals)
        traj = integrate(model, theta, times)
        qvals[k] = [float(observe(traj, op, theta, model)) for op in qoi_ops]
    pdf_rows, notes = [], []
    for j, op in enumerate(qoi_ops):
        try:
            curve = density(qvals[:, j], method=fw.density if fw else "kde")
        except DegenerateDensityError:
            notes.append(f"{op.name}: degenerate sample, no density")
            continue
        pdf_rows += [(op.name, x, p) for x, p in zip(curve.x, curve.pdf)]
    run.out.csv(f"{prefix}_qoi_pdf.csv", ["qoi", "x", "pdf"], pdf_rows)
    run.out.csv(f"{prefix}_qoi_samples.csv", [op.name for op in qoi_ops], qvals.tolist())
    if run.plot:
        for si, s in enumerate(model.state_names):
            run.out.svg_lines(f"{prefix}_{s}.svg", times, {s: mean[:, si]},
                              title=f"{prefix}: {s}",
                              bands={s: (band[0, :, si], band[-1, :, si])})
    width = band[-1] - band[0]
    return {"mean_band_width": {s: float(width[:, si].mean())
                                for si, s in enumerate(model.state_names)},
            "qoi_mean": {op.name: float(qvals[:, j].mean()) for j, op in enumerate(qoi_ops)},
            "notes": notes}


def _forward_times(cfg: RunConfig) -> np.ndarray:
    if cfg.forward is not None:
        return config_times(cfg.forward.times)
    if cfg.simulate_times is not None:
        return config_times(cfg.simulate_times)
    raise ConfigError("forward.times: a time grid is required")


# -- commands --------------------------------------------------------------------

def cmd_simulate(run: Run) -> dict:
    cfg = run.cfg
    if cfg.simulate_times is None:
        raise ConfigError("simulate_times: a time grid is required")
    times = config_times(cfg.simulate_times)
    model = cfg.model_spec()
    traj = integrate(model, model.parameter_vector(cfg.nominal_values()), times)
    run.out.csv("trajectory.csv", ["time", *model.state_names],
                [(t, *row) for t, row in zip(times, traj.states)])
    if run.plot:
        run.out.svg_lines("trajectory.svg", times,
                          {s: traj.states[:, i] for i, s in enumerate(model.state_names)},
                          title=model.name)
    return {"rows": len(times)}


def cmd_forward(run: Run) -> dict:
    cfg = run.cfg
    times = _forward_times(cfg)
    names = cfg.uncertain()
    sp = cfg.sampling
    if names:
        samples = draw(cfg.priors(), sp.n, sp.scheme, run.seed_for(sp.seed))
    else:
        samples = SampleSet(np.zeros((sp.n, 0)), np.full(sp.n, 1.0 / sp.n), "fixed", 0)
    summary = forward_tables(run, samples, names, times, "forward")
    run.out.json("forward_summary.json", summary)
    return summary


def cmd_sobol(run: Run) -> dict:
    cfg = run.cfg
    if cfg.sobol is None:
        raise ConfigError("sobol: this command needs a 'sobol' block")
    names = cfg.uncertain()
    if not names:
        raise ConfigError("parameters: Sobol indices need at least one prior")
    model = cfg.model_spec()
    ops = _state_ops(model) if cfg.sobol.outputs == "states" else list(cfg.operators())
    times = config_times(cfg.sobol.times)
    res = sobol_over_time(model, ops, cfg.priors(), names, cfg.nominal_values(), times,
                          cfg.sobol.n, run.seed_for(cfg.sobol.seed))
    run.out.csv("sobol.csv", ["time", "output", "param", "principal", "principal_se",
                              "total", "total_se"], sobol_rows(res))
    peak_total = np.nanmax(np.where(np.isnan(res.total), -np.inf, res.total), axis=(1, 2))
    hard = [n for n, v in zip(names, peak_total) if v < cfg.sobol.floor]
    summary = {"max_total_index": dict(zip(names, map(float, peak_total))),
               "hard_to_infer": hard, "floor": cfg.sobol.floor,
               "undefined_points": int(res.undefined.sum())}
    run.out.json("sobol_screening.json", summary)
    if run.plot:
        for j, out in enumerate(res.outputs):
            run.out.svg_lines(f"sobol_total_{out}.svg", times,
                              {n: res.total[i, :, j] for i, n in enumerate(names)},
                              title=f"total Sobol indices, {out}")
    return summary


def fit_outputs(run: Run, spec: LikelihoodSpec, fit: FitResult, extra: dict,
                prefix: str = "fit") -> dict:
    doc = fit.to_dict()
    doc.update(extra)
    sd = np.sqrt(np.maximum(np.diag(fit.covariance), 0.0))
    try:
        doc["correlation"] = correlation_matrix(fit.covariance).tolist()
    except ValueError:
        doc["correlation"] = None
    run.out.json(f"{prefix}.json", doc)
    run.out.csv(f"{prefix}_summary.csv", ["param", "mle", "sd", "lo95", "hi95"],
                [(n, x, s, x - 1.96 * s, x + 1.96 * s)
                 for n, x, s in zip(fit.names, fit.x, sd)])
    preds = spec.predictions(fit.x)
    gof_rows = []
    for name, p, (_, v) in zip(spec.data.names, preds, spec.data.series.values()):
        if len(v):
            g = goodness_of_fit(v, p)
            gof_rows.append((name, g.rmse, g.mae, g.mape, g.mape_skipped))
    run.out.csv(f"{prefix}_gof.csv", ["series", "rmse", "mae", "mape", "mape_skipped"], gof_rows)
    if run.plot:
        grid = spec.data.all_times()
        series = {}
        for name, p, (t, v) in zip(spec.data.names, preds, spec.data.series.values()):
            series[f"{name} fit"] = np.interp(grid, t, p)
            series[f"{name} data"] = np.interp(grid, t, v)
        run.out.svg_lines(f"{prefix}.svg", grid, series, title="fit")
    return doc


def cmd_fit(run: Run) -> dict:
    spec = likelihood_spec(run.cfg, load_data(run))
    fit, extra = run_fit(run, spec)
    doc = fit_outputs(run, spec, fit, extra)
    return {"theta_mle": doc["theta_mle"], "flags": fit.flags}


def profiles(run: Run, spec: LikelihoodSpec, fit: FitResult, prefix: str = "profile") -> dict:
    pc = run.cfg.profile
    params = pc.params or list(spec.free)
    rows, verdicts = [], {}
    for p in params:
        curve = profile_likelihood(spec, fit, p, grid=pc.grids.get(p), n_points=pc.n_points,
                                   full_range=pc.full_range, restarts=pc.restarts,
                                   seed=run.seed_for(run.cfg.fit.seed), alpha=pc.alpha)
        iv = pl_interval(curve)
        rows += curve.rows()
        verdicts[p] = {"identifiable": iv.identifiable, "interval": [iv.lower, iv.upper],
                       "minimum_at": iv.minimum_at, "nll_at_mle": curve.nll_at_mle,
                       "flagged_points": [float(curve.grid[k]) for k in curve.flagged]}
        if run.plot:
            run.out.svg_lines(f"{prefix}_{p}.svg", curve.grid,
                              {"profile": curve.values,
                               "threshold": np.full(curve.grid.size, curve.values.min()
                                                    + curve.threshold - curve.nll_at_mle)},
                              title=f"profile likelihood, {p}", xlabel=p)
    run.out.csv(f"{prefix}.csv", ["param", "grid_value", "pl", "threshold"], rows)
    run.out.json(f"{prefix}_intervals.json", verdicts)
    return verdicts


def cmd_profile(run: Run) -> dict:
    spec = likelihood_spec(run.cfg, load_data(run))
    fit, extra = run_fit(run, spec)
    fit_outputs(run, spec, fit, extra)
    return profiles(run, spec, fit)


def cmd_bootstrap(run: Run) -> dict:
    cfg = run.cfg
    bs = cfg.bootstrap
    if bs is None:
        raise ConfigError("bootstrap: this command needs a 'bootstrap' block")
    if bs.times is not None:
        times = config_times(bs.times)
    elif cfg.data is not None and cfg.data.synthetic is not None:
        times = config_times(cfg.data.synthetic.times)
    else:
        raise ConfigError("bootstrap.times: a time grid is required")
    names = cfg.uncertain()
    table = bootstrap_are(cfg.model_spec(), cfg.operators(), cfg.nominal_values(), times,
                          bs.noise_levels, names, cfg.bounds(), bs.M, bs.n_params_jointly,
                          run.seed_for(None), bs.restarts)
    run.out.csv("are.csv", ["noise_level", "param", "are"], table.rows())
    return {"are": table.are.tolist(), "failures": table.failures.tolist()}


def structural_case(cfg: RunConfig) -> StructuralCase | None:
    """Configured case, or the catalogue entry matching the model and observables."""
    if cfg.structural is not None:
        return StructuralCase(cfg.structural.case, frozenset(cfg.structural.knowns))
    observed = sorted(o.state for o in cfg.observables if o.kind == "scaled_state")
    k_known = cfg.entries()["K"].fixed
    knowns = frozenset({"N_pop"} | ({"K"} if k_known else set()))
    if cfg.model == "sir" and observed == ["I"]:
        return StructuralCase("sir_I_only", knowns)
    if cfg.model == "sir" and observed == ["I", "R"]:
        return StructuralCase("sir_I_and_R", knowns)
    if cfg.model in ("seird", "seirdz") and observed == ["D", "I", "R"]:
        return StructuralCase("seird_IRD", knowns)
    return None


def structural_verdict(cfg: RunConfig, case: StructuralCase) -> dict:
    vals = cfg.nominal_values()
    if cfg.model == "seirdz":
        vals["beta"] = vals["beta1"]
    vals["N_pop"] = cfg.n_pop
    coeffs = structural_coefficients(case, vals)
    verdict = invert_coefficients(case, coeffs, {"K": vals["K"], "N_pop": cfg.n_pop})
    return {"case": case.id, "knowns": sorted(case.knowns),
            "coefficients": dict(zip(case.coefficient_labels, coeffs.tolist())),
            **verdict.to_dict()}


def cmd_structural(run: Run) -> dict:
    case = structural_case(run.cfg)
    if case is None:
        raise ConfigError("structural: no catalogued case matches this model and observables")
    doc = structural_verdict(run.cfg, case)
    run.out.json("structural.json", doc)
    return doc


def time_averaged_width(summary: dict) -> float:
    w = summary["mean_band_width"]
    return float(np.mean(list(w.values()))) if w else math.nan
