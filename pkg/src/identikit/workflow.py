"""Staged identifiability-first UQ workflow.

Stages, in order: Sobol screening, structural gate, practical gate (profile
likelihood), inverse UQ (Fisher-Gaussian posterior), posterior-based forward
UQ.  A failed gate stops the run and records why later stages were skipped.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from identikit.commands import (GateHalt, Run, cmd_sobol, fit_outputs, forward_tables,
                                likelihood_spec, load_data, profiles, run_fit,
                                structural_case, structural_verdict, time_averaged_width,
                                _forward_times)
from identikit.fit import gaussian_posterior
from identikit.sample import draw, draw_posterior

STAGES = ("sobol_screening", "structural_gate", "practical_gate", "inverse_uq",
          "posterior_forward_uq")

MCMC_NOTE = ("only parameter combinations are structurally identifiable; a sampler over the "
             "non-identifiable manifold (MCMC) would be the next step and is outside this "
             "tool's scope. Reparameterize in the identified combinations or fix parameters "
             "from independent studies.")


@dataclass
class WorkflowReport:
    stages: list[dict] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    manifest: list[str] = field(default_factory=list)
    halted_at: str | None = None

    def record(self, name: str, status: str, **details) -> None:
        self.stages.append({"stage": name, "status": status, **details})

    def skip_rest(self, after: str, reason: str) -> None:
        for name in STAGES[STAGES.index(after) + 1:]:
            self.record(name, "skipped", reason=reason)

    def to_dict(self) -> dict:
        return {"stages": self.stages, "flags": self.flags, "halted_at": self.halted_at,
                "manifest": self.manifest}


def cmd_workflow(run: Run) -> WorkflowReport:
    rep = WorkflowReport()
    try:
        _stages(run, rep)
    except Exception as e:
        failed = STAGES[len(rep.stages)]
        rep.record(failed, "failed", error=f"{type(e).__name__}: {e}")
        rep.skip_rest(failed, f"{failed} failed")
        raise
    finally:
        rep.manifest = sorted(run.out.files + ["workflow_report.json"])
        run.out.json("workflow_report.json", rep.to_dict())
    if rep.halted_at is not None:
        raise GateHalt(f"workflow halted at {rep.halted_at}")
    return rep


def _stages(run: Run, rep: WorkflowReport) -> None:
    cfg = run.cfg

    # 1. Sobol screening
    if cfg.sobol is None:
        rep.record("sobol_screening", "skipped", reason="no 'sobol' block in the config")
    else:
        s = cmd_sobol(run)
        rep.record("sobol_screening", "ok", hard_to_infer=s["hard_to_infer"],
                   max_total_index=s["max_total_index"])
        if s["hard_to_infer"]:
            rep.flags.append(f"hard to infer (total Sobol index below {s['floor']}): "
                             + ", ".join(s["hard_to_infer"]))

    # 2. structural gate
    case = structural_case(cfg)
    if case is None:
        rep.record("structural_gate", "skipped",
                   reason="no catalogued input-output case matches; assuming identifiable")
    else:
        verdict = structural_verdict(cfg, case)
        run.out.json("structural.json", verdict)
        if verdict["verdict"] == "combinations":
            rep.record("structural_gate", "halted", case=case.id,
                       identified=verdict["identified"], guidance=MCMC_NOTE)
            rep.halted_at = "structural_gate"
            rep.flags.append("structurally non-identifiable: only "
                             + ", ".join(verdict["identified"]) + " can be estimated")
            rep.skip_rest("structural_gate", "structural non-identifiability")
            return
        rep.record("structural_gate", "ok", case=case.id, verdict="unique")

    # 3. practical gate
    data = load_data(run)
    spec = likelihood_spec(cfg, data)
    fit, extra = run_fit(run, spec)
    verdicts = profiles(run, spec, fit, "profile")
    bad = [p for p, v in verdicts.items() if not v["identifiable"]]
    if fit.ill_conditioned:
        rep.flags.append("Fisher information is ill-conditioned")
    if bad:
        remedy = ("fix the listed parameters from independent studies, or re-run with "
                  "workflow.hierarchical=true to fix them at their first-pass estimates; "
                  "acquiring more data (longer observation window) also helps")
        if not cfg.workflow.hierarchical:
            rep.record("practical_gate", "halted", non_identifiable=bad, remedies=remedy,
                       profiles=verdicts)
            rep.halted_at = "practical_gate"
            rep.flags.append("practically non-identifiable: " + ", ".join(bad))
            rep.skip_rest("practical_gate", "practical non-identifiability")
            return
        fixed = {p: float(fit.x[fit.names.index(p)]) for p in bad}
        if len(fixed) == len(spec.free):
            rep.record("practical_gate", "halted", non_identifiable=bad,
                       remedies="no parameter is identifiable; acquire more data")
            rep.halted_at = "practical_gate"
            rep.skip_rest("practical_gate", "practical non-identifiability")
            return
        spec = likelihood_spec(cfg, data, fixed)
        fit, extra = run_fit(run, spec)
        rep.record("practical_gate", "ok", non_identifiable=bad, fixed_at_first_pass=fixed,
                   profiles=verdicts)
    else:
        rep.record("practical_gate", "ok", profiles=verdicts)

    # 4. inverse UQ
    doc = fit_outputs(run, spec, fit, extra, "posterior_fit")
    rep.record("inverse_uq", "ok", theta_mle=doc["theta_mle"], sigma_hat=doc["sigma_hat"],
               covariance=doc["covariance"], flags=fit.flags)

    # 5. posterior-based forward UQ, compared with the prior-based one
    times = _forward_times(cfg)
    sp = cfg.sampling
    seed = run.seed_for(sp.seed)
    post = gaussian_posterior(fit, {k: spec.bounds[k] for k in fit.names})
    post_samples = draw_posterior(post, sp.n, seed)
    post_sum = forward_tables(run, post_samples, list(fit.names), times, "posterior_forward")
    uncertain = cfg.uncertain()
    prior_samples = draw(cfg.priors(), sp.n, sp.scheme, seed)
    prior_sum = forward_tables(run, prior_samples, uncertain, times, "prior_forward")
    w_post, w_prior = time_averaged_width(post_sum), time_averaged_width(prior_sum)
    rep.record("posterior_forward_uq", "ok", posterior_band_width=w_post,
               prior_band_width=w_prior, narrower=bool(np.isfinite(w_post) and w_post < w_prior))
