import csv
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from identikit.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SIR_FIXED = {
    "model": "sir",
    "initial_conditions": {"S": 0.95, "I": 0.05, "R": 0.0},
    "parameters": {"beta": 0.3, "r": 0.1},
    "simulate_times": {"start": 0, "stop": 100, "n": 101},
}

SIR_BOX = {
    "model": "sir",
    "initial_conditions": {"S": 0.95, "I": 0.05, "R": 0.0},
    "parameters": {
        "beta": {"prior": {"kind": "uniform", "params": [0.25, 0.35]}},
        "r": {"prior": {"kind": "uniform", "params": [0.06, 0.18]}},
    },
    "sampling": {"scheme": "lhs", "n": 120, "seed": 4},
    "forward": {"times": {"start": 0, "stop": 100, "n": 101}, "states_at": [20]},
}


def write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_simulate_columns_and_rows(tmp_path):
    out = tmp_path / "out"
    assert main(["simulate", "--config", write(tmp_path, SIR_FIXED), "--out", str(out)]) == 0
    rows = read_csv(out / "trajectory.csv")
    assert rows[0] == ["time", "S", "I", "R"]
    assert len(rows) - 1 == 101
    assert float(rows[1][2]) == pytest.approx(0.05)


def test_simulate_seirdz_has_five_states(tmp_path):
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(CONFIGS / "seirdz_reduced.json"),
                 "--out", str(out)]) == 0
    rows = read_csv(out / "trajectory.csv")
    assert rows[0] == ["time", "S", "E", "I", "R", "D"]
    t = np.array([float(r[0]) for r in rows[1:]])
    s = np.array([float(r[1]) for r in rows[1:]])
    e = np.array([float(r[2]) for r in rows[1:]])
    i = np.array([float(r[3]) for r in rows[1:]])
    # the flow S -> E runs at beta1 before day 15 and beta1 - z after it
    k = int(np.searchsorted(t, 15.0))
    before = -(s[k] - s[k - 1]) / (t[k] - t[k - 1])
    after = -(s[k + 1] - s[k]) / (t[k + 1] - t[k])
    assert after / before < 0.5
    assert np.all(e >= 0) and np.all(i >= 0)


def test_missing_initial_condition_exits_2(tmp_path, capsys):
    doc = json.loads(json.dumps(SIR_FIXED))
    del doc["initial_conditions"]["I"]
    assert main(["simulate", "--config", write(tmp_path, doc), "--out",
                 str(tmp_path / "o")]) == 2
    assert "initial_conditions.I" in capsys.readouterr().err


def test_unknown_field_exits_2(tmp_path):
    doc = dict(SIR_FIXED, bogus=1)
    assert main(["simulate", "--config", write(tmp_path, doc), "--out",
                 str(tmp_path / "o")]) == 2


def test_forward_peak_time_support_and_byte_identical_reruns(tmp_path, monkeypatch):
    cfg = write(tmp_path, SIR_BOX)
    digests = []
    for threads, sub in (("1", "a"), ("2", "b"), ("1", "c")):
        monkeypatch.setenv("IDENTIKIT_THREADS", threads)
        out = tmp_path / sub
        assert main(["forward", "--config", cfg, "--out", str(out)]) == 0
        digests.append({p.name: hashlib.sha256(p.read_bytes()).hexdigest()
                        for p in sorted(out.iterdir())})
    assert digests[0] == digests[1] == digests[2]
    rows = read_csv(tmp_path / "a" / "forward_qoi_samples.csv")
    j = rows[0].index("peak_time_I")
    peaks = np.array([float(r[j]) for r in rows[1:]])
    assert peaks.min() >= 5.0 and peaks.max() <= 40.0


def test_seed_override_changes_samples(tmp_path):
    cfg = write(tmp_path, SIR_BOX)
    main(["forward", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["forward", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "99"])
    a = (tmp_path / "a" / "forward_qoi_samples.csv").read_bytes()
    b = (tmp_path / "b" / "forward_qoi_samples.csv").read_bytes()
    assert a != b


def test_degenerate_priors_give_zero_width_bands(tmp_path):
    doc = json.loads(json.dumps(SIR_BOX))
    doc["parameters"] = {"beta": 0.3, "r": 0.1}
    out = tmp_path / "o"
    assert main(["forward", "--config", write(tmp_path, doc), "--out", str(out)]) == 0
    summary = json.loads((out / "forward_summary.json").read_text())
    assert all(w == 0.0 for w in summary["mean_band_width"].values())


def test_manifest_hashes_every_file(tmp_path):
    out = tmp_path / "o"
    main(["simulate", "--config", write(tmp_path, SIR_FIXED), "--out", str(out), "--plot"])
    manifest = json.loads((out / "manifest.json").read_text())
    names = {e["file"] for e in manifest["files"]}
    assert names == {p.name for p in out.iterdir()} - {"manifest.json"}
    for e in manifest["files"]:
        assert hashlib.sha256((out / e["file"]).read_bytes()).hexdigest() == e["sha256"]


def test_structural_combinations_for_i_only(tmp_path):
    out = tmp_path / "o"
    assert main(["structural", "--config", str(CONFIGS / "sir_I_only_K_free.json"),
                 "--out", str(out)]) == 0
    doc = json.loads((out / "structural.json").read_text())
    assert doc["verdict"] == "combinations"
    assert doc["identified"] == ["r", "K*beta"]


def test_workflow_halts_at_structural_gate(tmp_path):
    out = tmp_path / "o"
    assert main(["workflow", "--config", str(CONFIGS / "sir_I_only_K_free.json"),
                 "--out", str(out)]) == 3
    report = json.loads((out / "workflow_report.json").read_text())
    assert report["halted_at"] == "structural_gate"
    assert [s["stage"] for s in report["stages"]] == [
        "sobol_screening", "structural_gate", "practical_gate", "inverse_uq",
        "posterior_forward_uq"]
    assert any("K*beta" in f for f in report["flags"])
    assert all(s["status"] == "skipped" for s in report["stages"][2:])


def test_fit_two_series_sir(tmp_path):
    out = tmp_path / "o"
    assert main(["fit", "--config", str(CONFIGS / "sir_inverse.json"), "--out", str(out)]) == 0
    fit = json.loads((out / "fit.json").read_text())
    theta = fit["theta_mle"]
    assert abs(theta["beta"] - 0.29) <= 0.02 and abs(theta["r"] - 0.09) <= 0.01


def test_workflow_two_series_narrows_bands(tmp_path):
    out = tmp_path / "o"
    assert main(["workflow", "--config", str(CONFIGS / "sir_inverse.json"),
                 "--out", str(out)]) == 0
    report = json.loads((out / "workflow_report.json").read_text())
    assert report["halted_at"] is None
    post = report["stages"][-1]
    assert post["stage"] == "posterior_forward_uq" and post["status"] == "ok"
    assert post["narrower"] and post["posterior_band_width"] < post["prior_band_width"]


def test_missing_data_file_exits_2(tmp_path):
    doc = dict(SIR_FIXED, data={"csv": "missing.csv"},
               observables=[{"kind": "scaled_state", "state": "I"}])
    assert main(["fit", "--config", write(tmp_path, doc), "--out", str(tmp_path / "o")]) == 2


def test_runtime_failure_exits_1(tmp_path, monkeypatch):
    import identikit.cli as cli

    def boom(run):
        raise RuntimeError("integration failed")

    monkeypatch.setitem(cli.COMMANDS, "simulate", boom)
    assert main(["simulate", "--config", write(tmp_path, SIR_FIXED), "--out",
                 str(tmp_path / "o")]) == 1


def test_workflow_records_failed_stage(tmp_path, monkeypatch):
    import identikit.workflow as wf

    def boom(*a, **k):
        raise RuntimeError("profile blew up")

    monkeypatch.setattr(wf, "profiles", boom)
    out = tmp_path / "o"
    doc = json.loads((CONFIGS / "sir_inverse.json").read_text())
    del doc["sobol"]
    assert main(["workflow", "--config", write(tmp_path, doc), "--out", str(out)]) == 1
    report = json.loads((out / "workflow_report.json").read_text())
    status = {s["stage"]: s["status"] for s in report["stages"]}
    assert status == {"sobol_screening": "skipped", "structural_gate": "ok",
                      "practical_gate": "failed", "inverse_uq": "skipped",
                      "posterior_forward_uq": "skipped"}


def test_fit_from_csv_file(tmp_path):
    sim = tmp_path / "sim"
    main(["simulate", "--config", write(tmp_path, SIR_FIXED), "--out", str(sim)])
    rows = read_csv(sim / "trajectory.csv")[1:]
    lines = ["time,I,R"] + [f"{r[0]},{r[2]},{r[3]}" for r in rows[1:41]]
    (tmp_path / "cases.csv").write_text("\n".join(lines) + "\n")
    doc = dict(SIR_FIXED, parameters={
        "beta": {"prior": {"kind": "uniform", "params": [0.1, 0.6]}},
        "r": {"prior": {"kind": "uniform", "params": [0.02, 0.3]}}},
        observables=[{"kind": "scaled_state", "state": "I"},
                     {"kind": "scaled_state", "state": "R"}],
        data={"csv": "cases.csv"}, fit={"restarts": 5})
    out = tmp_path / "o"
    assert main(["fit", "--config", write(tmp_path, doc), "--out", str(out)]) == 0
    theta = json.loads((out / "fit.json").read_text())["theta_mle"]
    assert theta["beta"] == pytest.approx(0.3, abs=1e-3)
    assert theta["r"] == pytest.approx(0.1, abs=1e-3)
