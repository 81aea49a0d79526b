"""Experiment orchestration: config schema, gap routes, slopes, emission."""

import hashlib
import json
import os

import numpy as np
import pytest

from torusdiff import grid, harness, interp, semidiscrete
from torusdiff.harness import (ConvergenceReport, ExperimentConfig,
                               SemiDiscreteReport)

# cross-diffusion without reactions: motion rates d + a * (other density)
CONS_MODEL = {"kind": "skt",
              "params": {"d1": 0.8, "d2": 0.9, "a1": 0.3, "a2": 0.2,
                         "rho1": 0.0, "rho2": 0.0,
                         "s11": 0.0, "s12": 0.0, "s21": 0.0, "s22": 0.0}}
SMOOTH_INIT = {"u": {"kind": "fourier", "base": 1.0, "cos": 0.4},
               "v": {"kind": "fourier", "base": 1.0, "sin": 0.3}}


def small_config(**kw):
    base = dict(model=CONS_MODEL, init=SMOOTH_INIT, T=0.05,
                m_grid=[8], n_grid=[32, 64], replicas=4, seed=7,
                n_samples=9, m_ref=64, n_snapshots_ref=17)
    base.update(kw)
    return ExperimentConfig(**base)


# ---------------------------------------------------------------------------
# config schema


def test_config_rejects_indivisible_reference():
    with pytest.raises(ValueError, match="not divisible"):
        small_config(m_grid=[12], m_ref=64)


def test_config_rejects_tiny_grid():
    with pytest.raises(ValueError, match="at least 2"):
        small_config(m_grid=[1])


def test_config_rejects_no_replicas():
    with pytest.raises(ValueError, match="replicas"):
        small_config(replicas=0)


def test_config_rejects_bad_norm_mode():
    with pytest.raises(ValueError, match="norm_mode"):
        small_config(norm_mode="pathwise")


def test_config_rejects_unknown_json_field():
    payload = small_config().to_json()
    payload["grid_sizes"] = [8]
    with pytest.raises(ValueError, match="unknown config fields"):
        ExperimentConfig.from_json(payload)


def test_config_json_roundtrip_and_digest():
    cfg = small_config()
    clone = ExperimentConfig.from_json(json.loads(json.dumps(cfg.to_json())))
    assert clone == cfg
    assert clone.digest() == cfg.digest()
    assert clone.digest() != small_config(seed=8).digest()


def test_sample_dt_overrides_sample_count():
    cfg = small_config(T=0.1, sample_dt=0.025)
    assert cfg.n_samples == 5
    with pytest.raises(ValueError, match="sample_dt"):
        small_config(sample_dt=-0.1)


def test_build_model_and_init_specs():
    mdl = harness.build_model(CONS_MODEL)
    assert mdl.rho0 == 0.0
    aff = harness.build_model({"kind": "affine", "mu1": [1.0, 0.2],
                               "d1": [0.5, 0.0, 0.0]})
    assert aff.affine is not None
    assert aff.affine.d1 == (0.5, 0.0, 0.0)
    with pytest.raises(ValueError, match="unknown model kind"):
        harness.build_model({"kind": "pde"})
    u0, v0 = harness.build_initial(
        {"u": {"kind": "constant", "level": 0.5},
         "v": {"kind": "fourier", "base": 1.0, "sin": 0.2, "mode": 2}})
    x = np.arange(8) / 8
    assert np.all(u0(x) == 0.5)
    assert v0(x) == pytest.approx(1.0 + 0.2 * np.sin(4 * np.pi * x))
    with pytest.raises(ValueError, match="initial-data kind"):
        harness.build_initial({"u": {"kind": "spline"}, "v": {}})


def test_reference_snapshot_roundtrip(tmp_path):
    cfg = small_config()
    ref = cfg.load_reference()
    path = tmp_path / "ref.bin"
    ref.save(path)
    cfg2 = small_config(ref_path=str(path))
    loaded = cfg2.load_reference()
    assert loaded.m_ref == ref.m_ref
    assert np.array_equal(loaded.u, ref.u)
    with pytest.raises(ValueError, match="does not match"):
        small_config(ref_path=str(path), m_grid=[4], m_ref=32,
                     n_snapshots_ref=17).load_reference()


# ---------------------------------------------------------------------------
# slope fitting


def test_weighted_slope_exact_power_law():
    rng = np.random.Generator(np.random.Philox(key=1))
    ns = [64, 128, 256, 512]
    errs = np.array([[3.0 / n] * 5 for n in ns])
    out = harness._slope_with_bootstrap(ns, errs, rng)
    assert out["slope"] == pytest.approx(-1.0, abs=1e-12)
    assert out["ci_low"] == pytest.approx(-1.0, abs=1e-12)
    assert out["ci_high"] == pytest.approx(-1.0, abs=1e-12)


def test_weighted_slope_recovers_rate_under_noise():
    rng = np.random.Generator(np.random.Philox(key=2))
    noise = np.random.Generator(np.random.Philox(key=3))
    ns = np.array([32, 64, 128, 256])
    errs = (1.0 / np.sqrt(ns))[:, None] * noise.lognormal(
        0.0, 0.15, size=(4, 48))
    out = harness._slope_with_bootstrap(ns, errs, rng)
    assert out["ci_low"] <= out["slope"] <= out["ci_high"]
    assert out["slope"] == pytest.approx(-0.5, abs=0.15)


# ---------------------------------------------------------------------------
# stochastic convergence study


@pytest.fixture(scope="module")
def small_report():
    return harness.run_convergence(small_config(), workers=1)


def test_convergence_cells_complete(small_report):
    assert [(c["m"], c["n"]) for c in small_report.cells] == [(8, 32),
                                                              (8, 64)]
    for cell in small_report.cells:
        assert not cell["skipped"]
        assert cell["replicas"] == 4
        assert cell["mean_err"] > 0.0
        assert cell["ci95"] >= 0.0
        assert cell["mean_err_alt"] > 0.0
        assert cell["d0"] >= 0.0


def test_convergence_error_shrinks_with_population(small_report):
    a = small_report.cell(8, 32)["mean_err"]
    b = small_report.cell(8, 64)["mean_err"]
    assert b < a


def test_convergence_slope_fit_present(small_report):
    info = small_report.slopes["per_m"]["8"]
    assert info["ci_low"] <= info["slope"] <= info["ci_high"]
    assert info["slope"] < 0.0


def test_convergence_worker_count_invariance(small_report):
    two = harness.run_convergence(small_config(), workers=2)
    assert json.dumps(two.to_json(), sort_keys=True) == \
        json.dumps(small_report.to_json(), sort_keys=True)


def test_event_exact_route_selector():
    cfg = small_config(norm_mode="event-exact", n_grid=[32], replicas=2)
    rep = harness.run_convergence(cfg, workers=1)
    cfg_s = small_config(norm_mode="sampled", n_grid=[32], replicas=2)
    rep_s = harness.run_convergence(cfg_s, workers=1)
    cell, cell_s = rep.cell(8, 32), rep_s.cell(8, 32)
    assert rep.route == "event-exact"
    assert cell["mean_err"] == pytest.approx(cell_s["mean_err_alt"],
                                             rel=1e-12)
    assert cell["mean_err_alt"] == pytest.approx(cell_s["mean_err"],
                                                 rel=1e-12)


def test_zero_initial_data_gives_zero_errors():
    cfg = ExperimentConfig(
        model=CONS_MODEL,
        init={"u": {"kind": "constant", "level": 0.0},
              "v": {"kind": "constant", "level": 0.0}},
        T=0.02, m_grid=[4], n_grid=[8], replicas=2, n_samples=5,
        m_ref=16, n_snapshots_ref=9)
    rep = harness.run_convergence(cfg, workers=1)
    cell = rep.cell(4, 8)
    assert cell["mean_err"] == 0.0
    assert cell["mean_err_alt"] == 0.0
    assert cell["d0"] == 0.0


def test_rate_overflow_marks_cell_skipped():
    cfg = ExperimentConfig(
        model={"kind": "affine", "mu1": [1.0, 0.0], "mu2": [1.0, 0.0],
               "b1": [8.0, 0.0, 0.0], "rho0": 8.0},
        init={"u": {"kind": "constant", "level": 1.0},
              "v": {"kind": "constant", "level": 1.0}},
        T=2.0, m_grid=[4], n_grid=[16], replicas=2, n_samples=5,
        m_ref=16, n_snapshots_ref=9, rate_budget=5e3)
    rep = harness.run_convergence(cfg, workers=1)
    cell = rep.cell(4, 16)
    assert cell["skipped"]
    assert "rate" in cell["reason"]
    assert rep.slopes["per_m"] == {}
    csv_text = harness._convergence_csv(rep)
    assert csv_text.splitlines()[1].endswith(f"1,{cell['reason']}")


def test_report_rejects_negative_errors():
    with pytest.raises(ValueError, match="negative"):
        ConvergenceReport(config_digest="x", route="sampled",
                          cells=[{"m": 4, "n": 8, "skipped": False,
                                  "mean_err": -1.0}])
    with pytest.raises(ValueError, match="negative"):
        SemiDiscreteReport(config_digest="x", cells=[{"m": 4, "err": -0.1}])


# ---------------------------------------------------------------------------
# deterministic refinement study


def test_semidiscrete_errors_decrease():
    cfg = ExperimentConfig(model=CONS_MODEL, init=SMOOTH_INIT, T=0.05,
                           m_grid=[8, 16, 32], n_grid=[1], replicas=1,
                           n_samples=9, m_ref=64, n_snapshots_ref=17)
    rep = harness.run_semidiscrete_convergence(cfg)
    assert rep.strictly_decreasing()
    errs = [c["err"] for c in rep.cells]
    # second-order bias means roughly 16x drop per doubling in the square
    assert errs[0] / errs[1] > 8.0
    assert errs[1] / errs[2] > 8.0


def test_semidiscrete_reference_grid_is_exact():
    cfg = ExperimentConfig(model=CONS_MODEL, init=SMOOTH_INIT, T=0.05,
                           m_grid=[64], n_grid=[1], replicas=1,
                           n_samples=9, m_ref=64, n_snapshots_ref=17)
    rep = harness.run_semidiscrete_convergence(cfg)
    assert rep.cells[0]["err"] < 1e-16


def test_semidiscrete_perturbed_init_floor():
    cfg = ExperimentConfig(model=CONS_MODEL, init=SMOOTH_INIT, T=0.05,
                           m_grid=[16], n_grid=[1], replicas=1,
                           n_samples=9, m_ref=64, n_snapshots_ref=17)
    eps = 0.05
    matched = harness.run_semidiscrete_convergence(cfg)
    perturbed = harness.run_semidiscrete_convergence(cfg, perturb_eps=eps)
    plan = grid.SpectralPlan(64)
    bump = eps * np.cos(2 * np.pi * np.arange(64) / 64)
    dual_sq = grid.h_minus1_norm_sq(bump, plan)
    assert perturbed.cells[0]["err"] > 10.0 * matched.cells[0]["err"]
    assert perturbed.cells[0]["err"] >= 0.25 * dual_sq


# ---------------------------------------------------------------------------
# emission


def _hashes(paths):
    out = {}
    for p in paths:
        with open(p, "rb") as fh:
            out[os.path.basename(p)] = hashlib.sha256(fh.read()).hexdigest()
    return out


def test_emission_deterministic_bytes(small_report, tmp_path):
    d1, d2 = tmp_path / "a", tmp_path / "b"
    p1 = harness.emit_outputs(small_report, ["csv", "json", "svg"], d1)
    p2 = harness.emit_outputs(small_report, ["csv", "json", "svg"], d2)
    assert [os.path.basename(p) for p in p1] == \
        [os.path.basename(p) for p in p2]
    assert _hashes(p1) == _hashes(p2)
    assert {os.path.basename(p) for p in p1} == {
        "convergence.csv", "convergence.json", "convergence_m8.svg"}


def test_emission_csv_reloads(small_report, tmp_path):
    (path,) = harness.emit_outputs(small_report, ["csv"], tmp_path)
    rows = open(path).read().splitlines()
    assert rows[0].startswith("m,n,replicas,mean_err")
    first = rows[1].split(",")
    assert float(first[3]) == small_report.cells[0]["mean_err"]


def test_emission_empty_report_header_only(tmp_path):
    rep = ConvergenceReport(config_digest="x", route="sampled", cells=[])
    (path,) = harness.emit_outputs(rep, ["csv"], tmp_path)
    assert open(path).read() == \
        "m,n,replicas,mean_err,ci95,mean_err_alt,d0,skipped,reason\n"


def test_emission_rejects_unknown_format(small_report, tmp_path):
    with pytest.raises(ValueError, match="unknown formats"):
        harness.emit_outputs(small_report, ["csv", "xml"], tmp_path)


def test_default_workers_env(monkeypatch):
    monkeypatch.delenv(harness.WORKERS_ENV, raising=False)
    assert harness.default_workers() == 1
    monkeypatch.setenv(harness.WORKERS_ENV, "6")
    assert harness.default_workers() == 6
    monkeypatch.setenv(harness.WORKERS_ENV, "zero")
    assert harness.default_workers() == 1
