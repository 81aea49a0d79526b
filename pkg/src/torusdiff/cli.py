"""Command-line front end.

Every subcommand reads one JSON config document, writes its artifacts under
the chosen output directory together with a manifest (inputs, versions,
content hashes), prints a one-line JSON status, and exits 0 exactly when
every check it ran passed its declared tolerance.  Failures are returned as
a machine-readable list, never as prose.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__, analytics, grid, harness, particle, semidiscrete
from .harness import ExperimentConfig

# Config sections consumed by individual subcommands, not the experiment
# schema itself.
EXTRA_SECTIONS = ("duality", "ld", "checks")
DEFAULT_FORMATS = "csv,json"

# Exact-identity tolerances used by the norms subcommand.
SPECTRUM_TOL = 1e-9
JUMP_IDENTITY_TOL = 1e-12

# Pathwise bookkeeping tolerances used by the simulate subcommand.
MART_CONSISTENCY_TOL = 1e-8
H_IDENTITY_TOL = 1e-8

# Deterministic mass-envelope constant accepted by the ode subcommand.
ENVELOPE_LIMIT = 2.0


def _sha256_bytes(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()


def _sha256_file(path) -> str:
    with open(path, "rb") as fh:
        return _sha256_bytes(fh.read())


def _versions() -> dict:
    import matplotlib
    import scipy
    return {"package": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__,
            "engines": list(particle.available_engines())}


def load_config(path):
    """(experiment payload, subcommand extras) from one JSON document."""
    with open(path) as fh:
        payload = json.load(fh)
    if not isinstance(payload, dict):
        raise ValueError("config must be a JSON object")
    extras = {k: payload.pop(k) for k in list(payload)
              if k in EXTRA_SECTIONS}
    return payload, extras


def write_manifest(out_dir, command, config_path, digest, seed,
                   files, failures) -> str:
    """Record inputs, library versions, and output hashes next to the data."""
    manifest = {
        "command": command,
        "config_path": os.path.abspath(config_path),
        "config_sha256": _sha256_file(config_path),
        "config_digest": digest,
        "seed": seed,
        "versions": _versions(),
        "outputs": {os.path.basename(p): _sha256_file(p)
                    for p in sorted(files)},
        "n_failures": len(failures),
        "failures": failures,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return path


def _fail(check, limit, value, **where) -> dict:
    entry = {"check": check, "limit": limit, "value": value}
    entry.update(where)
    return entry


# ---------------------------------------------------------------------------
# simulate


def _sim_job(payload: dict):
    cfg = ExperimentConfig.from_json(payload["config"])
    mdl = cfg.build_model()
    u0, v0 = cfg.build_init()
    state = particle.init_particles(mdl, u0, v0, payload["m"], payload["n"])
    return particle.run(state, mdl, cfg.T, seed=cfg.seed,
                        replica=payload["replica"],
                        n_samples=cfg.n_samples)


def cmd_simulate(cfg, extras, out_dir, workers, formats):
    m, n = cfg.m_grid[0], cfg.n_grid[0]
    jobs = [{"config": cfg.to_json(), "m": m, "n": n, "replica": r}
            for r in range(cfg.replicas)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(_sim_job, jobs, chunksize=1))
    else:
        traces = [_sim_job(job) for job in jobs]

    files = []
    failures = []
    summaries = []
    for r, trace in enumerate(traces):
        if "csv" in formats:
            path = os.path.join(out_dir, f"path_r{r}.csv")
            particle.export_csv(trace, path, replica=r)
            files.append(path)
        summaries.append(particle.summary_dict(trace))
        resid = trace.count_identity_residual()
        if resid != 0:
            failures.append(_fail("count_identity", 0, resid, replica=r))
        if trace.tracker is not None:
            hres = trace.tracker.h_identity_residual()
            if hres > H_IDENTITY_TOL:
                failures.append(_fail("h_identity", H_IDENTITY_TOL,
                                      hres, replica=r))
            mres = trace.mart_consistency()
            if mres > MART_CONSISTENCY_TOL:
                failures.append(_fail("martingale_consistency",
                                      MART_CONSISTENCY_TOL, mres, replica=r))
    if "json" in formats:
        path = os.path.join(out_dir, "simulate_summary.json")
        with open(path, "w") as fh:
            json.dump({"m": m, "n": n, "replicas": summaries}, fh,
                      sort_keys=True, indent=1)
            fh.write("\n")
        files.append(path)
    return files, failures


# ---------------------------------------------------------------------------
# ode


def cmd_ode(cfg, extras, out_dir, workers, formats):
    mdl = cfg.build_model()
    u0, v0 = cfg.build_init()
    m = cfg.m_grid[0]
    st0 = semidiscrete.SemiDiscreteState(
        semidiscrete._initial_values(u0, m),
        semidiscrete._initial_values(v0, m), 0.0)
    sol = semidiscrete.integrate(st0, mdl, cfg.T, n_snapshots=cfg.n_samples)

    files = []
    failures = []
    if "csv" in formats:
        path = os.path.join(out_dir, "ode_path.csv")
        lines = ["t,species,site,value"]
        for i, t in enumerate(sol.times):
            for species, rows in ((1, sol.u), (2, sol.v)):
                for j in range(m):
                    lines.append(f"{float(t)!r},{species},{j},"
                                 f"{float(rows[i][j])!r}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        files.append(path)
    if "json" in formats:
        path = os.path.join(out_dir, "ode_diagnostics.json")
        diag = sol.diagnostics
        with open(path, "w") as fh:
            json.dump({"m": m, "T": cfg.T, "n_steps": diag.n_steps,
                       "n_clipped_sites": diag.n_clipped_sites,
                       "sup_l1_u": diag.sup_l1_u, "sup_l1_v": diag.sup_l1_v,
                       "envelope_c_u": diag.envelope_c_u,
                       "envelope_c_v": diag.envelope_c_v},
                      fh, sort_keys=True, indent=1)
            fh.write("\n")
        files.append(path)

    for name, val in (("envelope_c_u", sol.diagnostics.envelope_c_u),
                      ("envelope_c_v", sol.diagnostics.envelope_c_v)):
        if val > ENVELOPE_LIMIT:
            failures.append(_fail(name, ENVELOPE_LIMIT, val, m=m))
    low = float(min(sol.u.min(), sol.v.min()))
    if low < 0.0:
        failures.append(_fail("nonnegativity", 0.0, low, m=m))
    return files, failures


# ---------------------------------------------------------------------------
# convergence


def cmd_converge(cfg, extras, out_dir, workers, formats):
    report = harness.run_convergence(cfg, workers=workers)
    files = harness.emit_outputs(report, formats, out_dir)
    failures = []
    for cell in report.cells:
        if cell.get("skipped"):
            failures.append(_fail("cell_skipped", None, cell["reason"],
                                  m=cell["m"], n=cell["n"]))
    slope_in = extras.get("checks", {}).get("slope_in")
    if slope_in is not None:
        lo, hi = float(slope_in[0]), float(slope_in[1])
        for mkey, info in sorted(report.slopes.get("per_m", {}).items()):
            if not lo <= info["slope"] <= hi:
                failures.append(_fail("slope_in", [lo, hi], info["slope"],
                                      m=int(mkey)))
    return files, failures


def cmd_sd_converge(cfg, extras, out_dir, workers, formats):
    report = harness.run_semidiscrete_convergence(cfg)
    files = harness.emit_outputs(report, formats, out_dir)
    failures = []
    if len(report.cells) > 1 and not report.strictly_decreasing():
        failures.append(_fail("strictly_decreasing", True,
                              [c["err"] for c in report.cells]))
    return files, failures


# ---------------------------------------------------------------------------
# duality


def random_duality_instance(m: int, T: float, rng):
    """One random smooth instance of the dual evolution with optional jump."""
    x = np.arange(m) / m
    phase = rng.uniform(0, 1, 6)
    amp = rng.uniform(0.1, 0.4, 4)

    def mu(t):
        return 0.6 + amp[0] * np.sin(2 * np.pi * (x - phase[0])) \
            * np.cos(t + phase[1])

    def f(t):
        return amp[1] * np.cos(2 * np.pi * (x - phase[2])) * np.sin(3 * t)

    def r(t):
        return amp[2] * np.sin(4 * np.pi * (x - phase[3])) \
            * np.cos(2 * t + phase[4])

    z0 = amp[3] * np.sin(2 * np.pi * (x - phase[5]))
    jumps = None
    if rng.random() < 0.5:
        jumps = [(float(rng.uniform(0.1 * T, 0.8 * T)),
                  rng.normal(size=m) * 0.05)]
    return mu, f, r, z0, jumps


def duality_trials(m: int, T: float, instances: int, seed: int) -> list:
    """Evaluate the duality inequality on random instances; returns row dicts."""
    plan = grid.SpectralPlan(m)
    rows = []
    for i in range(instances):
        rng = np.random.Generator(np.random.Philox(key=(seed << 32) | i))
        mu, f, r, z0, jumps = random_duality_instance(m, T, rng)
        path = semidiscrete.kolmogorov_solve(mu, f, r, z0, T, jumps=jumps)
        rep = semidiscrete.duality_check(path, plan)
        rows.append({"instance": i, "lhs": rep.lhs, "rhs": rep.rhs,
                     "margin": rep.rhs - rep.lhs, "passed": bool(rep.passed),
                     "with_jump": jumps is not None})
    return rows


def cmd_duality(cfg, extras, out_dir, workers, formats):
    opts = extras.get("duality", {})
    m = int(opts.get("m", 16))
    T = float(opts.get("T", 0.5))
    instances = int(opts.get("instances", 100))
    rows = duality_trials(m, T, instances, cfg.seed)

    files = []
    if "csv" in formats:
        path = os.path.join(out_dir, "duality.csv")
        lines = ["instance,lhs,rhs,margin,passed,with_jump"]
        for row in rows:
            lines.append(f"{row['instance']},{row['lhs']!r},{row['rhs']!r},"
                         f"{row['margin']!r},{int(row['passed'])},"
                         f"{int(row['with_jump'])}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        files.append(path)
    if "json" in formats:
        path = os.path.join(out_dir, "duality.json")
        with open(path, "w") as fh:
            json.dump({"m": m, "T": T, "instances": rows}, fh,
                      sort_keys=True, indent=1)
            fh.write("\n")
        files.append(path)

    failures = [_fail("duality_inequality", 0.0, row["margin"],
                      instance=row["instance"])
                for row in rows if not row["passed"]]
    return files, failures


# ---------------------------------------------------------------------------
# large deviations


def cmd_ld(cfg, extras, out_dir, workers, formats):
    opts = extras.get("ld", {})
    epsilon = float(opts.get("epsilon", 0.3))
    k_grid = [float(k) for k in opts.get("k_grid", (10.0, 20.0, 40.0))]
    n_replicas = int(opts.get("n_replicas", 20000))
    reports = analytics.ld_poisson_check(epsilon, k_grid, n_replicas,
                                         seed=cfg.seed)

    files = []
    if "csv" in formats:
        path = os.path.join(out_dir, "ld_poisson.csv")
        lines = ["epsilon,k,observed_freq,ci_low,ci_high,bound,n_replicas"]
        for rep in reports:
            lines.append(f"{rep.epsilon!r},{rep.k_threshold!r},"
                         f"{rep.observed_freq!r},{rep.ci_low!r},"
                         f"{rep.ci_high!r},{rep.bound_value!r},"
                         f"{rep.n_replicas}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        files.append(path)
    if "json" in formats:
        path = os.path.join(out_dir, "ld_poisson.json")
        with open(path, "w") as fh:
            json.dump([rep.to_json() for rep in reports], fh,
                      sort_keys=True, indent=1)
            fh.write("\n")
        files.append(path)

    failures = []
    freqs = [rep.observed_freq for rep in reports]
    for a, b, rep in zip(freqs, freqs[1:], reports[1:]):
        if b > a:
            failures.append(_fail("freq_monotone_in_k", a, b,
                                  k=rep.k_threshold))
    for rep in reports:
        if rep.observed_freq > rep.bound_value:
            failures.append(_fail("chernoff_bound", rep.bound_value,
                                  rep.observed_freq, k=rep.k_threshold))
    return files, failures


# ---------------------------------------------------------------------------
# norms


def norm_identity_rows(m_values) -> list:
    """Spectral facts and jump-size identities for each grid size."""
    rows = []
    for m in m_values:
        plan = grid.SpectralPlan(m)
        lam = np.sort(plan.eigenvalues)
        nonzero = lam[np.abs(lam) > SPECTRUM_TOL]
        rows.append({
            "m": m,
            "n_zero_eigs": int(np.sum(np.abs(lam) <= SPECTRUM_TOL)),
            "lam_min_nonzero": float(nonzero.min()) if nonzero.size else 0.0,
            "lam_max": float(lam.max()),
            "e_norm_sq": float(plan.e_norm_sq),
            "e_norm_bound": 1.0 / m + 1.0 / m**2,
            "de_norm_sq": float(plan.de_norm_sq),
            "de_identity": (m - 1.0) / m**4,
        })
    return rows


def cmd_norms(cfg, extras, out_dir, workers, formats):
    rows = norm_identity_rows(cfg.m_grid)

    files = []
    if "csv" in formats:
        path = os.path.join(out_dir, "norms.csv")
        header = list(rows[0].keys())
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(repr(row[k]) if isinstance(row[k], float)
                                  else str(row[k]) for k in header))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        files.append(path)
    if "json" in formats:
        path = os.path.join(out_dir, "norms.json")
        with open(path, "w") as fh:
            json.dump(rows, fh, sort_keys=True, indent=1)
            fh.write("\n")
        files.append(path)

    failures = []
    for row in rows:
        m = row["m"]
        if row["n_zero_eigs"] != 1:
            failures.append(_fail("zero_eigenvalue_simple", 1,
                                  row["n_zero_eigs"], m=m))
        if row["lam_min_nonzero"] < 16.0 - SPECTRUM_TOL:
            failures.append(_fail("spectrum_lower", 16.0,
                                  row["lam_min_nonzero"], m=m))
        if row["lam_max"] > 4.0 * m * m + SPECTRUM_TOL:
            failures.append(_fail("spectrum_upper", 4.0 * m * m,
                                  row["lam_max"], m=m))
        resid = abs(row["de_norm_sq"] - row["de_identity"])
        if resid > JUMP_IDENTITY_TOL:
            failures.append(_fail("jump_identity", JUMP_IDENTITY_TOL,
                                  resid, m=m))
        if row["e_norm_sq"] > row["e_norm_bound"] + JUMP_IDENTITY_TOL:
            failures.append(_fail("basis_norm_bound", row["e_norm_bound"],
                                  row["e_norm_sq"], m=m))
    return files, failures


# ---------------------------------------------------------------------------
# driver

COMMANDS = {
    "simulate": cmd_simulate,
    "ode": cmd_ode,
    "converge": cmd_converge,
    "sd-converge": cmd_sd_converge,
    "duality-check": cmd_duality,
    "ld-check": cmd_ld,
    "norms": cmd_norms,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="torusdiff",
        description="Jump-process and cross-diffusion verification runs.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True,
                       help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=None,
                       help="output directory (default: config out_dir "
                            "or ./out)")
        p.add_argument("--workers", type=int, default=None,
                       help=f"worker processes (default ${harness.WORKERS_ENV}"
                            " or 1)")
        p.add_argument("--format", default=DEFAULT_FORMATS,
                       help="comma-separated subset of csv,json,svg")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    payload, extras = load_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise SystemExit("--seed must be a non-negative integer")
        payload["seed"] = args.seed
    cfg = ExperimentConfig.from_json(payload)
    out_dir = args.out or cfg.out_dir or "out"
    os.makedirs(out_dir, exist_ok=True)
    workers = (harness.default_workers() if args.workers is None
               else max(1, args.workers))
    formats = [f.strip() for f in args.format.split(",") if f.strip()]
    unknown = set(formats) - {"csv", "json", "svg"}
    if unknown:
        raise SystemExit(f"unknown formats {sorted(unknown)}")

    files, failures = COMMANDS[args.command](cfg, extras, out_dir,
                                             workers, formats)
    manifest = write_manifest(out_dir, args.command, args.config,
                              cfg.digest(), cfg.seed, files, failures)
    status = {"command": args.command, "out_dir": out_dir,
              "manifest": manifest, "n_outputs": len(files),
              "n_failures": len(failures), "failures": failures}
    print(json.dumps(status, sort_keys=True))
    return 0 if not failures else 1


if __name__ == "__main__":
    sys.exit(main())
