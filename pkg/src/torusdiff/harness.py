"""Configuration-driven convergence experiments.

Runs replica ensembles of the jump process over (grid, population) cells,
measures mixed-norm gaps against a fine deterministic reference, fits
log-log rates with bootstrap confidence intervals, and emits deterministic
CSV/JSON/SVG artifacts.  Everything an emitted file contains is a pure
function of (config, seed).
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import interp, model as model_mod, particle, semidiscrete
from .semidiscrete import SemiDiscreteState, _initial_values

WORKERS_ENV = "TORUSDIFF_WORKERS"
BOOTSTRAP_RESAMPLES = 200
NORM_MODES = ("sampled", "event-exact")


def default_workers() -> int:
    val = os.environ.get(WORKERS_ENV, "")
    try:
        return max(1, int(val))
    except ValueError:
        return 1


def _spec_digest(payload) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class ExperimentConfig:
    """Declarative experiment: model, initial data, grids, and sampling.

    ``norm_mode`` picks which gap route drives the headline numbers: the
    sampled route measures against the fine reference (so it carries the
    grid bias of the deterministic system), the event-exact route measures
    against the same-grid deterministic solution via the pathwise tracker
    (so it isolates the population-size fluctuation).  ``sample_dt``
    overrides ``n_samples`` when set.  ``ref_path`` points at a saved
    reference snapshot instead of integrating one in place.
    """

    model: dict
    init: dict
    T: float
    m_grid: list
    n_grid: list
    replicas: int
    seed: int = 0
    n_samples: int = 33
    sample_dt: float | None = None
    norm_mode: str = "sampled"
    m_ref: int = 256
    n_snapshots_ref: int = 129
    ref_path: str | None = None
    rate_budget: float | None = None
    out_dir: str | None = None

    def __post_init__(self):
        self.m_grid = [int(m) for m in self.m_grid]
        self.n_grid = [int(n) for n in self.n_grid]
        if not self.m_grid or not self.n_grid:
            raise ValueError("m_grid and n_grid must be non-empty")
        for m in self.m_grid:
            if m < 2:
                raise ValueError("every grid size must be at least 2")
            if self.m_ref % m != 0:
                raise ValueError(
                    f"reference grid {self.m_ref} not divisible by {m}")
        if self.replicas < 1:
            raise ValueError("replicas must be at least 1")
        if self.T <= 0:
            raise ValueError("horizon must be positive")
        if self.norm_mode not in NORM_MODES:
            raise ValueError(f"norm_mode must be one of {NORM_MODES}")
        if self.sample_dt is not None:
            if self.sample_dt <= 0:
                raise ValueError("sample_dt must be positive")
            self.n_samples = max(2, int(round(self.T / self.sample_dt)) + 1)

    @classmethod
    def from_json(cls, payload: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(payload) - known
        if extra:
            raise ValueError(f"unknown config fields {sorted(extra)}")
        return cls(**payload)

    def to_json(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return _spec_digest(self.to_json())

    def build_model(self) -> model_mod.RateModel:
        return build_model(self.model)

    def build_init(self):
        return build_initial(self.init)

    def load_reference(self, model=None, u0=None, v0=None):
        """The fine deterministic solution, loaded or integrated."""
        if self.ref_path is not None:
            ref = semidiscrete.ReferenceSolution.load(self.ref_path)
            if ref.m_ref != self.m_ref:
                raise ValueError(
                    f"snapshot grid {ref.m_ref} does not match the "
                    f"configured reference grid {self.m_ref}")
            if ref.T < self.T - 1e-12:
                raise ValueError("snapshot horizon shorter than config")
            return ref
        if model is None:
            model = self.build_model()
        if u0 is None or v0 is None:
            u0, v0 = self.build_init()
        return semidiscrete.make_reference(
            model, u0, v0, self.T, self.m_ref,
            n_snapshots=self.n_snapshots_ref, with_richardson=False)


def build_model(spec: dict) -> model_mod.RateModel:
    """Rate model from its JSON description."""
    kind = spec.get("kind")
    if kind == "skt":
        return model_mod.build_skt(model_mod.SktParams(**spec["params"]))
    if kind == "affine":
        mu1 = spec.get("mu1", [1.0, 0.0])
        mu2 = spec.get("mu2", [1.0, 0.0])
        aff = model_mod.AffineRates(
            mu1_0=float(mu1[0]), mu1_1=float(mu1[1]),
            mu2_0=float(mu2[0]), mu2_1=float(mu2[1]),
            b1=tuple(spec.get("b1", (0.0, 0.0, 0.0))),
            b2=tuple(spec.get("b2", (0.0, 0.0, 0.0))),
            d1=tuple(spec.get("d1", (0.0, 0.0, 0.0))),
            d2=tuple(spec.get("d2", (0.0, 0.0, 0.0))))
        return model_mod.build_affine(aff, rho0=spec.get("rho0"))
    raise ValueError(f"unknown model kind {kind!r}")


def _component(spec: dict):
    kind = spec.get("kind", "fourier")
    if kind == "constant":
        level = float(spec["level"])
        return lambda x: np.full_like(np.asarray(x, dtype=float), level)
    if kind == "fourier":
        base = float(spec.get("base", 1.0))
        cos_a = float(spec.get("cos", 0.0))
        sin_a = float(spec.get("sin", 0.0))
        mode = int(spec.get("mode", 1))
        return lambda x: (base + cos_a * np.cos(2 * np.pi * mode * x)
                          + sin_a * np.sin(2 * np.pi * mode * x))
    raise ValueError(f"unknown initial-data kind {kind!r}")


def build_initial(spec: dict):
    """(u0, v0) circle functions from the JSON description."""
    return _component(spec["u"]), _component(spec["v"])


@dataclass
class ConvergenceReport:
    """Per-cell mixed-norm gaps plus fitted log-log rates.

    ``slopes["per_m"]`` fits log mean error against log n at each fixed
    grid size; ``slopes["per_n"]`` fits against log m at each fixed
    population scale (the largest n is the meaningful slice).
    """

    config_digest: str
    route: str
    cells: list
    slopes: dict = field(default_factory=dict)
    reference_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for cell in self.cells:
            if not cell.get("skipped") and cell["mean_err"] < 0:
                raise ValueError("mixed-norm errors cannot be negative")

    def cell(self, m: int, n: int) -> dict:
        for c in self.cells:
            if c["m"] == m and c["n"] == n:
                return c
        raise KeyError((m, n))

    def to_json(self) -> dict:
        return {"config_digest": self.config_digest, "route": self.route,
                "cells": self.cells, "slopes": self.slopes,
                "reference_meta": self.reference_meta}


@dataclass
class SemiDiscreteReport:
    """Deterministic grid-refinement errors against the fine reference."""

    config_digest: str
    cells: list

    def __post_init__(self):
        for cell in self.cells:
            if cell["err"] < 0:
                raise ValueError("errors cannot be negative")

    def strictly_decreasing(self) -> bool:
        errs = [c["err"] for c in self.cells]
        return all(b < a for a, b in zip(errs, errs[1:]))

    def to_json(self) -> dict:
        return {"config_digest": self.config_digest, "cells": self.cells}


def _coarse_on_fine(row, m_ref):
    # hat interpolation of the coarse row, sampled at the fine nodes
    return interp.restrict(interp.interpolate(np.asarray(row, float)), m_ref)


def _mixed_gap_sampled(times, rows_u, rows_v, reference) -> float:
    """Squared mixed-norm gap of both species against the fine reference."""
    m_ref = reference.m_ref
    path_u = []
    path_v = []
    for i, t in enumerate(times):
        ru, rv = reference.state_at(float(t))
        path_u.append((float(t), interp.interpolate(
            _coarse_on_fine(rows_u[i], m_ref) - ru)))
        path_v.append((float(t), interp.interpolate(
            _coarse_on_fine(rows_v[i], m_ref) - rv)))
    return (interp.continuous_mixed_norm(path_u)
            + interp.continuous_mixed_norm(path_v))


def _initial_gap(u_row, v_row, reference) -> float:
    """Squared dual-norm distance of the initial data to the reference."""
    m_ref = reference.m_ref
    ru, rv = reference.state_at(0.0)
    fu = interp.interpolate(_coarse_on_fine(u_row, m_ref) - ru)
    fv = interp.interpolate(_coarse_on_fine(v_row, m_ref) - rv)
    return (interp.continuous_mixed_norm([(0.0, fu)])
            + interp.continuous_mixed_norm([(0.0, fv)]))


_JOB_CACHE = {}


def _replica_job(payload: dict) -> dict:
    """One replica of one grid cell; returns both gap routes.

    Runs in a worker process: rebuilds the model from the JSON spec,
    caches the fine reference and the same-grid deterministic solution
    per process, and returns plain floats so merging is deterministic.
    """
    cfg = ExperimentConfig.from_json(payload["config"])
    m, n, replica = payload["m"], payload["n"], payload["replica"]
    mdl = cfg.build_model()
    u0, v0 = cfg.build_init()

    key_ref = (cfg.digest(), "ref")
    ref = _JOB_CACHE.get(key_ref)
    if ref is None:
        ref = cfg.load_reference(mdl, u0, v0)
        _JOB_CACHE[key_ref] = ref
    key_ode = (cfg.digest(), "ode", m)
    same_grid = _JOB_CACHE.get(key_ode)
    if same_grid is None:
        st0 = SemiDiscreteState(_initial_values(u0, m),
                                _initial_values(v0, m), 0.0)
        same_grid = semidiscrete.integrate(st0, mdl, cfg.T,
                                           n_snapshots=cfg.n_samples)
        _JOB_CACHE[key_ode] = same_grid

    state = particle.init_particles(mdl, u0, v0, m, n)
    d0 = _initial_gap(*state.densities(), ref)
    run_kw = {}
    if cfg.rate_budget is not None:
        run_kw["rate_budget"] = cfg.rate_budget
    try:
        trace = particle.run(state, mdl, cfg.T, seed=cfg.seed,
                             replica=replica, n_samples=cfg.n_samples,
                             reference=same_grid, **run_kw)
    except particle.RateOverflow as exc:
        return {"m": m, "n": n, "replica": replica, "failed": str(exc)}
    err_sampled = _mixed_gap_sampled(trace.times, trace.u, trace.v, ref)
    tk = trace.tracker
    err_exact = tk.mixed_norm_sq(1) + tk.mixed_norm_sq(2)
    return {"m": m, "n": n, "replica": replica, "failed": None,
            "err_sampled": float(err_sampled),
            "err_exact": float(err_exact), "d0": float(d0)}


def _weighted_slope(xs, ys, ws) -> float:
    xs = np.asarray(xs, float)
    ys = np.asarray(ys, float)
    W = np.diag(np.asarray(ws, float))
    A = np.stack([xs, np.ones_like(xs)], axis=1)
    coef = np.linalg.solve(A.T @ W @ A, A.T @ W @ ys)
    return float(coef[0])


def _slope_with_bootstrap(x_values, err_matrix, rng) -> dict:
    """Weighted log-log slope of the mean error, replica-bootstrap CI.

    ``err_matrix`` has one row per x value and one column per replica.
    Weights are inverse relative CI widths of the row means, so noisier
    cells pull less.
    """
    err_matrix = np.asarray(err_matrix, float)
    means = err_matrix.mean(axis=1)
    R = err_matrix.shape[1]
    if R > 1:
        ci = 1.96 * err_matrix.std(axis=1, ddof=1) / math.sqrt(R)
    else:
        ci = np.zeros_like(means)
    rel = np.where(ci > 0, ci / np.maximum(means, 1e-300), 1.0)
    ws = 1.0 / np.maximum(rel, 1e-6)
    xs = np.log(np.asarray(x_values, float))
    logm = np.log(np.maximum(means, 1e-300))
    slope = _weighted_slope(xs, logm, ws)
    boots = np.empty(BOOTSTRAP_RESAMPLES)
    for b in range(BOOTSTRAP_RESAMPLES):
        idx = rng.integers(0, R, size=R)
        bm = err_matrix[:, idx].mean(axis=1)
        boots[b] = _weighted_slope(xs, np.log(np.maximum(bm, 1e-300)), ws)
    lo, hi = np.percentile(boots, [2.5, 97.5])
    return {"slope": slope, "ci_low": float(lo), "ci_high": float(hi)}


def run_convergence(config: ExperimentConfig, *, workers: int | None = None,
                    bootstrap_seed: int = 12345) -> ConvergenceReport:
    """Replica ensembles over the (m, n) grid, gaps against the reference.

    Both gap routes are always computed and recorded per cell;
    ``config.norm_mode`` selects which one populates ``mean_err`` and the
    fitted slopes, the other is kept as the ``mean_err_alt`` cross-check.
    A replica hitting the rate budget marks its whole cell skipped with
    the reason recorded.
    """
    workers = default_workers() if workers is None else max(1, int(workers))
    jobs = [{"config": config.to_json(), "m": m, "n": n, "replica": r}
            for m in config.m_grid for n in config.n_grid
            for r in range(config.replicas)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replica_job, jobs, chunksize=1))
    else:
        results = [_replica_job(job) for job in jobs]

    by_cell = {}
    for res in results:
        by_cell.setdefault((res["m"], res["n"]), []).append(res)

    key = "err_sampled" if config.norm_mode == "sampled" else "err_exact"
    alt = "err_exact" if key == "err_sampled" else "err_sampled"
    cells = []
    err_rows = {}
    for m in config.m_grid:
        for n in config.n_grid:
            rows = sorted(by_cell[(m, n)], key=lambda r: r["replica"])
            failed = [r for r in rows if r["failed"]]
            if failed:
                cells.append({"m": m, "n": n, "replicas": len(rows),
                              "skipped": True,
                              "reason": failed[0]["failed"]})
                continue
            errs = np.array([r[key] for r in rows])
            alts = np.array([r[alt] for r in rows])
            R = len(errs)
            ci = 1.96 * errs.std(ddof=1) / math.sqrt(R) if R > 1 else 0.0
            cells.append({"m": m, "n": n, "replicas": R, "skipped": False,
                          "mean_err": float(errs.mean()),
                          "ci95": float(ci),
                          "mean_err_alt": float(alts.mean()),
                          "d0": float(np.mean([r["d0"] for r in rows]))})
            err_rows[(m, n)] = errs

    rng = np.random.Generator(np.random.Philox(key=bootstrap_seed))
    slopes = {"per_m": {}, "per_n": {}}
    for m in config.m_grid:
        ns = [n for n in config.n_grid if (m, n) in err_rows]
        if len(ns) >= 2:
            mat = np.stack([err_rows[(m, n)] for n in ns])
            slopes["per_m"][str(m)] = _slope_with_bootstrap(ns, mat, rng)
    for n in config.n_grid:
        ms = [m for m in config.m_grid if (m, n) in err_rows]
        if len(ms) >= 2:
            mat = np.stack([err_rows[(m, n)] for m in ms])
            slopes["per_n"][str(n)] = _slope_with_bootstrap(ms, mat, rng)
    return ConvergenceReport(
        config_digest=config.digest(), route=config.norm_mode, cells=cells,
        slopes=slopes,
        reference_meta={"m_ref": config.m_ref,
                        "n_snapshots": config.n_snapshots_ref})


def run_semidiscrete_convergence(config: ExperimentConfig, *,
                                 perturb_eps: float = 0.0,
                                 perturb_mode: int = 1) -> SemiDiscreteReport:
    """Deterministic coarse-grid errors against the fine reference.

    Initial data are matched by default: each coarse run starts from the
    same circle functions sampled on its own grid, so the initial-gap term
    carries only interpolation error and the refinement trend isolates the
    grid bias.  ``perturb_eps`` adds a cosine bump of that amplitude to the
    coarse initial data only, for lower-bound sanity checks.
    """
    mdl = config.build_model()
    u0, v0 = config.build_init()
    ref = config.load_reference(mdl, u0, v0)
    cells = []
    for m in config.m_grid:
        u_arr = _initial_values(u0, m)
        v_arr = _initial_values(v0, m)
        if perturb_eps:
            u_arr = u_arr + perturb_eps * np.cos(
                2 * np.pi * perturb_mode * np.arange(m) / m)
        sol = semidiscrete.integrate(SemiDiscreteState(u_arr, v_arr, 0.0),
                                     mdl, config.T,
                                     n_snapshots=config.n_samples)
        err = _mixed_gap_sampled(sol.times, sol.u, sol.v, ref)
        cells.append({"m": m, "err": float(err)})
    return SemiDiscreteReport(config_digest=config.digest(), cells=cells)


# ---------------------------------------------------------------------------
# file emission


def _float_csv(x) -> str:
    return repr(float(x))


def _write_text(path, text):
    with open(path, "w") as fh:
        fh.write(text)


def _convergence_csv(report: ConvergenceReport) -> str:
    lines = ["m,n,replicas,mean_err,ci95,mean_err_alt,d0,skipped,reason"]
    for c in report.cells:
        if c.get("skipped"):
            lines.append(f"{c['m']},{c['n']},{c['replicas']},,,,,"
                         f"1,{c['reason']}")
        else:
            lines.append(
                f"{c['m']},{c['n']},{c['replicas']},"
                f"{_float_csv(c['mean_err'])},{_float_csv(c['ci95'])},"
                f"{_float_csv(c['mean_err_alt'])},{_float_csv(c['d0'])},0,")
    return "\n".join(lines) + "\n"


def _semidiscrete_csv(report: SemiDiscreteReport) -> str:
    lines = ["m,err"]
    for c in report.cells:
        lines.append(f"{c['m']},{_float_csv(c['err'])}")
    return "\n".join(lines) + "\n"


def _svg_axes(digest):
    import matplotlib
    matplotlib.use("svg", force=True)
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = digest
    fig, ax = plt.subplots(figsize=(4.5, 3.4))
    ax.set_xscale("log")
    ax.set_yscale("log")
    return plt, fig, ax


def _slope_svg(report: ConvergenceReport, m: int, path: str):
    plt, fig, ax = _svg_axes(report.config_digest)
    cells = [c for c in report.cells
             if c["m"] == m and not c.get("skipped")]
    ax.errorbar([c["n"] for c in cells], [c["mean_err"] for c in cells],
                yerr=[c["ci95"] for c in cells], marker="o")
    ax.set_xlabel("population scale n")
    ax.set_ylabel("mean squared mixed-norm gap")
    info = report.slopes.get("per_m", {}).get(str(m))
    title = f"grid m={m}"
    if info:
        title += f", slope {info['slope']:.3f}"
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


def _grid_svg(report: SemiDiscreteReport, path: str):
    plt, fig, ax = _svg_axes(report.config_digest)
    ax.plot([c["m"] for c in report.cells],
            [max(c["err"], 1e-300) for c in report.cells], marker="o")
    ax.set_xlabel("grid size m")
    ax.set_ylabel("squared mixed-norm gap")
    ax.set_title("grid refinement vs fine reference")
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


def emit_outputs(report, formats, out_dir, *, name: str | None = None) -> list:
    """Write the report as CSV/JSON/SVG files; returns the created paths.

    File contents are deterministic functions of the report: CSV floats
    use repr, JSON is key-sorted, and SVGs pin the hash salt and drop the
    date metadata, so a rerun with the same config and seed reproduces
    every byte.
    """
    formats = [f.strip() for f in formats if f.strip()]
    unknown = set(formats) - {"csv", "json", "svg"}
    if unknown:
        raise ValueError(f"unknown formats {sorted(unknown)}")
    os.makedirs(out_dir, exist_ok=True)
    if name is None:
        name = ("convergence" if isinstance(report, ConvergenceReport)
                else "sd_convergence")
    paths = []
    if "csv" in formats:
        csv_text = (_convergence_csv(report)
                    if isinstance(report, ConvergenceReport)
                    else _semidiscrete_csv(report))
        path = os.path.join(out_dir, f"{name}.csv")
        _write_text(path, csv_text)
        paths.append(path)
    if "json" in formats:
        path = os.path.join(out_dir, f"{name}.json")
        _write_text(path, json.dumps(report.to_json(), sort_keys=True,
                                     indent=1) + "\n")
        paths.append(path)
    if "svg" in formats:
        if isinstance(report, ConvergenceReport):
            for m in sorted({c["m"] for c in report.cells}):
                path = os.path.join(out_dir, f"{name}_m{m}.svg")
                _slope_svg(report, m, path)
                paths.append(path)
        else:
            path = os.path.join(out_dir, f"{name}_grid.svg")
            _grid_svg(report, path)
            paths.append(path)
    return paths
