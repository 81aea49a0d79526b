"""Interacting-particle simulation of the two-species lattice jump process.

Site-occupancy counts of both species evolve on the discrete torus by
nearest-neighbour walks with density-dependent speeds and by on-site
birth/death.  Paths are simulated exactly, event by event, with a rejection-
free loop over a binary sum tree of channel rates; a compiled twin of the
pure-Python engine is used when available, and both consume the RNG
identically so event sequences are bit-identical across backends.

A run can carry an exact pathwise tracker for each species' compensated
martingale, its quadratic compensation functional, the jump quadratic
variation, and mixed space-time norms of the path centred on a semi-discrete
reference solution.  All tracked integrals are exact for piecewise-constant
states against a reference that is linear in time between its snapshots.

Rate convention per site j (density u_j = counts1_j / n_scale):
walk to each neighbour at rate m^2 * counts1_j * mu1(v_j), birth at
counts1_j * b1(u_j, v_j), death at counts1_j * d1(u_j, v_j); species 2
symmetric with mu2 evaluated at u_j.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import _engine_py
from .grid import SpectralPlan
from .model import RateModel, AffineRates
from .semidiscrete import IntegrationResult, _initial_values

try:
    from . import _engine as _engine_c
except ImportError:
    _engine_c = None

RateOverflow = _engine_py.RateOverflow

DEFAULT_RATE_BUDGET = 1.0e12
REBUILD_EVERY = _engine_py.REBUILD_EVERY
_MASK64 = (1 << 64) - 1
_INIT_STREAM_TAG = 1 << 127

EVENT_DTYPE = np.dtype([("t", "<f8"), ("species", "u1"),
                        ("cls", "u1"), ("site", "<u4")])

KIND_NAMES = ("right", "left", "birth", "death")


class Extinct(RuntimeError):
    """Raised by step_event when the total event rate vanishes."""


class LeapRejected(RuntimeError):
    """Tau-leap negativity rejections exceeded the allowed fraction."""


def available_engines() -> tuple:
    if _engine_c is not None:
        return ("cython", "python")
    return ("python",)


def _seed_key(seed: int, replica: int) -> int:
    return ((int(replica) & _MASK64) << 64) | (int(seed) & _MASK64)


def _rate_callables(model):
    """The six rate functions of a RateModel or a bare AffineRates table."""
    if isinstance(model, RateModel):
        return (model.mu1, model.mu2, model.b1, model.b2, model.d1, model.d2)
    if isinstance(model, AffineRates):
        aff = model
        return (lambda v: aff.mu1_0 + aff.mu1_1 * v,
                lambda u: aff.mu2_0 + aff.mu2_1 * u,
                lambda u, v: aff.b1[0] + aff.b1[1] * u + aff.b1[2] * v,
                lambda u, v: aff.b2[0] + aff.b2[1] * u + aff.b2[2] * v,
                lambda u, v: aff.d1[0] + aff.d1[1] * u + aff.d1[2] * v,
                lambda u, v: aff.d2[0] + aff.d2[1] * u + aff.d2[2] * v)
    raise TypeError("model must be a RateModel or AffineRates")


@dataclass
class ParticleState:
    """Occupancy counts of both species on the torus at one instant."""

    m: int
    n_scale: int
    counts1: np.ndarray
    counts2: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.counts1 = np.asarray(self.counts1, dtype=np.int64)
        self.counts2 = np.asarray(self.counts2, dtype=np.int64)
        if self.counts1.shape != (self.m,) or self.counts2.shape != (self.m,):
            raise ValueError("count arrays must have shape (m,)")
        if self.n_scale < 1:
            raise ValueError("n_scale must be a positive integer")
        if (self.counts1 < 0).any() or (self.counts2 < 0).any():
            raise ValueError("occupancy counts must be nonnegative")

    def densities(self) -> tuple:
        inv = 1.0 / self.n_scale
        return self.counts1 * inv, self.counts2 * inv

    def copy(self) -> "ParticleState":
        return ParticleState(self.m, self.n_scale, self.counts1.copy(),
                             self.counts2.copy(), self.t)

    def rate_table(self, model) -> np.ndarray:
        """Channel rates, shape (m, 8); flat index = site * 8 + class."""
        mu1, mu2, b1, b2, d1, d2 = _rate_callables(model)
        u, v = self.densities()
        m2 = float(self.m * self.m)
        c1 = self.counts1.astype(float)
        c2 = self.counts2.astype(float)
        table = np.empty((self.m, 8))
        move1 = m2 * c1 * mu1(v)
        move2 = m2 * c2 * mu2(u)
        table[:, 0] = move1
        table[:, 1] = move1
        table[:, 2] = c1 * b1(u, v)
        table[:, 3] = c1 * d1(u, v)
        table[:, 4] = move2
        table[:, 5] = move2
        table[:, 6] = c2 * b2(u, v)
        table[:, 7] = c2 * d2(u, v)
        return table

    def rate_index(self, model: RateModel) -> np.ndarray:
        """Binary sum tree over the flat rate table; root at index 1."""
        flat = self.rate_table(model).ravel()
        p = 1
        while p < flat.size:
            p <<= 1
        tree = np.zeros(2 * p)
        tree[p:p + flat.size] = flat
        for i in range(p - 1, 0, -1):
            tree[i] = tree[2 * i] + tree[2 * i + 1]
        return tree

    def total_rate(self, model: RateModel) -> float:
        return float(self.rate_table(model).sum())


class EventRecord(NamedTuple):
    t: float
    species: int
    kind: str
    site: int
    dst: int


def init_particles(model, u0, v0, m: int, n_scale: int, *, seed: int = 0,
                   replica: int = 0, mode: str = "round") -> ParticleState:
    """Discretise initial densities into occupancy counts.

    mode "round" takes the nearest integer to n_scale * density; "poisson"
    draws each site count from a Poisson law with that mean, on an RNG
    stream separate from the event stream of run().
    """
    del model  # accepted for signature symmetry with the other ops
    u_arr = _initial_values(u0, m)
    v_arr = _initial_values(v0, m)
    if (u_arr < 0).any() or (v_arr < 0).any():
        raise ValueError("initial densities must be nonnegative")
    if mode == "round":
        c1 = np.rint(n_scale * u_arr).astype(np.int64)
        c2 = np.rint(n_scale * v_arr).astype(np.int64)
    elif mode == "poisson":
        key = _seed_key(seed, replica) ^ _INIT_STREAM_TAG
        rng = np.random.Generator(np.random.Philox(key=key))
        c1 = rng.poisson(n_scale * u_arr).astype(np.int64)
        c2 = rng.poisson(n_scale * v_arr).astype(np.int64)
    else:
        raise ValueError(f"unknown init mode {mode!r}")
    return ParticleState(m, n_scale, c1, c2, 0.0)


def step_event(state: ParticleState, model: RateModel,
               rng: np.random.Generator):
    """Advance exactly one event; independent of the run() engines.

    Returns (new_state, EventRecord).  Consumes two uniform doubles.  Raises
    Extinct when the total rate vanishes.
    """
    flat = state.rate_table(model).ravel()
    total = float(flat.sum())
    if not total > 0.0:
        raise Extinct(f"total event rate vanished at t={state.t:.6g}")
    u1 = rng.random()
    dt = -math.log1p(-u1) / total
    u2 = rng.random()
    cum = np.cumsum(flat)
    leaf = int(np.searchsorted(cum, u2 * total, side="right"))
    if leaf >= flat.size:
        leaf = flat.size - 1
    while leaf > 0 and flat[leaf] == 0.0:  # roundoff guard
        leaf -= 1
    site, cls = divmod(leaf, 8)
    species = 1 if cls < 4 else 2
    kind = cls & 3
    nxt = state.copy()
    nxt.t = state.t + dt
    counts = nxt.counts1 if species == 1 else nxt.counts2
    if kind == 0:
        dst = (site + 1) % state.m
        counts[site] -= 1
        counts[dst] += 1
    elif kind == 1:
        dst = (site - 1) % state.m
        counts[site] -= 1
        counts[dst] += 1
    elif kind == 2:
        dst = site
        counts[site] += 1
    else:
        dst = site
        counts[site] -= 1
    return nxt, EventRecord(nxt.t, species, KIND_NAMES[kind], site, dst)


@dataclass
class JumpAccount:
    """Birth/death event counters and their normalised cumulative intensities.

    The normalised intensity of a class is the time integral of its total
    rate divided by m * n_scale, so counter / (m * n_scale) minus intensity
    is a martingale in expectation.
    """

    m: int
    n_scale: int
    n_births1: int
    n_deaths1: int
    n_births2: int
    n_deaths2: int
    i_births1: float
    i_deaths1: float
    i_births2: float
    i_deaths2: float

    def raw_intensity(self, which: str) -> float:
        """Unnormalised cumulative intensity of one class."""
        return self.m * self.n_scale * getattr(self, "i_" + which)


@dataclass
class MartingaleTracker:
    """Pathwise martingale functionals of one run, sampled on a time grid.

    All pair fields are (species 1, species 2).  mart rows hold the
    compensated path U(t) - U(0) - integral of the drift field; h_path
    satisfies h = 2 * q_mart + jump_qv identically.  sup_* fields are
    running suprema evaluated at every event endpoint, exact for the
    piecewise-linear-in-time path geometry.
    """

    times: np.ndarray
    mart: tuple
    drift_integral: tuple
    jump_qv: tuple
    q_mart: tuple
    h_path: tuple
    sup_mart_sq: tuple
    sup_center_sq: tuple
    center_l2_int: tuple
    moment_integral: np.ndarray

    def mixed_norm_sq(self, species: int) -> float:
        """Final sup dual-norm square plus the L2 time integral."""
        i = species - 1
        return float(self.sup_center_sq[i][-1] + self.center_l2_int[i][-1])

    def h_identity_residual(self) -> float:
        res = 0.0
        for i in (0, 1):
            gap = self.h_path[i] - (2.0 * self.q_mart[i] + self.jump_qv[i])
            res = max(res, float(np.max(np.abs(gap))))
        return res


@dataclass
class PathTrace:
    """One replica's sampled path with accounting and tracked functionals."""

    m: int
    n_scale: int
    seed: int
    replica: int
    engine: str
    method: str
    approximate: bool
    times: np.ndarray
    u: np.ndarray
    v: np.ndarray
    account: JumpAccount
    account_path: dict
    tracker: Optional[MartingaleTracker]
    counts1_final: np.ndarray
    counts2_final: np.ndarray
    n_events: int
    extinct_time: Optional[float]
    total_rate_drift: float
    events: Optional[dict] = None

    def mart_consistency(self) -> float:
        """Recompute the compensated paths from scratch at the final time.

        Returns the largest absolute gap between the incrementally tracked
        martingale and (U(T) - U(0)) - drift_integral.
        """
        if self.tracker is None:
            raise ValueError("trace carries no tracker")
        gap = 0.0
        for i, dens in enumerate((self.u, self.v)):
            rebuilt = (dens[-1] - dens[0]) - self.tracker.drift_integral[i]
            gap = max(gap, float(np.max(np.abs(self.tracker.mart[i][-1]
                                               - rebuilt))))
        return gap

    def count_identity_residual(self) -> int:
        """Net birth/death counters against the net change of total counts."""
        a = self.account
        d1 = int(self.counts1_final.sum()) - int(round(
            self.u[0].sum() * self.n_scale))
        d2 = int(self.counts2_final.sum()) - int(round(
            self.v[0].sum() * self.n_scale))
        return max(abs(d1 - (a.n_births1 - a.n_deaths1)),
                   abs(d2 - (a.n_births2 - a.n_deaths2)))


def _reference_arrays(reference, m: int, T: float, plan: SpectralPlan):
    if reference is None:
        ref_t = np.array([0.0, max(T, 1.0)])
        zeros = np.zeros((2, m))
        return ref_t, zeros, zeros.copy(), zeros.copy(), zeros.copy(), \
            np.zeros(2), np.zeros(2)
    if not isinstance(reference, IntegrationResult):
        raise TypeError("reference must be an IntegrationResult on the "
                        "particle grid")
    if reference.u.shape[1] != m:
        raise ValueError("reference grid does not match the particle grid")
    if reference.times[0] > 0.0 or reference.times[-1] < T - 1e-12:
        raise ValueError("reference must cover [0, T]")
    ref_t = np.asarray(reference.times, dtype=float)
    ref_u = np.asarray(reference.u, dtype=float)
    ref_v = np.asarray(reference.v, dtype=float)
    ref_pu = np.empty_like(ref_u)
    ref_pv = np.empty_like(ref_v)
    for i in range(len(ref_t)):
        ref_pu[i] = plan.potential(ref_u[i])
        ref_pv[i] = plan.potential(ref_v[i])
    return (ref_t, ref_u, ref_v, ref_pu, ref_pv,
            ref_u.mean(axis=1), ref_v.mean(axis=1))


def run(state: ParticleState, model: RateModel, T: float, *, seed: int = 0,
        replica: int = 0, n_samples: int = 65, sample_times=None,
        reference=None, track: bool = True, record_events: bool = False,
        engine: str = "auto", rate_budget: float = DEFAULT_RATE_BUDGET,
        rebuild_every: int = REBUILD_EVERY) -> PathTrace:
    """Simulate the jump process on [0, T] and return the sampled path.

    Extinction (total rate zero) is absorbed: the state freezes, remaining
    samples repeat it, and the extinction time is recorded on the trace.
    RateOverflow propagates.  The event stream is keyed by (seed, replica)
    and is bit-reproducible per engine; the compiled and pure-Python engines
    generate identical event sequences.
    """
    if T < 0:
        raise ValueError("horizon must be nonnegative")
    m, n = state.m, state.n_scale
    if sample_times is None:
        sample_times = np.linspace(0.0, T, n_samples)
    else:
        sample_times = np.asarray(sample_times, dtype=float)
        if (np.diff(sample_times) < 0).any():
            raise ValueError("sample times must be nondecreasing")
        if sample_times.size and (sample_times[0] < 0.0
                                  or sample_times[-1] > T + 1e-12):
            raise ValueError("sample times must lie in [0, T]")

    affine = model.affine if isinstance(model, RateModel) else model
    if isinstance(model, RateModel):
        callables = (model.mu1, model.mu2, model.b1, model.b2,
                     model.d1, model.d2)
    else:
        if not isinstance(model, AffineRates):
            raise TypeError("model must be a RateModel or AffineRates")
        callables = None

    if engine == "auto":
        engine = "cython" if (_engine_c is not None
                              and affine is not None) else "python"
    if engine == "cython":
        if _engine_c is None:
            raise ValueError("compiled engine is not available")
        if affine is None:
            raise ValueError("compiled engine requires affine rates")
    elif engine != "python":
        raise ValueError(f"unknown engine {engine!r}")

    plan = SpectralPlan(m)
    ref_t, ref_u, ref_v, ref_pu, ref_pv, ref_mu, ref_mv = \
        _reference_arrays(reference, m, T, plan)
    u0, v0 = state.densities()
    r1_0 = model.reaction1(u0, v0) if isinstance(model, RateModel) else \
        u0 * ((affine.b1[0] + affine.b1[1] * u0 + affine.b1[2] * v0)
              - (affine.d1[0] + affine.d1[1] * u0 + affine.d1[2] * v0))
    r2_0 = model.reaction2(u0, v0) if isinstance(model, RateModel) else \
        v0 * ((affine.b2[0] + affine.b2[1] * u0 + affine.b2[2] * v0)
              - (affine.d2[0] + affine.d2[1] * u0 + affine.d2[2] * v0))

    cfg = {
        "m": m, "n": n, "T": float(T),
        "coeffs": affine.as_array() if affine is not None else None,
        "callables": None if affine is not None else callables,
        "counts1": state.counts1, "counts2": state.counts2,
        "sample_times": sample_times,
        "neg_green": plan.neg_green,
        "e_norm_sq": plan.e_norm_sq, "de_norm_sq": plan.de_norm_sq,
        "ref_times": ref_t, "ref_u": ref_u, "ref_v": ref_v,
        "ref_pu": ref_pu, "ref_pv": ref_pv,
        "ref_mean_u": ref_mu, "ref_mean_v": ref_mv,
        "pu1": plan.potential(u0), "pu2": plan.potential(v0),
        "pr1": plan.potential(r1_0), "pr2": plan.potential(r2_0),
        "track": track, "record_events": record_events,
        "rate_budget": float(rate_budget),
        "rebuild_every": int(rebuild_every),
        "seed_key": _seed_key(seed, replica),
    }
    if engine == "cython":
        out = _engine_c.run_engine(cfg)
    else:
        out = _engine_py.run_engine(cfg)

    account = JumpAccount(
        m=m, n_scale=n,
        n_births1=int(out["nb1"][-1]), n_deaths1=int(out["nd1"][-1]),
        n_births2=int(out["nb2"][-1]), n_deaths2=int(out["nd2"][-1]),
        i_births1=float(out["ib1"][-1]), i_deaths1=float(out["id1"][-1]),
        i_births2=float(out["ib2"][-1]), i_deaths2=float(out["id2"][-1]))
    account_path = {key: out[key] for key in
                    ("nb1", "nd1", "nb2", "nd2", "ib1", "id1", "ib2", "id2")}
    tracker = None
    if track:
        qv = (out["qv1"], out["qv2"])
        qm = (out["q1"], out["q2"])
        tracker = MartingaleTracker(
            times=out["times"],
            mart=(out["mart1"], out["mart2"]),
            drift_integral=(out["drift1"], out["drift2"]),
            jump_qv=qv,
            q_mart=qm,
            h_path=(2.0 * qm[0] + qv[0], 2.0 * qm[1] + qv[1]),
            sup_mart_sq=(out["supM1"], out["supM2"]),
            sup_center_sq=(out["supZ1"], out["supZ2"]),
            center_l2_int=(out["intZ1"], out["intZ2"]),
            moment_integral=out["mom"])
    events = None
    if record_events:
        events = {key: out["evt_" + key]
                  for key in ("t", "sp", "cls", "site", "int")}
    extinct = float(out["extinct_time"])
    return PathTrace(
        m=m, n_scale=n, seed=seed, replica=replica, engine=engine,
        method="exact-event", approximate=False,
        times=out["times"], u=out["u"], v=out["v"],
        account=account, account_path=account_path, tracker=tracker,
        counts1_final=out["counts1"].astype(np.int64),
        counts2_final=out["counts2"].astype(np.int64),
        n_events=int(out["n_events"]),
        extinct_time=None if math.isnan(extinct) else extinct,
        total_rate_drift=float(out["total_rate_drift"]),
        events=events)


def tau_leap_run(state: ParticleState, model: RateModel, T: float, *,
                 seed: int = 0, replica: int = 0, n_samples: int = 65,
                 leap: Optional[float] = None,
                 max_reject_frac: float = 0.01) -> PathTrace:
    """Approximate the jump process with Poisson-increment leaping.

    Motion increments are applied as paired departures/arrivals, so mass is
    conserved exactly by every accepted leap.  A leap driving any count
    negative is rejected and redrawn; LeapRejected is raised when the
    rejection fraction exceeds max_reject_frac.  The result is flagged
    approximate and carries no martingale tracker.
    """
    if T <= 0:
        raise ValueError("horizon must be positive")
    m, n = state.m, state.n_scale
    m2 = float(m * m)
    if leap is None:
        leap = T / 2048.0
    mu1, mu2, rb1_fn, rb2_fn, rd1_fn, rd2_fn = _rate_callables(model)
    sample_times = np.linspace(0.0, T, n_samples)
    rng = np.random.Generator(np.random.Philox(key=_seed_key(seed, replica)))
    c1 = state.counts1.astype(float).copy()
    c2 = state.counts2.astype(float).copy()
    inv_n = 1.0 / n
    inv_mn = 1.0 / (m * n)
    s_u = np.zeros((n_samples, m))
    s_v = np.zeros((n_samples, m))
    path = {key: np.zeros(n_samples) for key in
            ("ib1", "id1", "ib2", "id2")}
    cpath = {key: np.zeros(n_samples, dtype=np.int64) for key in
             ("nb1", "nd1", "nb2", "nd2")}
    nb1 = nd1 = nb2 = nd2 = 0
    ib1 = id1 = ib2 = id2 = 0.0
    n_leaps = 0
    n_rejects = 0
    t = 0.0
    for si, ts in enumerate(sample_times):
        while t < ts - 1e-15:
            dt = min(leap, ts - t)
            u = c1 * inv_n
            v = c2 * inv_n
            move1 = m2 * c1 * mu1(v)
            move2 = m2 * c2 * mu2(u)
            rb1 = c1 * rb1_fn(u, v)
            rd1 = c1 * rd1_fn(u, v)
            rb2 = c2 * rb2_fn(u, v)
            rd2 = c2 * rd2_fn(u, v)
            while True:
                n_leaps += 1
                right1 = rng.poisson(move1 * dt)
                left1 = rng.poisson(move1 * dt)
                right2 = rng.poisson(move2 * dt)
                left2 = rng.poisson(move2 * dt)
                db1 = rng.poisson(rb1 * dt)
                dd1 = rng.poisson(rd1 * dt)
                db2 = rng.poisson(rb2 * dt)
                dd2 = rng.poisson(rd2 * dt)
                new1 = (c1 - right1 - left1 + np.roll(right1, 1)
                        + np.roll(left1, -1) + db1 - dd1)
                new2 = (c2 - right2 - left2 + np.roll(right2, 1)
                        + np.roll(left2, -1) + db2 - dd2)
                if (new1 >= 0).all() and (new2 >= 0).all():
                    break
                n_rejects += 1
                if n_leaps >= 100 and n_rejects > max_reject_frac * n_leaps:
                    raise LeapRejected(
                        f"negativity rejections {n_rejects}/{n_leaps} exceed "
                        f"the {max_reject_frac:.1%} budget")
            c1, c2 = new1, new2
            nb1 += int(db1.sum())
            nd1 += int(dd1.sum())
            nb2 += int(db2.sum())
            nd2 += int(dd2.sum())
            ib1 += dt * float(rb1.sum()) * inv_mn
            id1 += dt * float(rd1.sum()) * inv_mn
            ib2 += dt * float(rb2.sum()) * inv_mn
            id2 += dt * float(rd2.sum()) * inv_mn
            t += dt
        s_u[si] = c1 * inv_n
        s_v[si] = c2 * inv_n
        for key, val in (("ib1", ib1), ("id1", id1), ("ib2", ib2),
                         ("id2", id2)):
            path[key][si] = val
        for key, val in (("nb1", nb1), ("nd1", nd1), ("nb2", nb2),
                         ("nd2", nd2)):
            cpath[key][si] = val
    if n_rejects > max_reject_frac * max(n_leaps, 1):
        raise LeapRejected(
            f"negativity rejections {n_rejects}/{n_leaps} exceed "
            f"the {max_reject_frac:.1%} budget")
    account = JumpAccount(m=m, n_scale=n, n_births1=nb1, n_deaths1=nd1,
                          n_births2=nb2, n_deaths2=nd2, i_births1=ib1,
                          i_deaths1=id1, i_births2=ib2, i_deaths2=id2)
    account_path = dict(cpath)
    account_path.update(path)
    return PathTrace(
        m=m, n_scale=n, seed=seed, replica=replica, engine="python",
        method="tau-leap", approximate=True,
        times=sample_times, u=s_u, v=s_v,
        account=account, account_path=account_path, tracker=None,
        counts1_final=c1.astype(np.int64), counts2_final=c2.astype(np.int64),
        n_events=nb1 + nd1 + nb2 + nd2,
        extinct_time=None, total_rate_drift=0.0, events=None)


def export_csv(trace: PathTrace, path, *, replica: Optional[int] = None):
    """Write the sampled densities as (replica,t,species,site,density) rows."""
    rep = trace.replica if replica is None else replica
    lines = ["replica,t,species,site,density"]
    for i, t in enumerate(trace.times):
        for species, dens in ((1, trace.u), (2, trace.v)):
            row = dens[i]
            for j in range(trace.m):
                lines.append(
                    f"{rep},{float(t)!r},{species},{j},{float(row[j])!r}")
    text = "\n".join(lines) + "\n"
    if hasattr(path, "write"):
        path.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def summary_dict(trace: PathTrace) -> dict:
    a = trace.account
    out = {
        "m": trace.m,
        "n_scale": trace.n_scale,
        "seed": trace.seed,
        "replica": trace.replica,
        "engine": trace.engine,
        "method": trace.method,
        "approximate": trace.approximate,
        "n_events": trace.n_events,
        "extinct_time": trace.extinct_time,
        "total_rate_drift": trace.total_rate_drift,
        "t_final": float(trace.times[-1]) if len(trace.times) else 0.0,
        "counters": {
            "n_births1": a.n_births1, "n_deaths1": a.n_deaths1,
            "n_births2": a.n_births2, "n_deaths2": a.n_deaths2,
        },
        "intensities": {
            "i_births1": a.i_births1, "i_deaths1": a.i_deaths1,
            "i_births2": a.i_births2, "i_deaths2": a.i_deaths2,
        },
        "final_mass": {
            "species1": float(trace.counts1_final.sum()) / trace.n_scale
            / trace.m,
            "species2": float(trace.counts2_final.sum()) / trace.n_scale
            / trace.m,
        },
    }
    if trace.tracker is not None:
        tr = trace.tracker
        out["martingale"] = {
            "sup_mart_sq": [float(tr.sup_mart_sq[0][-1]),
                            float(tr.sup_mart_sq[1][-1])],
            "h_final": [float(tr.h_path[0][-1]), float(tr.h_path[1][-1])],
            "jump_qv_final": [float(tr.jump_qv[0][-1]),
                              float(tr.jump_qv[1][-1])],
            "mixed_norm_sq": [tr.mixed_norm_sq(1), tr.mixed_norm_sq(2)],
            "moment_integral": float(tr.moment_integral[-1]),
        }
    return out


def export_summary(trace: PathTrace, path):
    payload = json.dumps(summary_dict(trace), indent=2, sort_keys=True)
    if hasattr(path, "write"):
        path.write(payload)
    else:
        with open(path, "w") as fh:
            fh.write(payload)


def export_event_log(trace: PathTrace, path):
    """Binary event log: little-endian (f64 t, u8 species, u8 class, u32 site)."""
    if trace.events is None:
        raise ValueError("trace was run without record_events")
    ev = trace.events
    arr = np.empty(len(ev["t"]), dtype=EVENT_DTYPE)
    arr["t"] = ev["t"]
    arr["species"] = ev["sp"]
    arr["cls"] = ev["cls"]
    arr["site"] = ev["site"]
    if hasattr(path, "write"):
        path.write(arr.tobytes())
    else:
        arr.tofile(path)


def read_event_log(path) -> np.ndarray:
    return np.fromfile(path, dtype=EVENT_DTYPE)
