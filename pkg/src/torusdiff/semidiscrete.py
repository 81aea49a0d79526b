"""Deterministic grid dynamics: the coupled density ODEs and their checks.

Discretizing space turns the cross-diffusion system into a coupled ODE on the
grid: each species' density evolves by the second-difference of its flux
(density times the motion speed set by the other species) plus its net
reaction.  This module integrates that system with classical RK4 under an
explicit stability constraint, builds fine-grid reference solutions with a
serializable snapshot format, solves the linear (Kolmogorov) equation with
divergence-form and direct sources plus atomic jumps, and evaluates both
sides of the discrete duality inequality on realized solutions.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import grid, interp, model as model_mod


class StepRejected(RuntimeError):
    """Raised when a requested step exceeds the stability limit."""


class NegativityFault(RuntimeError):
    """Raised when the positivity floor has to clip more than a configured fraction of sites."""


class SmallnessViolated(RuntimeError):
    """Raised when a reference solution's sup-norm product crosses the smallness threshold."""


# Stability: explicit stepping of the second-difference operator is stable for
# dt below c_cfl / (4 m^2 sup mu); 0.9 leaves headroom for the reaction terms.
DEFAULT_CFL = 0.9
CLIP_TOL = 1e-13
MAX_CLIP_FRACTION = 0.1


@dataclass
class SemiDiscreteState:
    u: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.u = grid.grid_fn(self.u)
        self.v = grid.grid_fn(self.v, len(self.u))

    @property
    def m(self) -> int:
        return len(self.u)

    def copy(self) -> "SemiDiscreteState":
        return SemiDiscreteState(self.u.copy(), self.v.copy(), self.t)


def rhs(u: np.ndarray, v: np.ndarray, model: model_mod.RateModel):
    """Time derivatives of both densities."""
    du = grid.laplacian_apply(model.mu1(v) * u) + u * model.lambda1(u, v)
    dv = grid.laplacian_apply(model.mu2(u) * v) + v * model.lambda2(u, v)
    return du, dv


def stable_dt(state: SemiDiscreteState, model: model_mod.RateModel,
              c_cfl: float = DEFAULT_CFL) -> float:
    sup_mu = max(float(np.max(model.mu1(state.v))), float(np.max(model.mu2(state.u))))
    return c_cfl / (4.0 * state.m**2 * sup_mu)


def _rk4(u, v, model, dt):
    k1u, k1v = rhs(u, v, model)
    k2u, k2v = rhs(u + 0.5 * dt * k1u, v + 0.5 * dt * k1v, model)
    k3u, k3v = rhs(u + 0.5 * dt * k2u, v + 0.5 * dt * k2v, model)
    k4u, k4v = rhs(u + dt * k3u, v + dt * k3v, model)
    un = u + dt / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
    vn = v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return un, vn


def _apply_floor(w: np.ndarray, max_fraction: float) -> int:
    """Clip negative sites to zero; fail if too many are beyond roundoff."""
    neg = w < 0.0
    if not np.any(neg):
        return 0
    scale = max(1.0, float(np.max(np.abs(w))))
    bad = int(np.sum(w < -CLIP_TOL * scale))
    if bad > max_fraction * len(w):
        raise NegativityFault(f"{bad} of {len(w)} sites dropped below the roundoff floor")
    w[neg] = 0.0
    return int(np.sum(neg))


def step(state: SemiDiscreteState, model: model_mod.RateModel, dt: float,
         c_cfl: float = DEFAULT_CFL,
         max_clip_fraction: float = MAX_CLIP_FRACTION) -> SemiDiscreteState:
    """One RK4 step of both densities; rejects steps beyond the stability limit."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    limit = stable_dt(state, model, c_cfl)
    if dt > limit * (1.0 + 1e-12):
        raise StepRejected(f"dt {dt:.3e} exceeds stability limit {limit:.3e}")
    un, vn = _rk4(state.u, state.v, model, dt)
    nxt = SemiDiscreteState(un, vn, state.t + dt)
    clipped = _apply_floor(nxt.u, max_clip_fraction)
    clipped += _apply_floor(nxt.v, max_clip_fraction)
    nxt.clipped_sites = clipped
    return nxt


@dataclass
class Diagnostics:
    """Mass statistics accumulated over every accepted step."""

    sup_l1_u: float = 0.0
    sup_l1_v: float = 0.0
    int_u_lam1_minus: float = 0.0
    int_v_lam2_minus: float = 0.0
    n_steps: int = 0
    n_clipped_sites: int = 0
    envelope_c_u: float = 0.0
    envelope_c_v: float = 0.0


@dataclass
class IntegrationResult:
    times: np.ndarray
    u: np.ndarray
    v: np.ndarray
    diagnostics: Diagnostics

    @property
    def final(self) -> SemiDiscreteState:
        return SemiDiscreteState(self.u[-1].copy(), self.v[-1].copy(), float(self.times[-1]))

    def at(self, t: float):
        """Linearly interpolated densities at time t."""
        times = self.times
        if not times[0] <= t <= times[-1] + 1e-12:
            raise ValueError(f"time {t} outside [{times[0]}, {times[-1]}]")
        i = int(np.searchsorted(times, t, side="right") - 1)
        if i >= len(times) - 1:
            return self.u[-1].copy(), self.v[-1].copy()
        w = (t - times[i]) / (times[i + 1] - times[i])
        return ((1 - w) * self.u[i] + w * self.u[i + 1],
                (1 - w) * self.v[i] + w * self.v[i + 1])


def integrate(state0: SemiDiscreteState, model: model_mod.RateModel, T: float,
              n_snapshots: int = 129, c_cfl: float = DEFAULT_CFL,
              max_clip_fraction: float = MAX_CLIP_FRACTION) -> IntegrationResult:
    """Advance to time T with stability-limited steps, landing on snapshot times.

    Rejected steps are retried at half size.  Diagnostics track the running
    sup of each species' l1 norm, the time integrals of the mean negative
    reaction parts, and the mass-envelope ratios
    (sup l1 + integral) / (e^(rho0 T) * initial l1).
    """
    state = state0.copy()
    l1_u0, l1_v0 = grid.norm_p(state.u, 1), grid.norm_p(state.v, 1)
    snap_times = state0.t + np.linspace(0.0, T, n_snapshots)
    us = np.empty((n_snapshots, state.m))
    vs = np.empty((n_snapshots, state.m))
    us[0], vs[0] = state.u, state.v
    diag = Diagnostics(sup_l1_u=l1_u0, sup_l1_v=l1_v0)

    def neg_means(st):
        lam1 = np.minimum(model.lambda1(st.u, st.v), 0.0)
        lam2 = np.minimum(model.lambda2(st.u, st.v), 0.0)
        return -grid.mean(st.u * lam1), -grid.mean(st.v * lam2)

    prev_g1, prev_g2 = neg_means(state)
    for i in range(1, n_snapshots):
        target = snap_times[i]
        while state.t < target - 1e-14:
            dt = min(stable_dt(state, model, c_cfl), target - state.t)
            for _ in range(40):
                try:
                    nxt = step(state, model, dt, c_cfl, max_clip_fraction)
                    break
                except StepRejected:
                    dt *= 0.5
            else:
                raise StepRejected("step size collapsed during integration")
            g1, g2 = neg_means(nxt)
            diag.int_u_lam1_minus += 0.5 * dt * (prev_g1 + g1)
            diag.int_v_lam2_minus += 0.5 * dt * (prev_g2 + g2)
            prev_g1, prev_g2 = g1, g2
            diag.sup_l1_u = max(diag.sup_l1_u, grid.norm_p(nxt.u, 1))
            diag.sup_l1_v = max(diag.sup_l1_v, grid.norm_p(nxt.v, 1))
            diag.n_steps += 1
            diag.n_clipped_sites += getattr(nxt, "clipped_sites", 0)
            state = nxt
        state.t = target
        us[i], vs[i] = state.u, state.v
    envelope = float(np.exp(model.rho0 * T))
    if l1_u0 > 0:
        diag.envelope_c_u = (diag.sup_l1_u + diag.int_u_lam1_minus) / (envelope * l1_u0)
    if l1_v0 > 0:
        diag.envelope_c_v = (diag.sup_l1_v + diag.int_v_lam2_minus) / (envelope * l1_v0)
    return IntegrationResult(snap_times, us, vs, diag)


def _model_hash(model: model_mod.RateModel) -> str:
    ident = {
        "name": model.name,
        "constants": [model.alpha1, model.alpha2, model.lip_mu1, model.lip_mu2,
                      model.rho0, model.alpha_dom],
        "affine": None if model.affine is None else model.affine.as_array().tolist(),
    }
    return hashlib.sha256(json.dumps(ident, sort_keys=True).encode()).hexdigest()[:16]


_REF_MAGIC = b"TDREF001"


@dataclass
class ReferenceSolution:
    """Fine-grid solution standing in for the exact continuum solution.

    The continuum problem has no closed form, so convergence studies measure
    against a much finer grid (at least 4x the largest grid under study); the
    leftover surrogate error is estimated separately by comparing with a
    half-resolution run (Richardson style) and reported, never hidden.
    """

    m_ref: int
    T: float
    times: np.ndarray
    u: np.ndarray
    v: np.ndarray
    model_hash: str
    sup_u: float
    sup_v: float
    smallness_margin: float
    richardson: dict = field(default_factory=dict)

    def state_at(self, t: float):
        res = IntegrationResult(self.times, self.u, self.v, Diagnostics())
        return res.at(t)

    def restrict_to(self, m: int, t: float):
        """Coarse-grid samples of both densities at time t; m must divide m_ref."""
        if self.m_ref % m != 0:
            raise ValueError(f"{m} does not divide the reference grid {self.m_ref}")
        stride = self.m_ref // m
        u, v = self.state_at(t)
        return u[::stride].copy(), v[::stride].copy()

    def save(self, path) -> None:
        header = {
            "format": "torusdiff-reference",
            "version": 1,
            "m_ref": self.m_ref,
            "T": self.T,
            "model_hash": self.model_hash,
            "times": self.times.tolist(),
            "sup_u": self.sup_u,
            "sup_v": self.sup_v,
            "smallness_margin": self.smallness_margin,
            "richardson": self.richardson,
        }
        blob = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(_REF_MAGIC)
            fh.write(np.uint32(len(blob)).tobytes())
            fh.write(blob)
            fh.write(np.ascontiguousarray(self.u, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.v, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "ReferenceSolution":
        with open(path, "rb") as fh:
            data = fh.read()
        buf = io.BytesIO(data)
        if buf.read(8) != _REF_MAGIC:
            raise ValueError("not a reference snapshot file")
        (hlen,) = np.frombuffer(buf.read(4), dtype=np.uint32)
        header = json.loads(buf.read(int(hlen)).decode())
        if header.get("version") != 1:
            raise ValueError(f"unsupported snapshot version {header.get('version')}")
        times = np.asarray(header["times"], dtype=float)
        n, m = len(times), header["m_ref"]
        u = np.frombuffer(buf.read(n * m * 8), dtype="<f8").reshape(n, m).copy()
        v = np.frombuffer(buf.read(n * m * 8), dtype="<f8").reshape(n, m).copy()
        return cls(m_ref=m, T=header["T"], times=times, u=u, v=v,
                   model_hash=header["model_hash"], sup_u=header["sup_u"],
                   sup_v=header["sup_v"], smallness_margin=header["smallness_margin"],
                   richardson=header.get("richardson", {}))


def _initial_values(init, m):
    if isinstance(init, interp.TorusFn):
        return interp.restrict(init, m)
    if callable(init):
        return np.asarray(init(np.arange(m) / m), dtype=float)
    return grid.grid_fn(init, m)


def make_reference(model: model_mod.RateModel, u0, v0, T: float, m_ref: int,
                   m_max: int | None = None, n_snapshots: int = 129,
                   with_richardson: bool = True) -> ReferenceSolution:
    """Integrate on a fine grid and package the result for reuse.

    ``u0``/``v0`` may be circle functions, samplers, or plain arrays already
    on the fine grid.  The run tracks sup norms and fails if their product
    ever crosses the model's smallness threshold, since every error estimate
    downstream is conditional on that regime.
    """
    if m_max is not None and m_ref < 4 * m_max:
        raise ValueError(f"reference grid {m_ref} must be at least 4x the largest study grid {m_max}")
    u_init = _initial_values(u0, m_ref)
    v_init = _initial_values(v0, m_ref)
    if np.min(u_init) < 0 or np.min(v_init) < 0:
        raise ValueError("initial data must be non-negative")
    res = integrate(SemiDiscreteState(u_init, v_init), model, T, n_snapshots)
    sup_u = float(np.max(res.u))
    sup_v = float(np.max(res.v))
    small = model_mod.check_smallness(model, sup_u, sup_v)
    if not small.holds:
        raise SmallnessViolated(
            f"sup-norm product {sup_u * sup_v:.4g} reached threshold {small.threshold:.4g}")
    ref = ReferenceSolution(
        m_ref=m_ref, T=float(T), times=res.times, u=res.u, v=res.v,
        model_hash=_model_hash(model), sup_u=sup_u, sup_v=sup_v,
        smallness_margin=float(small.margin),
    )
    if with_richardson and m_ref % 2 == 0 and m_ref // 2 >= 2:
        half = integrate(
            SemiDiscreteState(u_init[::2].copy(), v_init[::2].copy()),
            model, T, n_snapshots)
        diff = max(
            float(np.max(np.sqrt(np.mean((res.u[i, ::2] - half.u[i]) ** 2, axis=-1))))
            for i in range(len(res.times))
        ) + max(
            float(np.max(np.sqrt(np.mean((res.v[i, ::2] - half.v[i]) ** 2, axis=-1))))
            for i in range(len(res.times))
        )
        # Second-order spatial scheme: fine-grid error is about a third of
        # the fine/half-resolution gap.
        ref.richardson = {"m_half": m_ref // 2, "gap_l2": diff, "error_estimate": diff / 3.0}
    return ref


def _time_field(spec, m):
    """Normalize a time-indexed grid field: callable, constant array, or None."""
    if spec is None:
        zero = np.zeros(m)
        return lambda t: zero
    if callable(spec):
        return lambda t: grid.grid_fn(np.asarray(spec(t), dtype=float), m)
    arr = grid.grid_fn(spec, m)
    return lambda t: arr


@dataclass
class KolmogorovPath:
    """Realized solution of the linear equation, kept densely for auditing.

    ``times`` may contain duplicated entries at jump instants: the first
    carries the pre-jump state and the second the post-jump state, so
    trapezoid quadrature over the stored path is exact across jumps.
    """

    m: int
    times: np.ndarray
    z: np.ndarray
    jumps: list
    mu_fn: object
    f_fn: object
    r_fn: object
    alpha: float


def kolmogorov_solve(mu, f, r, z0, T: float, jumps=None,
                     c_cfl: float = DEFAULT_CFL) -> KolmogorovPath:
    """Solve dz/dt = Lap(mu z) + Lap(f) + r with optional additive jumps.

    ``mu``, ``f``, ``r`` are time-indexed grid fields (callables of t, constant
    arrays, or None for zero).  Jumps are (t_k, a_k) pairs applied atomically;
    step boundaries snap to the jump times.  The returned path records every
    accepted step, the jump bookkeeping, and the sampled lower bound of mu.
    """
    z = grid.grid_fn(z0).astype(float).copy()
    m = len(z)
    mu_fn, f_fn, r_fn = _time_field(mu, m), _time_field(f, m), _time_field(r, m)
    jump_list = sorted([(float(tk), grid.grid_fn(ak, m).copy()) for tk, ak in (jumps or [])])
    if any(not 0.0 < tk <= T for tk, _ in jump_list):
        raise ValueError("jump times must lie in (0, T]")

    def deriv(t, zz):
        return grid.laplacian_apply(mu_fn(t) * zz + f_fn(t)) + r_fn(t)

    alpha = float(np.min(mu_fn(0.0)))
    if alpha <= 0:
        raise ValueError("mu must be positive")
    times = [0.0]
    zs = [z.copy()]
    recorded_jumps = []
    pending = list(jump_list)
    t = 0.0
    while t < T - 1e-14:
        mu_now = mu_fn(t)
        alpha = min(alpha, float(np.min(mu_now)))
        if alpha <= 0:
            raise ValueError("mu lost positivity during the run")
        limit = c_cfl / (4.0 * m * m * float(np.max(mu_now)))
        t_stop = pending[0][0] if pending else T
        dt = min(limit, t_stop - t, T - t)
        if dt <= 0:
            dt = limit
        k1 = deriv(t, z)
        k2 = deriv(t + 0.5 * dt, z + 0.5 * dt * k1)
        k3 = deriv(t + 0.5 * dt, z + 0.5 * dt * k2)
        k4 = deriv(t + dt, z + dt * k3)
        z = z + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += dt
        times.append(t)
        zs.append(z.copy())
        while pending and t >= pending[0][0] - 1e-14:
            tk, ak = pending.pop(0)
            recorded_jumps.append((tk, ak, z.copy()))
            z = z + ak
            times.append(t)
            zs.append(z.copy())
    return KolmogorovPath(m=m, times=np.asarray(times), z=np.asarray(zs),
                          jumps=recorded_jumps, mu_fn=mu_fn, f_fn=f_fn,
                          r_fn=r_fn, alpha=alpha)


@dataclass
class DualityReport:
    lhs: float
    rhs: float
    passed: bool
    margin: float
    terms: dict = field(default_factory=dict)


def duality_check(path: KolmogorovPath, plan: grid.SpectralPlan | None = None,
                  tol_abs: float = 1e-6, tol_rel: float = 1e-3) -> DualityReport:
    """Evaluate both sides of the discrete duality inequality on a realized path.

    Left side: final squared dual norm plus the space-time integral of
    mu * z^2.  Right side: initial squared dual norm, the mean term
    (integral of [z]^2 [mu]), the (1/alpha) integral of f^2, twice the
    integral of the dual pairing of z with the direct source, and the jump
    terms (squared dual norms plus twice the pre-jump pairings).
    """
    plan = plan or grid.SpectralPlan(path.m)
    times, zs = path.times, path.z
    n = len(times)
    mu_z2 = np.empty(n)
    mean_term = np.empty(n)
    f_sq = np.empty(n)
    cross = np.empty(n)
    for i in range(n):
        t, z = times[i], zs[i]
        mu_t, f_t, x_t = path.mu_fn(t), path.f_fn(t), path.r_fn(t)
        mu_z2[i] = grid.mean(mu_t * z * z)
        mean_term[i] = grid.mean(z) ** 2 * grid.mean(mu_t)
        f_sq[i] = grid.mean(f_t * f_t)
        cross[i] = grid.h_minus1_inner(z, x_t, plan)
    lhs = grid.h_minus1_norm_sq(zs[-1], plan) + float(np.trapezoid(mu_z2, times))
    jump_sq = sum(grid.h_minus1_norm_sq(ak, plan) for _, ak, _ in path.jumps)
    jump_cross = sum(grid.h_minus1_inner(z_pre, ak, plan) for _, ak, z_pre in path.jumps)
    terms = {
        "initial": grid.h_minus1_norm_sq(zs[0], plan),
        "mean": float(np.trapezoid(mean_term, times)),
        "source_sq": float(np.trapezoid(f_sq, times)) / path.alpha,
        "cross": 2.0 * float(np.trapezoid(cross, times)),
        "jump_sq": float(jump_sq),
        "jump_cross": 2.0 * float(jump_cross),
    }
    rhs = sum(terms.values())
    tol = tol_abs + tol_rel * abs(rhs)
    return DualityReport(lhs=float(lhs), rhs=float(rhs),
                         passed=bool(lhs <= rhs + tol),
                         margin=float(rhs - lhs), terms=terms)
