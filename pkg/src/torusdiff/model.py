"""Rate models: motion speeds, birth/death rates, and their validity checks.

A model couples two species.  Species 1 moves at speed ``mu1(v)`` set by the
local density of species 2 and reacts with net rate ``lambda1 = b1 - d1``;
species 2 mirrors this with ``mu2(u)``.  Alongside the callables, a model
declares the analytic constants the theory needs (motion lower bounds and
Lipschitz constants, a growth cap ``rho0``, and a birth-domination constant
``alpha_dom``), and this module provides sampling-based checks that the
callables actually honour the declared constants.

The compiled simulation engine only understands the affine family (motion
speed affine in the other density, birth/death affine in both densities), so
models optionally carry an :class:`AffineRates` table; models built from
:class:`SktParams` always do.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class DegenerateDiffusion(ValueError):
    """Raised when a diffusion coefficient that must be positive is zero."""


@dataclass(frozen=True)
class AffineRates:
    """Coefficient table for the affine rate family.

    mu1(v) = mu1_0 + mu1_1 * v              mu2(u) = mu2_0 + mu2_1 * u
    b1(u, v) = b1_0 + b1_u * u + b1_v * v   (same layout for b2, d1, d2)
    """

    mu1_0: float
    mu1_1: float
    mu2_0: float
    mu2_1: float
    b1: tuple[float, float, float] = (0.0, 0.0, 0.0)
    b2: tuple[float, float, float] = (0.0, 0.0, 0.0)
    d1: tuple[float, float, float] = (0.0, 0.0, 0.0)
    d2: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def as_array(self) -> np.ndarray:
        """Flat float64 layout consumed by the simulation engines."""
        return np.array(
            [self.mu1_0, self.mu1_1, self.mu2_0, self.mu2_1]
            + list(self.b1)
            + list(self.b2)
            + list(self.d1)
            + list(self.d2),
            dtype=float,
        )


def _affine2(c):
    c0, cu, cv = c
    return lambda u, v: c0 + cu * u + cv * v


@dataclass(frozen=True)
class RateModel:
    """Rate functions plus the declared constants they are supposed to obey."""

    mu1: Callable
    mu2: Callable
    b1: Callable
    b2: Callable
    d1: Callable
    d2: Callable
    alpha1: float
    alpha2: float
    lip_mu1: float
    lip_mu2: float
    lip_b1: float
    lip_b2: float
    lip_d1: float
    lip_d2: float
    rho0: float
    alpha_dom: float
    affine: AffineRates | None = None
    name: str = "custom"

    def __post_init__(self):
        if not 0.0 <= self.alpha_dom < 1.0:
            raise ValueError("alpha_dom must lie in [0, 1)")
        if self.alpha1 <= 0 or self.alpha2 <= 0:
            raise ValueError("motion lower bounds must be positive")

    def lambda1(self, u, v):
        return self.b1(u, v) - self.d1(u, v)

    def lambda2(self, u, v):
        return self.b2(u, v) - self.d2(u, v)

    def reaction1(self, u, v):
        return u * self.lambda1(u, v)

    def reaction2(self, u, v):
        return v * self.lambda2(u, v)


@dataclass(frozen=True)
class SktParams:
    """Coefficients of the two-species cross-diffusion competition system.

    Species 1 diffuses with coefficient ``d1 + a1 * v`` and reacts with
    ``u * (rho1 - s11 * u - s12 * v)``; species 2 symmetrically.  All entries
    are non-negative and at least the linear diffusion parts must be positive.
    """

    d1: float = 1.0
    d2: float = 1.0
    a1: float = 0.0
    a2: float = 0.0
    rho1: float = 0.0
    rho2: float = 0.0
    s11: float = 0.0
    s12: float = 0.0
    s21: float = 0.0
    s22: float = 0.0

    def __post_init__(self):
        vals = [self.d1, self.d2, self.a1, self.a2, self.rho1, self.rho2,
                self.s11, self.s12, self.s21, self.s22]
        if any(x < 0 for x in vals):
            raise ValueError("all coefficients must be non-negative")


def build_skt(params: SktParams) -> RateModel:
    """Rate model for the cross-diffusion system with competitive reactions.

    Motion lower bounds are the linear diffusion coefficients and motion
    Lipschitz constants the cross coefficients.  The reaction splits into a
    constant birth rate ``rho_i`` and a death rate linear in both densities,
    so birth domination holds with constant 0 and cap ``rho1 + rho2``.
    """
    p = params
    if p.d1 * p.d2 == 0:
        raise DegenerateDiffusion("both linear diffusion coefficients must be positive")
    aff = AffineRates(
        mu1_0=p.d1, mu1_1=p.a1, mu2_0=p.d2, mu2_1=p.a2,
        b1=(p.rho1, 0.0, 0.0), b2=(p.rho2, 0.0, 0.0),
        d1=(0.0, p.s11, p.s12), d2=(0.0, p.s21, p.s22),
    )
    return RateModel(
        mu1=lambda v: p.d1 + p.a1 * v,
        mu2=lambda u: p.d2 + p.a2 * u,
        b1=_affine2(aff.b1), b2=_affine2(aff.b2),
        d1=_affine2(aff.d1), d2=_affine2(aff.d2),
        alpha1=p.d1, alpha2=p.d2,
        lip_mu1=p.a1, lip_mu2=p.a2,
        lip_b1=0.0, lip_b2=0.0,
        lip_d1=float(np.hypot(p.s11, p.s12)),
        lip_d2=float(np.hypot(p.s21, p.s22)),
        rho0=p.rho1 + p.rho2,
        alpha_dom=0.0,
        affine=aff,
        name="skt",
    )


def build_affine(aff: AffineRates, rho0: float | None = None,
                 alpha_dom: float = 0.0, name: str = "affine") -> RateModel:
    """Rate model straight from an affine coefficient table.

    Used for the simple benchmark chains (pure death, pure birth, walkers)
    that the affine family covers but the competition parameterization does
    not.  ``rho0`` defaults to the tightest cap valid for all non-negative
    densities, which exists only when the net growth has no positive slope.
    """
    if aff.mu1_0 <= 0 or aff.mu2_0 <= 0:
        raise DegenerateDiffusion("constant motion terms must be positive")
    lam_u = aff.b1[1] - aff.d1[1] + aff.b2[1] - aff.d2[1]
    lam_v = aff.b1[2] - aff.d1[2] + aff.b2[2] - aff.d2[2]
    if rho0 is None:
        if lam_u > 0 or lam_v > 0:
            raise ValueError("net growth increases with density; pass rho0 explicitly")
        rho0 = aff.b1[0] - aff.d1[0] + aff.b2[0] - aff.d2[0]
    return RateModel(
        mu1=lambda v: aff.mu1_0 + aff.mu1_1 * v,
        mu2=lambda u: aff.mu2_0 + aff.mu2_1 * u,
        b1=_affine2(aff.b1), b2=_affine2(aff.b2),
        d1=_affine2(aff.d1), d2=_affine2(aff.d2),
        alpha1=aff.mu1_0, alpha2=aff.mu2_0,
        lip_mu1=abs(aff.mu1_1), lip_mu2=abs(aff.mu2_1),
        lip_b1=float(np.hypot(aff.b1[1], aff.b1[2])),
        lip_b2=float(np.hypot(aff.b2[1], aff.b2[2])),
        lip_d1=float(np.hypot(aff.d1[1], aff.d1[2])),
        lip_d2=float(np.hypot(aff.d2[1], aff.d2[2])),
        rho0=float(rho0),
        alpha_dom=alpha_dom,
        affine=aff,
        name=name,
    )


@dataclass(frozen=True)
class SmallnessReport:
    holds: bool
    margin: float
    threshold: float


def check_smallness(model: RateModel, u_inf: float, v_inf: float) -> SmallnessReport:
    """Check u_inf * v_inf < alpha1 * alpha2 / (L1 * L2).

    The threshold is infinite when either motion speed is constant, in which
    case the condition holds for any bounds.
    """
    if u_inf < 0 or v_inf < 0:
        raise ValueError("density bounds must be non-negative")
    ll = model.lip_mu1 * model.lip_mu2
    threshold = np.inf if ll == 0 else model.alpha1 * model.alpha2 / ll
    margin = threshold - u_inf * v_inf
    return SmallnessReport(holds=bool(margin > 0), margin=float(margin), threshold=float(threshold))


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst_violation: float
    detail: str = ""


@dataclass
class HypothesesReport:
    checks: list[CheckResult] = field(default_factory=list)
    fitted_constants: dict[str, float] = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def _sample_points(box, n_samples, rng):
    (u_lo, u_hi), (v_lo, v_hi) = box
    if not (u_hi > u_lo >= 0 and v_hi > v_lo >= 0):
        raise ValueError("sample box must be a non-degenerate rectangle in the first quadrant")
    side = max(2, int(np.sqrt(n_samples // 2)))
    gu, gv = np.meshgrid(np.linspace(u_lo, u_hi, side), np.linspace(v_lo, v_hi, side))
    us = np.concatenate([gu.ravel(), rng.uniform(u_lo, u_hi, n_samples)])
    vs = np.concatenate([gv.ravel(), rng.uniform(v_lo, v_hi, n_samples)])
    return us, vs


def _lsq_constant(lhs, rhs):
    """Least-squares c minimizing ||lhs - c * rhs||, clipped to be a valid cap."""
    denom = float(np.dot(rhs, rhs))
    if denom == 0.0:
        return 0.0
    c = float(np.dot(lhs, rhs)) / denom
    return max(c, 0.0)


def check_hypotheses(model: RateModel, sample_box=((0.0, 4.0), (0.0, 4.0)),
                     n_samples: int = 2000, seed: int = 0,
                     fit_ceiling: float = 1e3,
                     lipschitz_slack: float = 1.01) -> HypothesesReport:
    """Sample the box and test every declared bound of the model.

    Checks, each reported with its worst sampled violation:

    * motion lower bounds ``mu_i >= alpha_i``;
    * Lipschitz constants of ``mu_i`` and of the birth/death rates, via
      difference quotients on sampled pairs, allowing ``lipschitz_slack``;
    * growth cap ``lambda1 + lambda2 <= rho0``;
    * birth domination ``b_i <= rho0 + alpha_dom * d_i``;
    * the two quadratic bounds (on the negative parts of the net rates and on
      the death rates), whose hidden constants are fitted by least squares
      and must stay below ``fit_ceiling``.

    Sampling cannot prove a global statement; a pass means no violation was
    found on this box at this resolution.
    """
    rng = np.random.default_rng(seed)
    us, vs = _sample_points(sample_box, n_samples, rng)
    report = HypothesesReport()

    def add(name, violation, passed=None, detail=""):
        violation = float(violation)
        report.checks.append(CheckResult(
            name=name,
            passed=bool(violation <= 0.0) if passed is None else bool(passed),
            worst_violation=max(violation, 0.0),
            detail=detail,
        ))

    mu1_vals = np.asarray(model.mu1(vs), dtype=float)
    mu2_vals = np.asarray(model.mu2(us), dtype=float)
    add("mu1_lower_bound", model.alpha1 - mu1_vals.min())
    add("mu2_lower_bound", model.alpha2 - mu2_vals.min())

    # 1-D difference quotients for the motion speeds.
    for tag, vals, xs, declared in (
        ("mu1", mu1_vals, vs, model.lip_mu1),
        ("mu2", mu2_vals, us, model.lip_mu2),
    ):
        order = np.argsort(xs)
        dx = np.diff(xs[order])
        ok = dx > 1e-9
        quot = np.abs(np.diff(vals[order])[ok]) / dx[ok]
        worst = float(quot.max()) if quot.size else 0.0
        add(f"{tag}_lipschitz", worst - declared * lipschitz_slack,
            detail=f"sampled {worst:.6g} vs declared {declared:.6g}")

    # 2-D difference quotients for birth/death rates on random pairs.
    idx = rng.integers(0, len(us), size=(4 * n_samples, 2))
    p, q = idx[:, 0], idx[:, 1]
    dist = np.hypot(us[p] - us[q], vs[p] - vs[q])
    ok = dist > 1e-9
    for tag, fn, declared in (
        ("b1", model.b1, model.lip_b1), ("b2", model.b2, model.lip_b2),
        ("d1", model.d1, model.lip_d1), ("d2", model.d2, model.lip_d2),
    ):
        vals = np.asarray(fn(us, vs), dtype=float)
        if vals.shape != us.shape:
            vals = np.full_like(us, float(vals))
        quot = np.abs(vals[p][ok] - vals[q][ok]) / dist[ok]
        worst = float(quot.max()) if quot.size else 0.0
        add(f"{tag}_lipschitz", worst - declared * lipschitz_slack,
            detail=f"sampled {worst:.6g} vs declared {declared:.6g}")

    def as_field(fn):
        vals = np.asarray(fn(us, vs), dtype=float)
        return vals if vals.shape == us.shape else np.full_like(us, float(vals))

    b1v, b2v = as_field(model.b1), as_field(model.b2)
    d1v, d2v = as_field(model.d1), as_field(model.d2)
    lam1, lam2 = b1v - d1v, b2v - d2v
    add("growth_cap", float((lam1 + lam2).max()) - model.rho0)
    add("b1_domination", float((b1v - model.rho0 - model.alpha_dom * d1v).max()))
    add("b2_domination", float((b2v - model.rho0 - model.alpha_dom * d2v).max()))

    lam1m, lam2m = np.maximum(-lam1, 0.0), np.maximum(-lam2, 0.0)
    for tag, f1, f2 in (("negative_part_quadratic", lam1m, lam2m),
                        ("death_quadratic", d1v, d2v)):
        lhs = f1 * f1 + f2 * f2
        rhs = 1.0 + us * (1.0 + f1) + vs * (1.0 + f2)
        c = _lsq_constant(lhs, rhs)
        report.fitted_constants[tag] = c
        add(tag, c - fit_ceiling, detail=f"fitted constant {c:.6g}, ceiling {fit_ceiling:g}")

    return report
