"""Grid functions on the discrete circle and the norms built on them.

A grid function is a plain float64 array ``u`` of length ``m >= 2`` whose
entry ``u[j]`` is the value at site ``x_j = j/m``; all index arithmetic is
periodic.  This module provides the periodic second-difference operator,
its spectral inverse on mean-free functions, the rescaled ``l^p`` norms,
the negative-order dual norm derived from the inverse operator, and an
accumulator that maintains that dual norm under sparse updates in O(m).
"""

from __future__ import annotations

import numpy as np

# Relative tolerance used to decide whether a function counts as mean-free.
MEAN_FREE_RTOL = 1e-10


class NotMeanFree(ValueError):
    """Raised when an operation needs a mean-free input and the mean is too large."""


def grid_fn(values, m: int | None = None) -> np.ndarray:
    """Validate ``values`` as a grid function and return it as a float64 array.

    ``m``, if given, must match ``len(values)``.  Grids with fewer than two
    sites are rejected: the second-difference operator is identically zero on
    a single site and none of the spectral machinery applies there.
    """
    u = np.asarray(values, dtype=float)
    if u.ndim != 1:
        raise ValueError(f"grid function must be 1-D, got shape {u.shape}")
    if u.shape[0] < 2:
        raise ValueError("grid needs at least 2 sites")
    if m is not None and u.shape[0] != m:
        raise ValueError(f"expected {m} sites, got {u.shape[0]}")
    return u


def basis(m: int, j: int) -> np.ndarray:
    """Canonical basis vector with a single 1 at site ``j`` (mod m)."""
    e = np.zeros(m)
    e[j % m] = 1.0
    return e


def mean(u: np.ndarray) -> float:
    """Site average (1/m) sum_j u_j."""
    return float(np.mean(u))


def inner(u: np.ndarray, v: np.ndarray) -> float:
    """Rescaled l^2 inner product (1/m) sum_j u_j v_j."""
    return float(np.dot(u, v) / len(u))


def norm_p(u: np.ndarray, p: float) -> float:
    """Rescaled l^p norm ((1/m) sum |u_j|^p)^(1/p); max |u_j| for p = inf."""
    if p == np.inf:
        return float(np.max(np.abs(u)))
    if p < 1:
        raise ValueError("p must be >= 1 or inf")
    if p == 1:
        return float(np.mean(np.abs(u)))
    if p == 2:
        return float(np.sqrt(np.mean(u * u)))
    return float(np.mean(np.abs(u) ** p) ** (1.0 / p))


def laplacian_apply(u: np.ndarray) -> np.ndarray:
    """Periodic second difference m^2 (u_{j+1} + u_{j-1} - 2 u_j)."""
    m = len(u)
    return m * m * (np.roll(u, -1) + np.roll(u, 1) - 2.0 * u)


class SpectralPlan:
    """Precomputed eigen-data of the second-difference operator for one grid size.

    The operator is circulant, so a real FFT diagonalizes it with eigenvalues
    ``-lam_k`` where ``lam_k = 4 m^2 sin^2(pi k / m)``.  ``lam_0 = 0`` is simple
    and every other eigenvalue lies in ``[16, 4 m^2]``, which makes the operator
    invertible on mean-free functions.  A plan also stores ``green_column``,
    the mean-free solution ``g`` of ``laplacian_apply(g) = e_0 - 1/m``; by
    circulant symmetry the solution for any other (centered) basis vector is a
    cyclic shift of it, which is what makes O(m) incremental potential updates
    possible.  Plans are immutable and safe to share between threads/processes.
    """

    def __init__(self, m: int):
        if m < 2:
            raise ValueError("spectral plan needs at least 2 sites")
        self.m = int(m)
        k = np.arange(m)
        self.eigenvalues = 4.0 * m * m * np.sin(np.pi * k / m) ** 2
        # Eigenvalues matching numpy's rfft layout (k = 0 .. m//2).
        self._rfft_eigs = self.eigenvalues[: m // 2 + 1].copy()
        self.green_column = self._invert_centered(basis(m, 0) - 1.0 / m)
        # Potential of the centered basis vector: -Delta^{-1}(e_0 - 1/m).
        self.neg_green = -self.green_column
        # Dual norm of any single basis vector (translation invariant):
        # mean^2 contributes 1/m^2, the mean-free part contributes -g_0/m.
        self.e_norm_sq = 1.0 / (m * m) + self.neg_green[0] / m
        # Dual norm of a nearest-neighbour difference e_{j+1} - e_j.
        self.de_norm_sq = (
            2.0 * (self.neg_green[0] - self.neg_green[1]) / m
        )
        for arr in (self.eigenvalues, self._rfft_eigs, self.green_column, self.neg_green):
            arr.setflags(write=False)

    def _invert_centered(self, u: np.ndarray) -> np.ndarray:
        spec = np.fft.rfft(u)
        spec[0] = 0.0
        spec[1:] /= -self._rfft_eigs[1:]
        v = np.fft.irfft(spec, n=self.m)
        return v - v.mean()

    def invert(self, u: np.ndarray) -> np.ndarray:
        """Mean-free solution v of laplacian_apply(v) = u; u must be mean-free."""
        scale = norm_p(u, 2)
        if abs(float(np.mean(u))) > MEAN_FREE_RTOL * scale:
            raise NotMeanFree(
                f"mean {np.mean(u):.3e} exceeds {MEAN_FREE_RTOL:.0e} * l2 norm {scale:.3e}"
            )
        return self._invert_centered(u)

    def potential(self, u: np.ndarray) -> np.ndarray:
        """-(inverse operator) applied to the mean-free part of u."""
        return -self._invert_centered(u - np.mean(u))


def laplacian_invert(u: np.ndarray, plan: SpectralPlan) -> np.ndarray:
    """Unique mean-free v with laplacian_apply(v) = u, for mean-free u."""
    return plan.invert(grid_fn(u, plan.m))


def h_minus1_norm_sq(u: np.ndarray, plan: SpectralPlan) -> float:
    """Squared dual norm: mean(u)^2 + <u - mean, potential(u)>."""
    ubar = float(np.mean(u))
    return ubar * ubar + inner(u - ubar, plan.potential(u))


def h_minus1_inner(u: np.ndarray, v: np.ndarray, plan: SpectralPlan) -> float:
    """Dual inner product: mean(u) mean(v) + <u - mean, potential(v)>."""
    ubar = float(np.mean(u))
    vbar = float(np.mean(v))
    return ubar * vbar + inner(u - ubar, plan.potential(v))


def sparse_delta_potential(plan: SpectralPlan, sites, values) -> np.ndarray:
    """Potential of a sparse update, built from shifted copies of the plan column."""
    pot = np.zeros(plan.m)
    for j, w in zip(sites, values):
        pot += w * np.roll(plan.neg_green, j % plan.m)
    return pot


def sparse_delta_norm_sq(plan: SpectralPlan, sites, values) -> float:
    """Squared dual norm of a sparse update, in O(nnz^2) time."""
    m = plan.m
    dbar = float(sum(values)) / m
    acc = dbar * dbar
    for a, wa in zip(sites, values):
        for b, wb in zip(sites, values):
            acc += wa * wb * plan.neg_green[(a - b) % m] / m
    return acc


class HMinusOneAccumulator:
    """Running squared dual norm of a field under sparse increments.

    Holds the field mean, the potential of its mean-free part, and a cached
    squared norm.  ``increment`` applies an update supported on a handful of
    sites using the polarization identity

        |f + d|^2 = |f|^2 + 2 <f, d> + |d|^2

    where every term on the right is available in O(m) from the potential and
    shifted copies of the plan's stored column.  Confine each accumulator to a
    single execution context; the plan itself may be shared.
    """

    def __init__(self, plan: SpectralPlan, field: np.ndarray | None = None):
        self.plan = plan
        if field is None:
            self.mean = 0.0
            self.potential = np.zeros(plan.m)
            self.norm_sq = 0.0
        else:
            field = grid_fn(field, plan.m)
            self.mean = float(np.mean(field))
            self.potential = plan.potential(field)
            self.norm_sq = self.mean**2 + inner(field - self.mean, self.potential)

    def increment(self, sites, values) -> None:
        """Add the sparse update sum_k values[k] * e_{sites[k]} to the field."""
        plan = self.plan
        m = plan.m
        total = float(sum(values))
        if total == 0.0 and not any(values):
            return
        dbar = total / m
        # <f, d> = mean(f) mean(d) + (1/m) sum_j potential_f(j) d_j,
        # using that the potential is mean-free so the centering of d drops out.
        cross = self.mean * dbar
        for j, w in zip(sites, values):
            cross += self.potential[j % m] * w / m
        self.norm_sq += 2.0 * cross + sparse_delta_norm_sq(plan, sites, values)
        self.mean += dbar
        for j, w in zip(sites, values):
            if w:
                self.potential += w * np.roll(plan.neg_green, j % m)

    def value(self) -> float:
        return self.norm_sq


def h_minus1_increment(acc: HMinusOneAccumulator, delta) -> HMinusOneAccumulator:
    """Apply a sparse update to the accumulator and return it.

    ``delta`` is either a dense array (nonzero sites are extracted) or a
    ``(sites, values)`` pair.  Updates are expected to touch at most a couple
    of sites; cost is O(m) per nonzero site.
    """
    if isinstance(delta, tuple):
        sites, values = delta
    else:
        delta = np.asarray(delta, dtype=float)
        sites = np.flatnonzero(delta)
        values = delta[sites]
    acc.increment(sites, values)
    return acc
