"""Ensemble statistics over replica runs.

Verifies the probabilistic estimates empirically: moment growth envelopes,
dual-norm martingale bounds, large-deviation frequencies for counting
processes against their cumulative intensities, and intensity envelopes.
The underlying constants are non-explicit, so every check here measures
functional form (monotonicity, decay slopes, uniform ratios) rather than
absolute constants; frequencies carry exact Clopper-Pearson intervals and
means use 4-sigma bands.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from . import grid

MIN_REPLICAS = 30


class InsufficientReplicas(ValueError):
    """Fewer replicas than the minimum for a meaningful ensemble estimate."""


def clopper_pearson(hits: int, n: int, conf: float = 0.95) -> tuple:
    """Exact binomial confidence interval for a frequency."""
    if not 0 <= hits <= n or n <= 0:
        raise ValueError("need 0 <= hits <= n, n > 0")
    alpha = 1.0 - conf
    lo = 0.0 if hits == 0 else float(sps.beta.ppf(alpha / 2, hits,
                                                  n - hits + 1))
    hi = 1.0 if hits == n else float(sps.beta.ppf(1 - alpha / 2, hits + 1,
                                                  n - hits))
    return lo, hi


@dataclass
class EnsembleSummary:
    """Per-time ensemble statistics of scalar path observables."""

    n_replicas: int
    times: np.ndarray
    observables: dict
    envelope: dict = field(default_factory=dict)
    ratios: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, obs in self.observables.items():
            if (np.asarray(obs["var"]) < 0).any():
                raise ValueError(f"negative variance for {name}")
            qs = np.stack([obs["q05"], obs["q50"], obs["q95"]])
            if (np.diff(qs, axis=0) < 0).any():
                raise ValueError(f"non-monotone quantiles for {name}")

    def rows(self):
        """Flat (observable, t, mean, var, q05, q50, q95, ci95) rows."""
        out = []
        for name in sorted(self.observables):
            obs = self.observables[name]
            for i, t in enumerate(self.times):
                out.append((name, float(t), float(obs["mean"][i]),
                            float(obs["var"][i]), float(obs["q05"][i]),
                            float(obs["q50"][i]), float(obs["q95"][i]),
                            float(obs["ci95"][i])))
        return out

    def to_json(self) -> dict:
        return {
            "n_replicas": self.n_replicas,
            "times": [float(t) for t in self.times],
            "observables": {
                name: {key: [float(x) for x in val]
                       for key, val in obs.items()}
                for name, obs in self.observables.items()},
            "envelope": {k: float(v) for k, v in self.envelope.items()},
            "ratios": {k: float(v) for k, v in self.ratios.items()},
        }


@dataclass
class DeviationReport:
    """Frequency of a relative-deviation event with its analytic bound."""

    epsilon: float
    k_threshold: float
    observed_freq: float
    bound_value: float
    ci_low: float
    ci_high: float
    n_replicas: int
    n_hits: int

    def __post_init__(self):
        if not 0.0 <= self.observed_freq <= 1.0:
            raise ValueError("frequency must lie in [0, 1]")

    def to_json(self) -> dict:
        return {key: getattr(self, key) for key in
                ("epsilon", "k_threshold", "observed_freq", "bound_value",
                 "ci_low", "ci_high", "n_replicas", "n_hits")}


@dataclass
class EnvelopeReport:
    """Exceedance statistics of the discounted intensity-plus-mass sup."""

    c_hat: float
    threshold: float
    exceedance_freq: float
    ci_low: float
    ci_high: float
    n_replicas: int
    sup_stats: np.ndarray


def _shared_times(traces):
    if not traces:
        raise ValueError("no traces given")
    times = np.asarray(traces[0].times, dtype=float)
    for tr in traces[1:]:
        if tr.m != traces[0].m or tr.n_scale != traces[0].n_scale:
            raise ValueError("traces must share the grid configuration")
        if not np.array_equal(np.asarray(tr.times), times):
            raise ValueError("traces must share sample times")
    return times


def _require(traces):
    if len(traces) < MIN_REPLICAS:
        raise InsufficientReplicas(
            f"{len(traces)} replicas < minimum {MIN_REPLICAS}")


def _stats_block(X, n_replicas):
    # X has shape (replicas, times)
    var = X.var(axis=0, ddof=1) if n_replicas > 1 else np.zeros(X.shape[1])
    q05, q50, q95 = np.quantile(X, [0.05, 0.5, 0.95], axis=0)
    return {"mean": X.mean(axis=0), "var": var,
            "q05": q05, "q50": q50, "q95": q95,
            "ci95": 1.96 * np.sqrt(var / n_replicas)}


def _fit_envelope(times, means):
    """Least-squares (rate, prefactor) for means ~ prefactor * exp(rate t)."""
    mask = means > 0
    if mask.sum() < 2:
        return 0.0, float(means[0]) if len(means) else 0.0
    slope, intercept = np.polyfit(times[mask], np.log(means[mask]), 1)
    return float(slope), float(math.exp(intercept))


def moment_report(traces, p: float = 1.0) -> EnsembleSummary:
    """Ensemble p-th moments of the rescaled l1 masses of both species.

    Reports per-time statistics of |U(t)|_1^p, |V(t)|_1^p and their sum,
    plus a fitted exponential envelope (rate, prefactor) for the sum; the
    growth estimate asserts rate <= a constant depending only on the net
    reaction cap, never an absolute level.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    _require(traces)
    times = _shared_times(traces)
    R = len(traces)
    mu = np.empty((R, len(times)))
    mv = np.empty((R, len(times)))
    for r, tr in enumerate(traces):
        for i in range(len(times)):
            mu[r, i] = grid.norm_p(tr.u[i], 1.0) ** p
            mv[r, i] = grid.norm_p(tr.v[i], 1.0) ** p
    total = mu + mv
    observables = {"u_l1_p": _stats_block(mu, R),
                   "v_l1_p": _stats_block(mv, R),
                   "total_p": _stats_block(total, R)}
    rate, pref = _fit_envelope(times, observables["total_p"]["mean"])
    return EnsembleSummary(n_replicas=R, times=times,
                           observables=observables,
                           envelope={"rate": rate, "prefactor": pref,
                                     "p": float(p)})


def martingale_report(traces) -> EnsembleSummary:
    """Dual-norm martingale statistics against their 1/N moment bound.

    Per species reports E[sup |mart|^2_{-1}] over time, the running sup of
    the quadratic-compensation path |H|, and the bound functional
    (1/N) E[int 1 + |U|^2 + |V|^2 ds]; the ratios entry holds lhs/rhs at
    the final time, which the estimate asserts is bounded uniformly over
    configurations.
    """
    _require(traces)
    times = _shared_times(traces)
    R = len(traces)
    if any(tr.tracker is None for tr in traces):
        raise ValueError("traces must carry martingale trackers")
    n_scale = traces[0].n_scale
    sup1 = np.array([tr.tracker.sup_mart_sq[0] for tr in traces])
    sup2 = np.array([tr.tracker.sup_mart_sq[1] for tr in traces])
    h1 = np.array([np.maximum.accumulate(np.abs(tr.tracker.h_path[0]))
                   for tr in traces])
    h2 = np.array([np.maximum.accumulate(np.abs(tr.tracker.h_path[1]))
                   for tr in traces])
    rhs = np.array([tr.tracker.moment_integral for tr in traces]) / n_scale
    observables = {"sup_mart1_sq": _stats_block(sup1, R),
                   "sup_mart2_sq": _stats_block(sup2, R),
                   "sup_h1": _stats_block(h1, R),
                   "sup_h2": _stats_block(h2, R),
                   "moment_bound": _stats_block(rhs, R)}
    T = float(times[-1]) if len(times) else 0.0
    rhs_T = float(rhs[:, -1].mean())
    h_scale = math.sqrt((1.0 + T * T) / n_scale)
    ratios = {}
    for name, arr in (("mart1", sup1), ("mart2", sup2)):
        ratios[name] = (float(arr[:, -1].mean()) / rhs_T if rhs_T > 0
                        else 0.0)
    for name, arr in (("h1", h1), ("h2", h2)):
        ratios[name] = float(arr[:, -1].mean()) / h_scale
    return EnsembleSummary(n_replicas=R, times=times,
                           observables=observables, ratios=ratios)


# ---------------------------------------------------------------------------
# large deviations of counting processes


def poisson_rate_function(epsilon: float) -> float:
    """Legendre transform h(eps) = (1+eps) log(1+eps) - eps of the unit
    Poisson; the Chernoff bound for the upper tail at time K is
    exp(-K h(eps))."""
    return (1.0 + epsilon) * math.log1p(epsilon) - epsilon


def _deviation_hit(arrivals, horizon, epsilon, k) -> bool:
    """Whether |N(s) - s| >= eps*s somewhere on [k, horizon].

    N is the counting process with the given arrival coordinates.  Between
    arrivals N - s falls linearly and jumps up by one, so the upper excess
    is maximal at interval starts and the lower excess at interval ends;
    checking the endpoints of every interval is exact, no time grid needed.
    """
    s = np.asarray(arrivals, dtype=float)
    spad = np.concatenate([[0.0], s, [np.inf]])
    jj = np.arange(len(s) + 1, dtype=float)
    t_hi = np.minimum(spad[1:], horizon)
    t_lo = np.maximum(spad[:-1], k)
    valid = t_hi > t_lo
    low = valid & ((1.0 - epsilon) * t_hi >= jj)
    up = valid & (jj >= (1.0 + epsilon) * t_lo)
    return bool(np.any(low | up))


def ld_poisson_check(epsilon: float, k_grid, n_replicas: int, *,
                     horizon_factor: float = 3.0, seed: int = 0,
                     batch: int = 20000) -> list:
    """Deviation frequencies of unit-rate Poisson paths past each threshold.

    For each K the event is |P(t) - t| >= eps*t for some t in
    [K, horizon_factor*K]; the scan is event-exact (interval endpoints),
    and the truncation loses only the exponentially small tail beyond the
    horizon.  Returns one DeviationReport per K with the explicit Chernoff
    value 2 exp(-K h(eps)) as the analytic reference.
    """
    if not 0.0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 1/2)")
    if n_replicas < 1:
        raise ValueError("need at least one replica")
    rng = np.random.Generator(np.random.Philox(key=seed))
    reports = []
    for k in k_grid:
        k = float(k)
        horizon = horizon_factor * k
        jmax = int(horizon + 10.0 * math.sqrt(horizon) + 20)
        jj = np.arange(jmax, dtype=float)
        hits = 0
        done = 0
        while done < n_replicas:
            nb = min(batch, n_replicas - done)
            arr = np.cumsum(rng.exponential(size=(nb, jmax)), axis=1)
            spad = np.concatenate([np.zeros((nb, 1)), arr], axis=1)
            t_hi = np.minimum(spad[:, 1:], horizon)
            t_lo = np.maximum(spad[:, :-1], k)
            valid = t_hi > t_lo
            low = valid & ((1.0 - epsilon) * t_hi >= jj)
            up = valid & (jj >= (1.0 + epsilon) * t_lo)
            hits += int(np.any(low | up, axis=1).sum())
            done += nb
        lo, hi = clopper_pearson(hits, n_replicas)
        reports.append(DeviationReport(
            epsilon=epsilon, k_threshold=k,
            observed_freq=hits / n_replicas,
            bound_value=2.0 * math.exp(-k * poisson_rate_function(epsilon)),
            ci_low=lo, ci_high=hi,
            n_replicas=n_replicas, n_hits=hits))
    return reports


_CLASSES = {"births1": (1, 2, "ib1", "nb1"), "deaths1": (1, 3, "id1", "nd1"),
            "births2": (2, 2, "ib2", "nb2"), "deaths2": (2, 3, "id2", "nd2")}


def ld_process_check(traces, which: str, epsilon: float,
                     k: float) -> DeviationReport:
    """Deviation frequency of one jump class against its intensity.

    Uses raw (site-sum) counts and intensities, under which the compensated
    count is a martingale and the time change s = I_A(t) turns the count
    into a unit-rate Poisson path; the scan then reuses the Poisson event
    geometry with the recorded per-event intensities as arrival
    coordinates.  Falls back to a sample-grid scan for traces without an
    event log.  The analytic reference is (1 + 1/(eps^3 K)) exp(-eps^2 K)
    with unit constants, form only.
    """
    if which not in _CLASSES:
        raise ValueError(f"unknown class {which!r}")
    if not 0.0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 1/2)")
    sp_want, kind_want, ikey, nkey = _CLASSES[which]
    hits = 0
    for tr in traces:
        scale = tr.m * tr.n_scale
        i_end = float(tr.account_path[ikey][-1]) * scale
        if tr.events is not None:
            mask = ((tr.events["sp"] == sp_want)
                    & (tr.events["cls"] == kind_want))
            arrivals = tr.events["int"][mask] * scale
            hit = _deviation_hit(arrivals, i_end, epsilon, k)
        else:
            ii = np.asarray(tr.account_path[ikey], dtype=float) * scale
            nn = np.asarray(tr.account_path[nkey], dtype=float)
            window = ii >= k
            hit = bool(np.any(window & (np.abs(nn - ii) >= epsilon * ii)))
        hits += hit
    lo, hi = clopper_pearson(hits, len(traces))
    bound = (1.0 + 1.0 / (epsilon ** 3 * k)) * math.exp(-epsilon
                                                        * epsilon * k)
    return DeviationReport(
        epsilon=epsilon, k_threshold=float(k),
        observed_freq=hits / len(traces), bound_value=bound,
        ci_low=lo, ci_high=hi, n_replicas=len(traces), n_hits=hits)


def compensation_report(traces) -> dict:
    """Max |z|-score over time of mean[N_A - raw I_A] for each jump class.

    The compensated count is a mean-zero martingale, so every entry should
    sit within a few sigma of zero; degenerate classes (variance zero with
    zero mean) report 0.
    """
    _shared_times(traces)
    R = len(traces)
    scale = traces[0].m * traces[0].n_scale
    out = {}
    for which, (_, _, ikey, nkey) in _CLASSES.items():
        D = np.array([np.asarray(tr.account_path[nkey], dtype=float)
                      - np.asarray(tr.account_path[ikey], dtype=float)
                      * scale for tr in traces])
        mean = D.mean(axis=0)
        se = D.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else \
            np.zeros_like(mean)
        z = np.zeros_like(mean)
        nz = se > 0
        z[nz] = mean[nz] / se[nz]
        if np.any(~nz & (mean != 0)):
            z[~nz & (mean != 0)] = np.inf
        out[which] = float(np.max(np.abs(z))) if len(z) else 0.0
    return out


def intensity_envelope_check(traces, k0: float) -> EnvelopeReport:
    """Exceedance frequency of sup_s (I_B + I_D + [U(s)]) e^{-c_hat s}.

    The discount rate c_hat is fitted to the ensemble mean of the
    undiscounted statistic; the threshold is k0 itself.  The lower-bound
    corollary says this sup cannot be small, and the matching upper
    deviation estimate says exceedance above a large threshold decays in
    M*N; both are checked as frequencies by the callers.
    """
    times = _shared_times(traces)
    R = len(traces)
    X = np.empty((R, len(times)))
    for r, tr in enumerate(traces):
        ib = np.asarray(tr.account_path["ib1"], dtype=float)
        idd = np.asarray(tr.account_path["id1"], dtype=float)
        mass = np.array([grid.mean(tr.u[i]) for i in range(len(times))])
        X[r] = ib + idd + mass
    c_hat, _ = _fit_envelope(times, X.mean(axis=0))
    c_hat = max(c_hat, 0.0)
    sup_stats = (X * np.exp(-c_hat * times)).max(axis=1)
    hits = int((sup_stats >= k0).sum())
    lo, hi = clopper_pearson(hits, R)
    return EnvelopeReport(c_hat=c_hat, threshold=float(k0),
                          exceedance_freq=hits / R,
                          ci_low=lo, ci_high=hi, n_replicas=R,
                          sup_stats=sup_stats)
