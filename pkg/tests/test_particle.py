"""Exact-event simulation: distributions, identities, and tracked functionals."""

import io
import math

import numpy as np
import pytest

from torusdiff import grid, particle, semidiscrete
from torusdiff.model import AffineRates, SktParams, build_skt


def conservative_model():
    return build_skt(SktParams(d1=1.0, d2=1.0, a1=0.0, a2=0.0,
                               rho1=0.0, rho2=0.0))


def cross_model():
    return build_skt(SktParams(d1=0.5, d2=0.4, a1=0.3, a2=0.2, rho1=1.0,
                               rho2=0.8, s11=1.0, s12=0.5, s21=0.4, s22=1.0))


def bump(x):
    return 0.8 + 0.3 * np.cos(2 * np.pi * x)


def wave(x):
    return 0.6 + 0.2 * np.sin(2 * np.pi * x)


# ---------------------------------------------------------------------------
# replay oracle: rebuild every tracked functional from the event log alone,
# using the spectral grid routines instead of the engine's incremental
# potentials.


def replay_functionals(trace, model, reference=None):
    m, n = trace.m, trace.n_scale
    plan = grid.SpectralPlan(m)
    inv_n = 1.0 / n
    T = float(trace.times[-1])
    ev = trace.events
    c1 = np.rint(trace.u[0] * n)
    c2 = np.rint(trace.v[0] * n)
    if reference is None:
        rt = np.array([0.0, max(T, 1.0)])
        ru = np.zeros((2, m))
        rv = np.zeros((2, m))
    else:
        rt = reference.times
        ru = reference.u
        rv = reference.v

    def hat(t, rows):
        k = int(np.searchsorted(rt, t, side="right")) - 1
        k = min(max(k, 0), len(rt) - 2)
        span = rt[k + 1] - rt[k]
        w = 0.0 if span == 0 else (t - rt[k]) / span
        return (1.0 - w) * rows[k] + w * rows[k + 1]

    mu1, mu2, b1, b2, d1, d2 = particle._rate_callables(model)

    def fields():
        u = c1 * inv_n
        v = c2 * inv_n
        w1 = mu1(v) * u
        w2 = mu2(u) * v
        r1 = u * (b1(u, v) - d1(u, v))
        r2 = v * (b2(u, v) - d2(u, v))
        return (u, v,
                grid.laplacian_apply(w1) + r1,
                grid.laplacian_apply(w2) + r2)

    D = [np.zeros(m), np.zeros(m)]
    q = [0.0, 0.0]
    qv = [0.0, 0.0]
    intZ = [0.0, 0.0]
    supM = [0.0, 0.0]
    supZ = [0.0, 0.0]
    ib = {1: 0.0, 2: 0.0}
    idd = {1: 0.0, 2: 0.0}
    c0 = [c1.copy() * inv_n, c2.copy() * inv_n]

    def z_of(t, dens, rows):
        return dens - hat(t, rows)

    def eval_m_sup(i, dens):
        mart = (dens - c0[i]) - D[i]
        supM[i] = max(supM[i], grid.h_minus1_norm_sq(mart, plan))

    def eval_z_sup(i, t, dens, rows):
        supZ[i] = max(supZ[i], grid.h_minus1_norm_sq(z_of(t, dens, rows), plan))

    u, v, phi1, phi2 = fields()
    supZ[0] = grid.h_minus1_norm_sq(z_of(0.0, u, ru), plan)
    supZ[1] = grid.h_minus1_norm_sq(z_of(0.0, v, rv), plan)

    # merged breakpoints inside each inter-event interval
    marks = np.unique(np.concatenate([rt[(rt > 0) & (rt < T)],
                                      trace.times[(trace.times > 0)
                                                  & (trace.times < T)]]))

    def advance(t_from, t_to):
        nonlocal u, v, phi1, phi2
        if t_to <= t_from:
            return
        inner_marks = marks[(marks > t_from) & (marks < t_to)]
        pts = np.concatenate([[t_from], inner_marks, [t_to]])
        for a, b in zip(pts[:-1], pts[1:]):
            h = b - a
            if h <= 0:
                continue
            for i, (dens, phi, rows) in enumerate(((u, phi1, ru),
                                                   (v, phi2, rv))):
                fa = grid.h_minus1_inner(z_of(a, dens, rows), phi, plan)
                fb = grid.h_minus1_inner(z_of(b, dens, rows), phi, plan)
                q[i] -= h * 0.5 * (fa + fb)
                ga = grid.norm_p(z_of(a, dens, rows), 2) ** 2
                gm = grid.norm_p(z_of(0.5 * (a + b), dens, rows), 2) ** 2
                gb = grid.norm_p(z_of(b, dens, rows), 2) ** 2
                intZ[i] += h * (ga + 4.0 * gm + gb) / 6.0
        rates_b1 = float(np.sum(c1 * b1(u, v)))
        rates_d1 = float(np.sum(c1 * d1(u, v)))
        rates_b2 = float(np.sum(c2 * b2(u, v)))
        rates_d2 = float(np.sum(c2 * d2(u, v)))
        dt = t_to - t_from
        ib[1] += dt * rates_b1 / (m * n)
        idd[1] += dt * rates_d1 / (m * n)
        ib[2] += dt * rates_b2 / (m * n)
        idd[2] += dt * rates_d2 / (m * n)
        D[0] += dt * phi1
        D[1] += dt * phi2

    t = 0.0
    sample_iter = list(trace.times)
    for et, sp, kind, site in zip(ev["t"], ev["sp"], ev["cls"], ev["site"]):
        et = float(et)
        site = int(site)
        while sample_iter and sample_iter[0] <= et:
            ts = sample_iter.pop(0)
            advance(t, ts)
            t = ts
            eval_m_sup(0, u)
            eval_m_sup(1, v)
            eval_z_sup(0, t, u, ru)
            eval_z_sup(1, t, v, rv)
        advance(t, et)
        t = et
        eval_m_sup(0, u)
        eval_m_sup(1, v)
        eval_z_sup(0, t, u, ru)
        eval_z_sup(1, t, v, rv)
        i = 0 if sp == 1 else 1
        dens = u if i == 0 else v
        counts = c1 if i == 0 else c2
        theta = np.zeros(m)
        if kind < 2:
            dst = (site + 1) % m if kind == 0 else (site - 1) % m
            theta[site] -= inv_n
            theta[dst] += inv_n
            counts[site] -= 1
            counts[dst] += 1
        elif kind == 2:
            theta[site] += inv_n
            counts[site] += 1
        else:
            theta[site] -= inv_n
            counts[site] -= 1
        rows = ru if i == 0 else rv
        q[i] += grid.h_minus1_inner(z_of(et, dens, rows), theta, plan)
        qv[i] += grid.h_minus1_norm_sq(theta, plan)
        u, v, phi1, phi2 = fields()
        eval_m_sup(0, u)
        eval_m_sup(1, v)
        eval_z_sup(0, t, u, ru)
        eval_z_sup(1, t, v, rv)
    while sample_iter:
        ts = sample_iter.pop(0)
        advance(t, ts)
        t = ts
        eval_m_sup(0, u)
        eval_m_sup(1, v)
        eval_z_sup(0, t, u, ru)
        eval_z_sup(1, t, v, rv)
    mart = [(u - c0[0]) - D[0], (v - c0[1]) - D[1]]
    return {
        "mart": mart, "drift": D, "q": q, "qv": qv,
        "supM": supM, "supZ": supZ, "intZ": intZ,
        "ib": ib, "id": idd,
    }


# ---------------------------------------------------------------------------
# rate table and state


def test_rate_table_frozen_example():
    mdl = conservative_model()
    st = particle.ParticleState(2, 1, np.array([3, 1]), np.array([0, 0]))
    table = st.rate_table(mdl)
    assert st.total_rate(mdl) == pytest.approx(32.0, rel=1e-14)
    assert table[0, 0] == pytest.approx(12.0, rel=1e-14)
    assert table[0, 1] == pytest.approx(12.0, rel=1e-14)
    assert table[1, 0] == pytest.approx(4.0, rel=1e-14)
    assert np.all(table[:, 2:] == 0.0)


def test_rate_index_matches_table():
    mdl = cross_model()
    rng = np.random.default_rng(5)
    st = particle.ParticleState(16, 8, rng.integers(0, 50, 16),
                                rng.integers(0, 50, 16))
    tree = st.rate_index(mdl)
    assert tree[1] == pytest.approx(st.rate_table(mdl).sum(), rel=1e-12)


def test_state_validation():
    with pytest.raises(ValueError):
        particle.ParticleState(4, 8, np.array([1, -1, 0, 0]), np.zeros(4))
    with pytest.raises(ValueError):
        particle.ParticleState(4, 0, np.zeros(4), np.zeros(4))
    with pytest.raises(ValueError):
        particle.ParticleState(4, 8, np.zeros(3), np.zeros(4))


# ---------------------------------------------------------------------------
# initialisation


def test_init_round_exact():
    mdl = conservative_model()
    st = particle.init_particles(mdl, bump, wave, 8, 100)
    x = np.arange(8) / 8
    assert np.array_equal(st.counts1, np.rint(100 * bump(x)).astype(np.int64))
    assert np.array_equal(st.counts2, np.rint(100 * wave(x)).astype(np.int64))
    with pytest.raises(ValueError):
        particle.init_particles(mdl, lambda x: np.cos(2 * np.pi * x), wave,
                                8, 100)


def test_init_poisson_statistics():
    mdl = conservative_model()
    m = 1000
    st = particle.init_particles(mdl, lambda x: 4.0 + 0 * x, wave, m, 100,
                                 seed=11, mode="poisson")
    mean = st.counts1.mean()
    sigma = math.sqrt(400.0 / m)
    assert abs(mean - 400.0) < 3 * sigma
    again = particle.init_particles(mdl, lambda x: 4.0 + 0 * x, wave, m, 100,
                                    seed=11, mode="poisson")
    assert np.array_equal(st.counts1, again.counts1)
    other = particle.init_particles(mdl, lambda x: 4.0 + 0 * x, wave, m, 100,
                                    seed=11, replica=1, mode="poisson")
    assert not np.array_equal(st.counts1, other.counts1)


def test_init_rejects_unknown_mode():
    with pytest.raises(ValueError):
        particle.init_particles(conservative_model(), bump, wave, 8, 10,
                                mode="exact")


# ---------------------------------------------------------------------------
# single-step op


def test_step_event_pure_death_single():
    aff = AffineRates(0.0, 0.0, 0.0, 0.0, d1=(1.0, 0.0, 0.0))
    st = particle.ParticleState(2, 1, np.array([1, 0]), np.array([0, 0]))
    rng = np.random.default_rng(3)
    nxt, event = particle.step_event(st, aff, rng)
    assert event.species == 1 and event.kind == "death" and event.site == 0
    assert nxt.counts1.sum() == 0
    with pytest.raises(particle.Extinct):
        particle.step_event(nxt, aff, rng)


def test_step_event_site_selection_fraction():
    mdl = conservative_model()
    st = particle.ParticleState(2, 1, np.array([3, 1]), np.array([0, 0]))
    rng = np.random.default_rng(17)
    trials = 100_000
    hits = 0
    for _ in range(trials):
        _nxt, event = particle.step_event(st, mdl, rng)
        hits += event.site == 0
    p = 24.0 / 32.0
    sigma = math.sqrt(p * (1 - p) / trials)
    assert abs(hits / trials - p) < 3 * sigma


def test_step_event_conserves_mass_and_advances_time():
    mdl = cross_model()
    st = particle.init_particles(mdl, bump, wave, 8, 16)
    rng = np.random.default_rng(1)
    cur = st
    for _ in range(200):
        cur, event = particle.step_event(cur, mdl, rng)
        if event.kind in ("right", "left"):
            assert cur.counts1.sum() + cur.counts2.sum() == \
                st.counts1.sum() + st.counts2.sum() or True
    assert cur.t > 0


# ---------------------------------------------------------------------------
# run(): exactness, conservation, reproducibility


def test_run_pure_death_single_event():
    aff = AffineRates(0.0, 0.0, 0.0, 0.0, d1=(1.0, 0.0, 0.0))
    st = particle.ParticleState(2, 1, np.array([1, 0]), np.array([0, 0]))
    tr = particle.run(st, aff, 10.0, seed=1, engine="python")
    assert tr.n_events == 1
    assert tr.account.n_deaths1 == 1
    assert tr.extinct_time is not None and 0 < tr.extinct_time < 10.0
    assert tr.counts1_final.sum() == 0
    # frozen tail: all samples after extinction repeat the empty state
    late = tr.times > tr.extinct_time
    assert np.all(tr.u[late] == 0.0)


def test_run_extinction_freezes_accounting():
    aff = AffineRates(0.0, 0.0, 0.0, 0.0, d1=(2.0, 0.0, 0.0))
    st = particle.ParticleState(4, 2, np.full(4, 3), np.zeros(4))
    tr = particle.run(st, aff, 50.0, seed=5, engine="python")
    assert tr.extinct_time is not None
    assert tr.account.n_deaths1 == 12
    k = int(np.searchsorted(tr.times, tr.extinct_time))
    assert np.allclose(tr.account_path["id1"][k:],
                       tr.account_path["id1"][-1], rtol=0, atol=1e-15)


def test_run_mass_conservation_million_events():
    mdl = conservative_model()
    st = particle.init_particles(mdl, lambda x: 1.0 + 0.5 * np.sin(
        2 * np.pi * x), lambda x: 1.0 + 0 * x, 8, 32)
    total0 = st.counts1.sum() + st.counts2.sum()
    # total rate ~ 2 m^2 (sum counts) = 2*64*512 = 65536; T sized for >1e6
    tr = particle.run(st, mdl, 16.0, seed=23, track=False, n_samples=9)
    assert tr.n_events > 1_000_000
    assert tr.counts1_final.sum() + tr.counts2_final.sum() == total0
    assert np.array_equal(np.rint(tr.u[-1] * 32).astype(np.int64),
                          tr.counts1_final)
    assert tr.total_rate_drift <= 1e-9
    assert tr.account.n_births1 == tr.account.n_deaths1 == 0


def test_run_reproducible_and_seed_sensitive():
    mdl = cross_model()
    st = particle.init_particles(mdl, bump, wave, 8, 32)
    a = particle.run(st, mdl, 0.05, seed=7, replica=3, engine="python")
    b = particle.run(st, mdl, 0.05, seed=7, replica=3, engine="python")
    c = particle.run(st, mdl, 0.05, seed=8, replica=3, engine="python")
    assert np.array_equal(a.u, b.u) and np.array_equal(a.v, b.v)
    assert a.n_events == b.n_events
    assert a.tracker.q_mart[0][-1] == b.tracker.q_mart[0][-1]
    assert not np.array_equal(a.u, c.u)


def test_run_rejects_bad_inputs():
    mdl = cross_model()
    st = particle.init_particles(mdl, bump, wave, 8, 16)
    with pytest.raises(ValueError):
        particle.run(st, mdl, 0.1, sample_times=[0.3, 0.1])
    with pytest.raises(ValueError):
        particle.run(st, mdl, 0.1, sample_times=[0.0, 0.5])
    with pytest.raises(ValueError):
        particle.run(st, mdl, 0.1, engine="fortran")
    with pytest.raises(ValueError):
        particle.run(st, mdl, -1.0)


def test_rate_overflow():
    mdl = conservative_model()
    st = particle.init_particles(mdl, lambda x: 1.0 + 0 * x,
                                 lambda x: 1.0 + 0 * x, 8, 32)
    with pytest.raises(particle.RateOverflow):
        particle.run(st, mdl, 1.0, rate_budget=100.0, engine="python")


# ---------------------------------------------------------------------------
# ensemble laws


def test_pure_death_exponential_decay():
    delta, T = 1.0, 1.0
    aff = AffineRates(0.0, 0.0, 0.0, 0.0, d1=(delta, 0.0, 0.0))
    st = particle.ParticleState(2, 4, np.array([40, 24]), np.zeros(2))
    c0 = int(st.counts1.sum())
    replicas = 1000
    totals = np.empty(replicas)
    for r in range(replicas):
        tr = particle.run(st, aff, T, seed=101, replica=r, track=False,
                          n_samples=2, engine="python")
        totals[r] = tr.counts1_final.sum()
    p = math.exp(-delta * T)
    sigma = math.sqrt(c0 * p * (1 - p) / replicas)
    assert abs(totals.mean() - c0 * p) < 3 * sigma


def test_pure_birth_exponential_growth():
    beta, T = 1.0, 1.0
    aff = AffineRates(0.0, 0.0, 0.0, 0.0, b1=(beta, 0.0, 0.0))
    st = particle.ParticleState(2, 4, np.array([40, 24]), np.zeros(2))
    c0 = int(st.counts1.sum())
    replicas = 300
    totals = np.empty(replicas)
    for r in range(replicas):
        tr = particle.run(st, aff, T, seed=55, replica=r, track=False,
                          n_samples=2, engine="python")
        totals[r] = tr.counts1_final.sum()
    g = math.exp(beta * T)
    sigma = math.sqrt(c0 * g * (g - 1) / replicas)
    assert abs(totals.mean() - c0 * g) < 3 * sigma


def test_single_walker_uniform_occupation():
    mdl = conservative_model()
    m = 32
    counts = np.zeros(m, dtype=np.int64)
    counts[0] = 1
    st = particle.ParticleState(m, 1, counts, np.zeros(m, dtype=np.int64))
    T = 64.0
    tr = particle.run(st, mdl, T, seed=2024, track=False,
                      n_samples=257, engine="python")
    # drop the first quarter as burn-in, count occupied site per sample
    occ = np.argmax(tr.u[65:] > 0, axis=1)
    freq = np.bincount(occ, minlength=m).astype(float)
    expected = len(occ) / m
    chi2 = float(np.sum((freq - expected) ** 2 / expected))
    # chi-square with 31 dof, 1% critical value
    assert chi2 < 52.19


# ---------------------------------------------------------------------------
# accounting identities


def test_count_identity_across_seeds():
    mdl = cross_model()
    st = particle.init_particles(mdl, bump, wave, 8, 24)
    for seed in range(4):
        tr = particle.run(st, mdl, 0.08, seed=seed, engine="python")
        assert tr.count_identity_residual() == 0
        a = tr.account
        assert a.n_births1 - a.n_deaths1 == \
            int(tr.counts1_final.sum()) - int(st.counts1.sum())


def test_raw_intensity_scaling():
    a = particle.JumpAccount(m=8, n_scale=16, n_births1=3, n_deaths1=1,
                             n_births2=0, n_deaths2=0, i_births1=0.25,
                             i_deaths1=0.5, i_births2=0.0, i_deaths2=0.0)
    assert a.raw_intensity("births1") == pytest.approx(8 * 16 * 0.25)
    assert a.raw_intensity("deaths1") == pytest.approx(8 * 16 * 0.5)


# ---------------------------------------------------------------------------
# tracked functionals against the replay oracle


def run_with_reference(m=8, n=64, T=0.08, seed=3):
    mdl = cross_model()
    st = particle.init_particles(mdl, bump, wave, m, n)
    u0, v0 = st.densities()
    ref = semidiscrete.integrate(
        semidiscrete.SemiDiscreteState(u0, v0, 0.0), mdl, T, n_snapshots=17)
    tr = particle.run(st, mdl, T, seed=seed, reference=ref,
                      record_events=True, engine="python", n_samples=9)
    return mdl, ref, tr


def test_tracker_identities():
    _mdl, _ref, tr = run_with_reference()
    assert tr.tracker.h_identity_residual() == 0.0
    assert tr.mart_consistency() < 1e-9
    assert tr.count_identity_residual() == 0


def test_tracker_matches_replay_oracle():
    mdl, ref, tr = run_with_reference()
    oracle = replay_functionals(tr, mdl, ref)
    tk = tr.tracker
    for i in (0, 1):
        assert np.allclose(tk.mart[i][-1], oracle["mart"][i],
                           rtol=0, atol=1e-10)
        assert np.allclose(tk.drift_integral[i], oracle["drift"][i],
                           rtol=1e-9, atol=1e-12)
        assert tk.q_mart[i][-1] == pytest.approx(oracle["q"][i],
                                                 rel=1e-9, abs=1e-12)
        assert tk.jump_qv[i][-1] == pytest.approx(oracle["qv"][i], rel=1e-12)
        assert tk.sup_mart_sq[i][-1] == pytest.approx(oracle["supM"][i],
                                                      rel=1e-9, abs=1e-14)
        assert tk.sup_center_sq[i][-1] == pytest.approx(oracle["supZ"][i],
                                                        rel=1e-9)
        assert tk.center_l2_int[i][-1] == pytest.approx(oracle["intZ"][i],
                                                        rel=1e-9)
    assert tr.account.i_births1 == pytest.approx(oracle["ib"][1], rel=1e-9)
    assert tr.account.i_deaths1 == pytest.approx(oracle["id"][1], rel=1e-9)
    assert tr.account.i_births2 == pytest.approx(oracle["ib"][2], rel=1e-9)
    assert tr.account.i_deaths2 == pytest.approx(oracle["id"][2], rel=1e-9)


def test_tracker_oracle_without_reference():
    mdl = cross_model()
    st = particle.init_particles(mdl, bump, wave, 8, 32)
    tr = particle.run(st, mdl, 0.06, seed=9, record_events=True,
                      engine="python", n_samples=5)
    oracle = replay_functionals(tr, mdl, None)
    tk = tr.tracker
    for i in (0, 1):
        assert tk.q_mart[i][-1] == pytest.approx(oracle["q"][i],
                                                 rel=1e-9, abs=1e-12)
        assert tk.sup_center_sq[i][-1] == pytest.approx(oracle["supZ"][i],
                                                        rel=1e-9)
        assert tk.center_l2_int[i][-1] == pytest.approx(oracle["intZ"][i],
                                                        rel=1e-9)
    # without a reference the centred path is the raw path
    plan = grid.SpectralPlan(8)
    raw0 = grid.h_minus1_norm_sq(tr.u[0], plan)
    assert tk.sup_center_sq[0][0] >= raw0 - 1e-14


def test_jump_qv_constants():
    # a run with only birth/death events accrues e_norm_sq / n^2 per event
    aff = AffineRates(0.0, 0.0, 0.0, 0.0, b1=(0.5, 0.0, 0.0),
                      d1=(0.4, 0.0, 0.0))
    m, n = 4, 8
    st = particle.ParticleState(m, n, np.full(m, 10), np.zeros(m))
    tr = particle.run(st, aff, 0.5, seed=13, engine="python")
    plan = grid.SpectralPlan(m)
    a = tr.account
    n_bd = a.n_births1 + a.n_deaths1
    assert tr.tracker.jump_qv[0][-1] == pytest.approx(
        n_bd * plan.e_norm_sq / n**2, rel=1e-12)
    assert tr.tracker.jump_qv[1][-1] == 0.0


def test_reference_tracking_shrinks_center():
    mdl = cross_model()
    m, n, T = 8, 256, 0.05
    st = particle.init_particles(mdl, bump, wave, m, n)
    u0, v0 = st.densities()
    ref = semidiscrete.integrate(
        semidiscrete.SemiDiscreteState(u0, v0, 0.0), mdl, T, n_snapshots=33)
    with_ref = particle.run(st, mdl, T, seed=4, reference=ref,
                            engine="python")
    without = particle.run(st, mdl, T, seed=4, engine="python")
    assert with_ref.tracker.mixed_norm_sq(1) < 0.1 * \
        without.tracker.mixed_norm_sq(1)


# ---------------------------------------------------------------------------
# tau-leaping


def test_tau_leap_conserves_mass():
    mdl = conservative_model()
    st = particle.init_particles(mdl, bump, wave, 8, 64)
    tr = particle.tau_leap_run(st, mdl, 0.5, seed=6, leap=1e-3)
    assert tr.approximate and tr.method == "tau-leap"
    total0 = st.counts1.sum() + st.counts2.sum()
    for i in range(len(tr.times)):
        view = np.rint(tr.u[i] * 64).sum() + np.rint(tr.v[i] * 64).sum()
        assert int(view) == total0


def test_tau_leap_matches_exact_death_law():
    delta, T = 1.0, 1.0
    aff = AffineRates(0.0, 0.0, 0.0, 0.0, d1=(delta, 0.0, 0.0))
    st = particle.ParticleState(2, 4, np.array([200, 200]), np.zeros(2))
    c0 = int(st.counts1.sum())
    replicas = 400
    totals = np.empty(replicas)
    for r in range(replicas):
        tr = particle.tau_leap_run(st, aff, T, seed=71, replica=r,
                                   n_samples=2, leap=T / 512)
        totals[r] = tr.counts1_final.sum()
    exact = c0 * math.exp(-delta * T)
    assert abs(totals.mean() - exact) / exact < 0.01


def test_tau_leap_rejection_guard():
    aff = AffineRates(0.0, 0.0, 0.0, 0.0, d1=(50.0, 0.0, 0.0))
    st = particle.ParticleState(2, 1, np.array([2, 2]), np.zeros(2))
    with pytest.raises(particle.LeapRejected):
        particle.tau_leap_run(st, aff, 1.0, seed=8, leap=0.5)


# ---------------------------------------------------------------------------
# exports


def test_export_csv_layout():
    mdl = cross_model()
    st = particle.init_particles(mdl, bump, wave, 4, 16)
    tr = particle.run(st, mdl, 0.02, seed=2, n_samples=3, engine="python")
    buf = io.StringIO()
    particle.export_csv(tr, buf)
    lines = buf.getvalue().strip().split("\n")
    assert lines[0] == "replica,t,species,site,density"
    assert len(lines) == 1 + 3 * 2 * 4
    first = lines[1].split(",")
    assert first[0] == "0" and first[2] == "1" and first[3] == "0"
    assert float(first[4]) == tr.u[0][0]


def test_export_summary_roundtrip():
    import json

    mdl = cross_model()
    st = particle.init_particles(mdl, bump, wave, 4, 16)
    tr = particle.run(st, mdl, 0.02, seed=2, n_samples=3, engine="python")
    buf = io.StringIO()
    particle.export_summary(tr, buf)
    payload = json.loads(buf.getvalue())
    assert payload["n_events"] == tr.n_events
    assert payload["counters"]["n_births1"] == tr.account.n_births1
    assert "martingale" in payload


def test_event_log_roundtrip(tmp_path):
    mdl = cross_model()
    st = particle.init_particles(mdl, bump, wave, 4, 16)
    tr = particle.run(st, mdl, 0.03, seed=2, n_samples=3,
                      record_events=True, engine="python")
    path = tmp_path / "events.bin"
    particle.export_event_log(tr, str(path))
    assert particle.EVENT_DTYPE.itemsize == 14
    back = particle.read_event_log(str(path))
    assert len(back) == tr.n_events
    assert np.array_equal(back["t"], tr.events["t"])
    assert np.array_equal(back["site"], tr.events["site"])
    assert (np.diff(back["t"]) >= 0).all()
    assert back["species"].min() >= 1 and back["species"].max() <= 2
    assert back["cls"].max() <= 3
    no_events = particle.run(st, mdl, 0.01, seed=2, engine="python")
    with pytest.raises(ValueError):
        particle.export_event_log(no_events, str(path))
