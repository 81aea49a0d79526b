"""Pure-Python event engine, the reference implementation of the jump process.

The compiled engine (``_engine.pyx``) is a statement-level twin of this
module.  Everything that influences event selection -- leaf rate formulas,
sum-tree updates, and RNG consumption (exactly two uniform doubles per
executed event, one for the waiting time, one for the selection) -- is kept
scalar and identically ordered, so both engines generate bit-identical event
sequences from the same seed key.  Tracker reductions are numpy here and C
loops there; those outputs agree to rounding, not bitwise.

Channel layout: leaf index = site * 8 + class, with classes
0: species-1 move right   1: species-1 move left
2: species-1 birth        3: species-1 death
4: species-2 move right   5: species-2 move left
6: species-2 birth        7: species-2 death

Between jumps the compensated-path martingale drifts linearly in time, so its
dual-norm square is convex on each inter-event interval; evaluating at both
endpoints of every interval (plus sample times) therefore yields the exact
running supremum of the path, not a sampled lower bound.  The same holds for
the centered path against a reference that is linear in time between its
snapshots.
"""

from __future__ import annotations

import math

import numpy as np

REBUILD_EVERY = 65536

STATUS_OK = 0
STATUS_EXTINCT = 1


class RateOverflow(RuntimeError):
    """Total event rate exceeded the configured budget."""


def run_engine(cfg: dict) -> dict:
    m = int(cfg["m"])
    n = int(cfg["n"])
    T = float(cfg["T"])
    counts1 = np.asarray(cfg["counts1"], dtype=float).copy()
    counts2 = np.asarray(cfg["counts2"], dtype=float).copy()
    sample_times = np.asarray(cfg["sample_times"], dtype=float)
    neg_green = np.asarray(cfg["neg_green"], dtype=float)
    e_nsq = float(cfg["e_norm_sq"])
    de_nsq = float(cfg["de_norm_sq"])
    ref_t = np.asarray(cfg["ref_times"], dtype=float)
    ref_u = np.asarray(cfg["ref_u"], dtype=float)
    ref_v = np.asarray(cfg["ref_v"], dtype=float)
    ref_pu = np.asarray(cfg["ref_pu"], dtype=float)
    ref_pv = np.asarray(cfg["ref_pv"], dtype=float)
    ref_mu = np.asarray(cfg["ref_mean_u"], dtype=float)
    ref_mv = np.asarray(cfg["ref_mean_v"], dtype=float)
    track = bool(cfg["track"])
    record_events = bool(cfg["record_events"])
    budget = float(cfg["rate_budget"])
    rebuild_every = int(cfg.get("rebuild_every", REBUILD_EVERY))
    bitgen = np.random.Generator(np.random.Philox(key=int(cfg["seed_key"])))
    next_double = bitgen.random  # one next_double per call

    m2 = float(m * m)
    inv_n = 1.0 / n
    inv_m = 1.0 / m
    inv_mn = 1.0 / (m * n)
    jump_e = e_nsq * inv_n * inv_n
    jump_de = de_nsq * inv_n * inv_n
    n_samp = len(sample_times)

    u = counts1 * inv_n
    v = counts2 * inv_n

    if cfg.get("callables") is not None:
        fn_mu1, fn_mu2, fn_b1, fn_b2, fn_d1, fn_d2 = cfg["callables"]

        def site_values(j):
            uj = u[j]
            vj = v[j]
            return (float(fn_mu1(vj)), float(fn_mu2(uj)),
                    float(fn_b1(uj, vj)), float(fn_b2(uj, vj)),
                    float(fn_d1(uj, vj)), float(fn_d2(uj, vj)))
    else:
        co = [float(x) for x in cfg["coeffs"]]

        def site_values(j):
            uj = u[j]
            vj = v[j]
            return (co[0] + co[1] * vj,
                    co[2] + co[3] * uj,
                    co[4] + co[5] * uj + co[6] * vj,
                    co[7] + co[8] * uj + co[9] * vj,
                    co[10] + co[11] * uj + co[12] * vj,
                    co[13] + co[14] * uj + co[15] * vj)

    def leaf_rates(j):
        mu1, mu2, b1, b2, d1, d2 = site_values(j)
        move1 = m2 * counts1[j] * mu1
        move2 = m2 * counts2[j] * mu2
        return (move1, move1, counts1[j] * b1, counts1[j] * d1,
                move2, move2, counts2[j] * b2, counts2[j] * d2)

    # Sum tree: leaves at [P, P + 8m); internal node i = child 2i + child 2i+1.
    n_leaf = 8 * m
    P = 1
    while P < n_leaf:
        P <<= 1
    tree = np.zeros(2 * P)
    ct = np.zeros(8)  # per-class rate totals

    def rebuild():
        ct[:] = 0.0
        tree[:] = 0.0
        for j in range(m):
            rates = leaf_rates(j)
            for c in range(8):
                tree[P + j * 8 + c] = rates[c]
                ct[c] += rates[c]
        for i in range(P - 1, 0, -1):
            tree[i] = tree[2 * i] + tree[2 * i + 1]

    def update_site(j):
        rates = leaf_rates(j)
        for c in range(8):
            leaf = P + j * 8 + c
            delta = rates[c] - tree[leaf]
            if delta != 0.0:
                ct[c] += delta
                tree[leaf] = rates[c]
                i = leaf >> 1
                while i:
                    tree[i] = tree[2 * i] + tree[2 * i + 1]
                    i >>= 1

    rebuild()

    def refresh_scalars():
        return (float(np.sum(u)) * inv_m, float(np.sum(v)) * inv_m,
                float(np.dot(u, u)), float(np.dot(v, v)))

    mean_u, mean_v, sum_u2, sum_v2 = refresh_scalars()

    # Tracker state: flux densities w, reactions R, drift fields phi, and
    # potentials (inverse Laplacian applied to mean-free parts).
    w1 = np.zeros(m)
    w2 = np.zeros(m)
    R1 = np.zeros(m)
    R2 = np.zeros(m)
    phi1 = np.zeros(m)
    phi2 = np.zeros(m)
    for j in range(m):
        mu1j, mu2j, b1j, b2j, d1j, d2j = site_values(j)
        w1[j] = mu1j * u[j]
        w2[j] = mu2j * v[j]
        R1[j] = u[j] * (b1j - d1j)
        R2[j] = v[j] * (b2j - d2j)
    mean_w1 = float(np.sum(w1)) * inv_m
    mean_w2 = float(np.sum(w2)) * inv_m
    mean_R1 = float(np.sum(R1)) * inv_m
    mean_R2 = float(np.sum(R2)) * inv_m

    def stencil(j, w):
        return m2 * (w[(j + 1) % m] + w[(j - 1) % m] - 2.0 * w[j])

    for j in range(m):
        phi1[j] = stencil(j, w1) + R1[j]
        phi2[j] = stencil(j, w2) + R2[j]

    PU1 = np.asarray(cfg["pu1"], dtype=float).copy()
    PU2 = np.asarray(cfg["pu2"], dtype=float).copy()
    PR1 = np.asarray(cfg["pr1"], dtype=float).copy()
    PR2 = np.asarray(cfg["pr2"], dtype=float).copy()
    PM1 = np.zeros(m)
    PM2 = np.zeros(m)
    mart1 = np.zeros(m)
    mart2 = np.zeros(m)
    D1 = np.zeros(m)
    D2 = np.zeros(m)
    mean_M1 = 0.0
    mean_M2 = 0.0

    # Double-period green column: potential of e_s is negG2[m - s : 2m - s].
    negG2 = np.concatenate([neg_green, neg_green])

    q1 = q2 = 0.0
    qv1 = qv2 = 0.0
    supM1 = supM2 = 0.0
    supZ1 = supZ2 = 0.0
    intZ1 = intZ2 = 0.0
    mom = 0.0
    ib1 = id1 = ib2 = id2 = 0.0
    nb1 = nd1 = nb2 = nd2 = 0

    ref_idx = 0
    n_ref = len(ref_t)

    def ref_weight(t):
        k = ref_idx
        while k + 2 < n_ref and ref_t[k + 1] < t:
            k += 1
        span = ref_t[k + 1] - ref_t[k]
        wgt = 0.0 if span <= 0.0 else (t - ref_t[k]) / span
        return k, wgt

    scratch = np.zeros(m)

    def z_norm_sq(t, uu, PUu, mu_scalar, rows, prows, rmeans):
        k, wgt = ref_weight(t)
        np.multiply(rows[k], 1.0 - wgt, out=scratch)
        np.add(scratch, wgt * rows[k + 1], out=scratch)
        zm = mu_scalar - ((1.0 - wgt) * rmeans[k] + wgt * rmeans[k + 1])
        np.subtract(uu, scratch, out=scratch)  # centered-path values
        pz = PUu - ((1.0 - wgt) * prows[k] + wgt * prows[k + 1])
        return zm * zm + inv_m * float(np.dot(scratch, pz))

    def eval_sups(t):
        nonlocal supM1, supM2, supZ1, supZ2
        val = mean_M1 * mean_M1 + inv_m * float(np.dot(mart1, PM1))
        if val > supM1:
            supM1 = val
        val = mean_M2 * mean_M2 + inv_m * float(np.dot(mart2, PM2))
        if val > supM2:
            supM2 = val
        val = z_norm_sq(t, u, PU1, mean_u, ref_u, ref_pu, ref_mu)
        if val > supZ1:
            supZ1 = val
        val = z_norm_sq(t, v, PU2, mean_v, ref_v, ref_pv, ref_mv)
        if val > supZ2:
            supZ2 = val

    if track:
        supZ1 = z_norm_sq(0.0, u, PU1, mean_u, ref_u, ref_pu, ref_mu)
        supZ2 = z_norm_sq(0.0, v, PU2, mean_v, ref_v, ref_pv, ref_mv)

    t = 0.0

    def drift_piecework(k0, t0, t2, uu, mean_uu, P_phi, mean_phi, rows,
                        rmeans):
        """Integrals of <Z, phi>_{-1} and |Z|_2^2 over [t0, t2], exactly.

        k0 is the snapshot piece containing t0 (passed in so both species
        walk the same pieces).  The reference is linear on each snapshot
        piece, so against the frozen state the first integrand is linear in
        time (trapezoid is exact) and the second quadratic (Simpson is
        exact).
        """
        nonlocal ref_idx
        q_inc = 0.0
        z_inc = 0.0
        S1 = float(np.dot(uu, P_phi))
        k = k0
        a = t0
        while True:
            tb_snap = ref_t[k + 1]
            b = t2 if t2 < tb_snap else tb_snap
            span = ref_t[k + 1] - ref_t[k]
            wa = 0.0 if span <= 0.0 else (a - ref_t[k]) / span
            wb = 0.0 if span <= 0.0 else (b - ref_t[k]) / span
            RA = rows[k]
            RB = rows[k + 1]
            dA = float(np.dot(RA, P_phi))
            dB = float(np.dot(RB, P_phi))
            rmA = rmeans[k]
            rmB = rmeans[k + 1]

            def f(wgt):
                rm = (1.0 - wgt) * rmA + wgt * rmB
                dd = (1.0 - wgt) * dA + wgt * dB
                return (mean_uu - rm) * mean_phi + inv_m * (S1 - dd)

            q_inc += (b - a) * 0.5 * (f(wa) + f(wb))
            np.subtract(uu, RA, out=scratch)
            p0 = float(np.dot(scratch, scratch))
            diff = RA - RB
            p01 = float(np.dot(scratch, diff))
            p1 = float(np.dot(diff, diff))

            def g(wgt):
                return inv_m * (p0 + 2.0 * wgt * p01 + wgt * wgt * p1)

            z_inc += (b - a) * (g(wa) + 4.0 * g(0.5 * (wa + wb)) + g(wb)) / 6.0
            if b >= t2:
                break
            if k + 2 < n_ref:
                k += 1
            a = b
        ref_idx = k
        return q_inc, z_inc

    def flush_to(t2):
        nonlocal t, mom, ib1, id1, ib2, id2, q1, q2, intZ1, intZ2
        nonlocal mean_M1, mean_M2, D1, D2, mart1, mart2, PM1, PM2
        dt = t2 - t
        if dt <= 0.0:
            t = t2
            return
        ib1 += dt * ct[2] * inv_mn
        id1 += dt * ct[3] * inv_mn
        ib2 += dt * ct[6] * inv_mn
        id2 += dt * ct[7] * inv_mn
        if track:
            mom += dt * (1.0 + sum_u2 * inv_m + sum_v2 * inv_m)
            pphi1 = PR1 - w1 + mean_w1
            pphi2 = PR2 - w2 + mean_w2
            k0, _ = ref_weight(t)
            dq, dz = drift_piecework(k0, t, t2, u, mean_u, pphi1, mean_R1,
                                     ref_u, ref_mu)
            q1 -= dq
            intZ1 += dz
            dq, dz = drift_piecework(k0, t, t2, v, mean_v, pphi2, mean_R2,
                                     ref_v, ref_mv)
            q2 -= dq
            intZ2 += dz
            D1 += dt * phi1
            D2 += dt * phi2
            mart1 -= dt * phi1
            mart2 -= dt * phi2
            PM1 -= dt * pphi1
            PM2 -= dt * pphi2
            mean_M1 -= dt * mean_R1
            mean_M2 -= dt * mean_R2
        t = t2

    s_u = np.zeros((n_samp, m))
    s_v = np.zeros((n_samp, m))
    s_mart1 = np.zeros((n_samp, m))
    s_mart2 = np.zeros((n_samp, m))
    s_scalar = {key: np.zeros(n_samp) for key in
                ("q1", "q2", "qv1", "qv2", "supM1", "supM2", "supZ1", "supZ2",
                 "intZ1", "intZ2", "mom", "ib1", "id1", "ib2", "id2")}
    s_counts = {key: np.zeros(n_samp, dtype=np.int64) for key in
                ("nb1", "nd1", "nb2", "nd2")}

    def record_sample(si):
        if track:
            eval_sups(t)
        s_u[si] = u
        s_v[si] = v
        s_mart1[si] = mart1
        s_mart2[si] = mart2
        for key, val in (("q1", q1), ("q2", q2), ("qv1", qv1), ("qv2", qv2),
                         ("supM1", supM1), ("supM2", supM2),
                         ("supZ1", supZ1), ("supZ2", supZ2),
                         ("intZ1", intZ1), ("intZ2", intZ2), ("mom", mom),
                         ("ib1", ib1), ("id1", id1), ("ib2", ib2),
                         ("id2", id2)):
            s_scalar[key][si] = val
        for key, val in (("nb1", nb1), ("nd1", nd1), ("nb2", nb2),
                         ("nd2", nd2)):
            s_counts[key][si] = val

    evt_t, evt_sp, evt_cls, evt_site, evt_int = [], [], [], [], []

    n_events = 0
    status = STATUS_OK
    extinct_time = math.nan
    si = 0
    while True:
        total = float(tree[1])
        if not total > 0.0:
            extinct_time = t
            status = STATUS_EXTINCT
            while si < n_samp:
                flush_to(sample_times[si])
                record_sample(si)
                si += 1
            flush_to(T)
            break
        if total > budget:
            raise RateOverflow(
                f"total rate {total:.3e} exceeds budget {budget:.3e} "
                f"at t={t:.6g}")
        u1 = next_double()
        dt = -math.log1p(-u1) / total
        t_new = t + dt
        horizon = t_new if t_new < T else T
        while si < n_samp and sample_times[si] <= horizon:
            flush_to(sample_times[si])
            record_sample(si)
            si += 1
        if t_new > T:
            flush_to(T)
            break
        flush_to(t_new)
        if track:
            eval_sups(t)  # left endpoint of the jump, exact by convexity

        u2 = next_double()
        target = u2 * total
        i = 1
        while i < P:
            i <<= 1
            if target >= tree[i]:
                target -= tree[i]
                i += 1
        leaf = i - P
        while leaf > 0 and tree[P + leaf] == 0.0:  # roundoff guard
            leaf -= 1
        if tree[P + leaf] == 0.0:
            raise RuntimeError("event selection failed on a zero-rate table")
        site = leaf >> 3
        cls = leaf & 7

        sp = 1 if cls < 4 else 2
        kind = cls & 3
        if kind == 0:
            dst = site + 1 if site + 1 < m else 0
        elif kind == 1:
            dst = site - 1 if site else m - 1
        else:
            dst = site

        # Pairing term of the quadratic-compensation functional, taken at the
        # pre-jump state.
        if track:
            k, wgt = ref_weight(t)
            if sp == 1:
                PUx, prows, rmeans, mux = PU1, ref_pu, ref_mu, mean_u
            else:
                PUx, prows, rmeans, mux = PU2, ref_pv, ref_mv, mean_v
            cw = 1.0 - wgt
            if kind < 2:
                pz_d = PUx[dst] - (cw * prows[k, dst] + wgt * prows[k + 1, dst])
                pz_s = PUx[site] - (cw * prows[k, site]
                                    + wgt * prows[k + 1, site])
                qjump = inv_m * inv_n * (pz_d - pz_s)
            else:
                zm = mux - (cw * rmeans[k] + wgt * rmeans[k + 1])
                pz_s = PUx[site] - (cw * prows[k, site]
                                    + wgt * prows[k + 1, site])
                qjump = inv_m * inv_n * (zm + pz_s)
                if kind == 3:
                    qjump = -qjump
            if sp == 1:
                q1 += qjump
                qv1 += jump_de if kind < 2 else jump_e
            else:
                q2 += qjump
                qv2 += jump_de if kind < 2 else jump_e

        if kind == 2:
            if sp == 1:
                nb1 += 1
            else:
                nb2 += 1
        elif kind == 3:
            if sp == 1:
                nd1 += 1
            else:
                nd2 += 1
        if record_events:
            evt_t.append(t)
            evt_sp.append(sp)
            evt_cls.append(kind)
            evt_site.append(site)
            if kind == 2:
                evt_int.append(ib1 if sp == 1 else ib2)
            elif kind == 3:
                evt_int.append(id1 if sp == 1 else id2)
            else:
                evt_int.append(0.0)

        if kind < 2:
            changed = (site, dst)
            deltas = (-1.0, 1.0)
        elif kind == 2:
            changed = (site,)
            deltas = (1.0,)
        else:
            changed = (site,)
            deltas = (-1.0,)
        counts = counts1 if sp == 1 else counts2
        dens = u if sp == 1 else v
        for j, dc in zip(changed, deltas):
            counts[j] += dc
            old = dens[j]
            new = counts[j] * inv_n
            dens[j] = new
            du = new - old
            if sp == 1:
                sum_u2 += new * new - old * old
                mean_u += du * inv_m
            else:
                sum_v2 += new * new - old * old
                mean_v += du * inv_m
            if track:
                gview = negG2[m - j:2 * m - j]
                if sp == 1:
                    PU1 += du * gview
                    PM1 += du * gview
                    mart1[j] += du
                    mean_M1 += du * inv_m
                else:
                    PU2 += du * gview
                    PM2 += du * gview
                    mart2[j] += du
                    mean_M2 += du * inv_m

        if track:
            # Both species' rate fields depend on both densities at a site.
            for j in changed:
                mu1j, mu2j, b1j, b2j, d1j, d2j = site_values(j)
                nw1 = mu1j * u[j]
                nw2 = mu2j * v[j]
                nR1 = u[j] * (b1j - d1j)
                nR2 = v[j] * (b2j - d2j)
                mean_w1 += (nw1 - w1[j]) * inv_m
                mean_w2 += (nw2 - w2[j]) * inv_m
                dR = nR1 - R1[j]
                if dR != 0.0:
                    mean_R1 += dR * inv_m
                    PR1 += dR * negG2[m - j:2 * m - j]
                dR = nR2 - R2[j]
                if dR != 0.0:
                    mean_R2 += dR * inv_m
                    PR2 += dR * negG2[m - j:2 * m - j]
                w1[j] = nw1
                w2[j] = nw2
                R1[j] = nR1
                R2[j] = nR2
            touched = set()
            for j in changed:
                touched.update(((j - 1) % m, j, (j + 1) % m))
            for j in sorted(touched):
                phi1[j] = stencil(j, w1) + R1[j]
                phi2[j] = stencil(j, w2) + R2[j]
            eval_sups(t)  # right endpoint of the jump

        for j in changed:
            update_site(j)

        n_events += 1
        if n_events % rebuild_every == 0:
            rebuild()
            mean_u, mean_v, sum_u2, sum_v2 = refresh_scalars()

    while si < n_samp:
        flush_to(sample_times[si])
        record_sample(si)
        si += 1

    fresh_total = 0.0
    for j in range(m):
        rates = leaf_rates(j)
        for c in range(8):
            fresh_total += rates[c]
    denom = fresh_total if fresh_total > 1.0 else 1.0
    rate_drift = abs(float(tree[1]) - fresh_total) / denom

    out = {
        "status": status,
        "extinct_time": extinct_time,
        "n_events": n_events,
        "total_rate_drift": rate_drift,
        "final_total_rate": fresh_total,
        "times": sample_times.copy(),
        "u": s_u, "v": s_v,
        "mart1": s_mart1, "mart2": s_mart2,
        "counts1": counts1, "counts2": counts2,
        "drift1": D1, "drift2": D2,
    }
    out.update(s_scalar)
    out.update(s_counts)
    if record_events:
        out["evt_t"] = np.asarray(evt_t, dtype=float)
        out["evt_sp"] = np.asarray(evt_sp, dtype=np.uint8)
        out["evt_cls"] = np.asarray(evt_cls, dtype=np.uint8)
        out["evt_site"] = np.asarray(evt_site, dtype=np.uint32)
        out["evt_int"] = np.asarray(evt_int, dtype=float)
    return out
