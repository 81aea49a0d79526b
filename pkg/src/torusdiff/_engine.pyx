# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled event engine, a statement-level twin of ``_engine_py``.

Everything that influences event selection (leaf rate formulas, sum-tree
arithmetic, RNG consumption) follows the pure-Python engine operation for
operation, so both engines generate bit-identical event sequences from the
same seed key; the build pins -ffp-contract=off so the compiler cannot fuse
the multiply-adds that feed the tree.  Tracker reductions are sequential C
loops where the Python engine uses numpy's pairwise reductions, so tracked
functionals agree to rounding, not bitwise.

Only affine rate families are supported here; callables stay on the
pure-Python route.
"""

import numpy as np

from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport NAN, fabs, log1p
from numpy.random cimport bitgen_t

from ._engine_py import RateOverflow, REBUILD_EVERY, STATUS_EXTINCT, STATUS_OK


cdef class _Engine:
    cdef int m, n_leaf, P, n_samp, n_ref, ref_idx, status, si
    cdef long long n_events, rebuild_every, nb1, nd1, nb2, nd2
    cdef double m2, inv_n, inv_m, inv_mn, jump_e, jump_de, T, budget, t
    cdef double mean_u, mean_v, sum_u2, sum_v2
    cdef double mean_w1, mean_w2, mean_R1, mean_R2, mean_M1, mean_M2
    cdef double q1, q2, qv1, qv2, supM1, supM2, supZ1, supZ2, intZ1, intZ2
    cdef double mom, ib1, id1, ib2, id2, extinct_time
    cdef bint track, record_events
    cdef double co[16]
    cdef double[::1] counts1, counts2, u, v, tree, ct
    cdef double[::1] sample_times, negG2, ref_t, ref_mu, ref_mv
    cdef double[:, ::1] ref_u, ref_v, ref_pu, ref_pv
    cdef double[::1] w1, w2, R1, R2, phi1, phi2
    cdef double[::1] PU1, PU2, PR1, PR2, PM1, PM2, mart1, mart2, D1, D2
    cdef double[::1] pp1, pp2
    cdef double[:, ::1] s_u, s_v, s_mart1, s_mart2
    cdef bitgen_t *rng
    cdef object bit_generator
    cdef object counts1_np, counts2_np, sample_times_np, D1_np, D2_np
    cdef object s_u_np, s_v_np, s_mart1_np, s_mart2_np
    cdef object s_scalar, s_counts, evt_t, evt_sp, evt_cls, evt_site, evt_int

    def __init__(self, cfg):
        cdef int j, c
        self.m = int(cfg["m"])
        n = int(cfg["n"])
        self.T = float(cfg["T"])
        self.counts1_np = np.asarray(cfg["counts1"], dtype=float).copy()
        self.counts2_np = np.asarray(cfg["counts2"], dtype=float).copy()
        self.counts1 = self.counts1_np
        self.counts2 = self.counts2_np
        self.sample_times_np = np.ascontiguousarray(cfg["sample_times"],
                                                    dtype=float)
        self.sample_times = self.sample_times_np
        neg_green = np.ascontiguousarray(cfg["neg_green"], dtype=float)
        e_nsq = float(cfg["e_norm_sq"])
        de_nsq = float(cfg["de_norm_sq"])
        self.ref_t = np.ascontiguousarray(cfg["ref_times"], dtype=float)
        self.ref_u = np.ascontiguousarray(cfg["ref_u"], dtype=float)
        self.ref_v = np.ascontiguousarray(cfg["ref_v"], dtype=float)
        self.ref_pu = np.ascontiguousarray(cfg["ref_pu"], dtype=float)
        self.ref_pv = np.ascontiguousarray(cfg["ref_pv"], dtype=float)
        self.ref_mu = np.ascontiguousarray(cfg["ref_mean_u"], dtype=float)
        self.ref_mv = np.ascontiguousarray(cfg["ref_mean_v"], dtype=float)
        self.track = bool(cfg["track"])
        self.record_events = bool(cfg["record_events"])
        self.budget = float(cfg["rate_budget"])
        self.rebuild_every = int(cfg.get("rebuild_every", REBUILD_EVERY))
        self.bit_generator = np.random.Philox(key=int(cfg["seed_key"]))
        self.rng = <bitgen_t *> PyCapsule_GetPointer(
            self.bit_generator.capsule, "BitGenerator")

        coeffs = cfg["coeffs"]
        if coeffs is None:
            raise ValueError("compiled engine supports affine rates only")
        for j in range(16):
            self.co[j] = float(coeffs[j])

        self.m2 = float(self.m * self.m)
        self.inv_n = 1.0 / n
        self.inv_m = 1.0 / self.m
        self.inv_mn = 1.0 / (self.m * n)
        self.jump_e = e_nsq * self.inv_n * self.inv_n
        self.jump_de = de_nsq * self.inv_n * self.inv_n
        self.n_samp = self.sample_times.shape[0]

        self.u = self.counts1_np * self.inv_n
        self.v = self.counts2_np * self.inv_n

        self.n_leaf = 8 * self.m
        self.P = 1
        while self.P < self.n_leaf:
            self.P <<= 1
        self.tree = np.zeros(2 * self.P)
        self.ct = np.zeros(8)
        self.rebuild()
        self.refresh_scalars()

        self.w1 = np.zeros(self.m)
        self.w2 = np.zeros(self.m)
        self.R1 = np.zeros(self.m)
        self.R2 = np.zeros(self.m)
        self.phi1 = np.zeros(self.m)
        self.phi2 = np.zeros(self.m)
        cdef double svals[6]
        self.mean_w1 = 0.0
        self.mean_w2 = 0.0
        self.mean_R1 = 0.0
        self.mean_R2 = 0.0
        for j in range(self.m):
            self.site_values(j, svals)
            self.w1[j] = svals[0] * self.u[j]
            self.w2[j] = svals[1] * self.v[j]
            self.R1[j] = self.u[j] * (svals[2] - svals[4])
            self.R2[j] = self.v[j] * (svals[3] - svals[5])
            self.mean_w1 += self.w1[j]
            self.mean_w2 += self.w2[j]
            self.mean_R1 += self.R1[j]
            self.mean_R2 += self.R2[j]
        self.mean_w1 *= self.inv_m
        self.mean_w2 *= self.inv_m
        self.mean_R1 *= self.inv_m
        self.mean_R2 *= self.inv_m
        for j in range(self.m):
            self.phi1[j] = self.stencil(self.w1, j) + self.R1[j]
            self.phi2[j] = self.stencil(self.w2, j) + self.R2[j]

        self.PU1 = np.ascontiguousarray(cfg["pu1"], dtype=float).copy()
        self.PU2 = np.ascontiguousarray(cfg["pu2"], dtype=float).copy()
        self.PR1 = np.ascontiguousarray(cfg["pr1"], dtype=float).copy()
        self.PR2 = np.ascontiguousarray(cfg["pr2"], dtype=float).copy()
        self.PM1 = np.zeros(self.m)
        self.PM2 = np.zeros(self.m)
        self.mart1 = np.zeros(self.m)
        self.mart2 = np.zeros(self.m)
        self.D1_np = np.zeros(self.m)
        self.D2_np = np.zeros(self.m)
        self.D1 = self.D1_np
        self.D2 = self.D2_np
        self.mean_M1 = 0.0
        self.mean_M2 = 0.0
        self.negG2 = np.concatenate([neg_green, neg_green])
        self.pp1 = np.zeros(self.m)
        self.pp2 = np.zeros(self.m)

        self.q1 = self.q2 = 0.0
        self.qv1 = self.qv2 = 0.0
        self.supM1 = self.supM2 = 0.0
        self.supZ1 = self.supZ2 = 0.0
        self.intZ1 = self.intZ2 = 0.0
        self.mom = 0.0
        self.ib1 = self.id1 = self.ib2 = self.id2 = 0.0
        self.nb1 = self.nd1 = self.nb2 = self.nd2 = 0
        self.ref_idx = 0
        self.n_ref = self.ref_t.shape[0]

        if self.track:
            self.supZ1 = self.z_norm_sq(0.0, self.u, self.PU1, self.mean_u,
                                        self.ref_u, self.ref_pu, self.ref_mu)
            self.supZ2 = self.z_norm_sq(0.0, self.v, self.PU2, self.mean_v,
                                        self.ref_v, self.ref_pv, self.ref_mv)
        self.t = 0.0

        self.s_u_np = np.zeros((self.n_samp, self.m))
        self.s_v_np = np.zeros((self.n_samp, self.m))
        self.s_mart1_np = np.zeros((self.n_samp, self.m))
        self.s_mart2_np = np.zeros((self.n_samp, self.m))
        self.s_u = self.s_u_np
        self.s_v = self.s_v_np
        self.s_mart1 = self.s_mart1_np
        self.s_mart2 = self.s_mart2_np
        self.s_scalar = {key: np.zeros(self.n_samp) for key in
                         ("q1", "q2", "qv1", "qv2", "supM1", "supM2",
                          "supZ1", "supZ2", "intZ1", "intZ2", "mom",
                          "ib1", "id1", "ib2", "id2")}
        self.s_counts = {key: np.zeros(self.n_samp, dtype=np.int64) for key in
                         ("nb1", "nd1", "nb2", "nd2")}
        self.evt_t = []
        self.evt_sp = []
        self.evt_cls = []
        self.evt_site = []
        self.evt_int = []
        self.n_events = 0
        self.status = STATUS_OK
        self.extinct_time = NAN
        self.si = 0

    cdef inline void site_values(self, int j, double *out) noexcept:
        cdef double uj = self.u[j]
        cdef double vj = self.v[j]
        out[0] = self.co[0] + self.co[1] * vj
        out[1] = self.co[2] + self.co[3] * uj
        out[2] = self.co[4] + self.co[5] * uj + self.co[6] * vj
        out[3] = self.co[7] + self.co[8] * uj + self.co[9] * vj
        out[4] = self.co[10] + self.co[11] * uj + self.co[12] * vj
        out[5] = self.co[13] + self.co[14] * uj + self.co[15] * vj

    cdef inline void leaf_rates(self, int j, double *out) noexcept:
        cdef double svals[6]
        self.site_values(j, svals)
        cdef double move1 = self.m2 * self.counts1[j] * svals[0]
        cdef double move2 = self.m2 * self.counts2[j] * svals[1]
        out[0] = move1
        out[1] = move1
        out[2] = self.counts1[j] * svals[2]
        out[3] = self.counts1[j] * svals[4]
        out[4] = move2
        out[5] = move2
        out[6] = self.counts2[j] * svals[3]
        out[7] = self.counts2[j] * svals[5]

    cdef void rebuild(self) noexcept:
        cdef int j, c
        cdef Py_ssize_t i
        cdef double rates[8]
        for c in range(8):
            self.ct[c] = 0.0
        for i in range(2 * self.P):
            self.tree[i] = 0.0
        for j in range(self.m):
            self.leaf_rates(j, rates)
            for c in range(8):
                self.tree[self.P + j * 8 + c] = rates[c]
                self.ct[c] += rates[c]
        for i in range(self.P - 1, 0, -1):
            self.tree[i] = self.tree[2 * i] + self.tree[2 * i + 1]

    cdef void update_site(self, int j) noexcept:
        cdef int c
        cdef Py_ssize_t leaf, i
        cdef double rates[8]
        cdef double delta
        self.leaf_rates(j, rates)
        for c in range(8):
            leaf = self.P + j * 8 + c
            delta = rates[c] - self.tree[leaf]
            if delta != 0.0:
                self.ct[c] += delta
                self.tree[leaf] = rates[c]
                i = leaf >> 1
                while i:
                    self.tree[i] = self.tree[2 * i] + self.tree[2 * i + 1]
                    i >>= 1

    cdef void refresh_scalars(self) noexcept:
        cdef int j
        cdef double su = 0.0, sv = 0.0, su2 = 0.0, sv2 = 0.0
        for j in range(self.m):
            su += self.u[j]
            sv += self.v[j]
            su2 += self.u[j] * self.u[j]
            sv2 += self.v[j] * self.v[j]
        self.mean_u = su * self.inv_m
        self.mean_v = sv * self.inv_m
        self.sum_u2 = su2
        self.sum_v2 = sv2

    cdef inline double stencil(self, double[::1] w, int j) noexcept:
        cdef int jp = j + 1 if j + 1 < self.m else 0
        cdef int jm = j - 1 if j else self.m - 1
        return self.m2 * (w[jp] + w[jm] - 2.0 * w[j])

    cdef (int, double) ref_weight(self, double t) noexcept:
        cdef int k = self.ref_idx
        while k + 2 < self.n_ref and self.ref_t[k + 1] < t:
            k += 1
        cdef double span = self.ref_t[k + 1] - self.ref_t[k]
        cdef double wgt = 0.0 if span <= 0.0 else (t - self.ref_t[k]) / span
        return k, wgt

    cdef double z_norm_sq(self, double t, double[::1] uu, double[::1] PUu,
                          double mu_scalar, double[:, ::1] rows,
                          double[:, ::1] prows, double[::1] rmeans) noexcept:
        cdef int k, i
        cdef double wgt, cw, zm, zi, pzi, acc = 0.0
        k, wgt = self.ref_weight(t)
        cw = 1.0 - wgt
        for i in range(self.m):
            zi = uu[i] - (rows[k, i] * cw + wgt * rows[k + 1, i])
            pzi = PUu[i] - (cw * prows[k, i] + wgt * prows[k + 1, i])
            acc += zi * pzi
        zm = mu_scalar - (cw * rmeans[k] + wgt * rmeans[k + 1])
        return zm * zm + self.inv_m * acc

    cdef void eval_sups(self, double t) noexcept:
        cdef int i
        cdef double acc1 = 0.0, acc2 = 0.0, val
        for i in range(self.m):
            acc1 += self.mart1[i] * self.PM1[i]
            acc2 += self.mart2[i] * self.PM2[i]
        val = self.mean_M1 * self.mean_M1 + self.inv_m * acc1
        if val > self.supM1:
            self.supM1 = val
        val = self.mean_M2 * self.mean_M2 + self.inv_m * acc2
        if val > self.supM2:
            self.supM2 = val
        val = self.z_norm_sq(t, self.u, self.PU1, self.mean_u,
                             self.ref_u, self.ref_pu, self.ref_mu)
        if val > self.supZ1:
            self.supZ1 = val
        val = self.z_norm_sq(t, self.v, self.PU2, self.mean_v,
                             self.ref_v, self.ref_pv, self.ref_mv)
        if val > self.supZ2:
            self.supZ2 = val

    cdef (double, double) drift_piecework(self, int k0, double t0, double t2,
                                          double[::1] uu, double mean_uu,
                                          double[::1] P_phi, double mean_phi,
                                          double[:, ::1] rows,
                                          double[::1] rmeans) noexcept:
        # Trapezoid for <Z,phi>_{-1} (linear in s per reference piece) and
        # Simpson for |Z|_2^2 (quadratic); both exact, as in the twin.
        cdef double q_inc = 0.0, z_inc = 0.0, S1 = 0.0
        cdef int i, k = k0
        cdef double a = t0, b, tb_snap, span, wa, wb, wmid
        cdef double dA, dB, rmA, rmB, fa, fb, ra, rb, s, d, p0, p01, p1
        for i in range(self.m):
            S1 += uu[i] * P_phi[i]
        while True:
            tb_snap = self.ref_t[k + 1]
            b = t2 if t2 < tb_snap else tb_snap
            span = self.ref_t[k + 1] - self.ref_t[k]
            wa = 0.0 if span <= 0.0 else (a - self.ref_t[k]) / span
            wb = 0.0 if span <= 0.0 else (b - self.ref_t[k]) / span
            dA = 0.0
            dB = 0.0
            p0 = 0.0
            p01 = 0.0
            p1 = 0.0
            for i in range(self.m):
                ra = rows[k, i]
                rb = rows[k + 1, i]
                dA += ra * P_phi[i]
                dB += rb * P_phi[i]
                s = uu[i] - ra
                d = ra - rb
                p0 += s * s
                p01 += s * d
                p1 += d * d
            rmA = rmeans[k]
            rmB = rmeans[k + 1]
            fa = ((mean_uu - ((1.0 - wa) * rmA + wa * rmB)) * mean_phi
                  + self.inv_m * (S1 - ((1.0 - wa) * dA + wa * dB)))
            fb = ((mean_uu - ((1.0 - wb) * rmA + wb * rmB)) * mean_phi
                  + self.inv_m * (S1 - ((1.0 - wb) * dA + wb * dB)))
            q_inc += (b - a) * 0.5 * (fa + fb)
            wmid = 0.5 * (wa + wb)
            z_inc += (b - a) * (
                self.inv_m * (p0 + 2.0 * wa * p01 + wa * wa * p1)
                + 4.0 * (self.inv_m * (p0 + 2.0 * wmid * p01
                                       + wmid * wmid * p1))
                + self.inv_m * (p0 + 2.0 * wb * p01 + wb * wb * p1)) / 6.0
            if b >= t2:
                break
            if k + 2 < self.n_ref:
                k += 1
            a = b
        self.ref_idx = k
        return q_inc, z_inc

    cdef void flush_to(self, double t2) noexcept:
        cdef double dt = t2 - self.t
        cdef int i, k0
        cdef double dq, dz, wgt
        if dt <= 0.0:
            self.t = t2
            return
        self.ib1 += dt * self.ct[2] * self.inv_mn
        self.id1 += dt * self.ct[3] * self.inv_mn
        self.ib2 += dt * self.ct[6] * self.inv_mn
        self.id2 += dt * self.ct[7] * self.inv_mn
        if self.track:
            self.mom += dt * (1.0 + self.sum_u2 * self.inv_m
                              + self.sum_v2 * self.inv_m)
            for i in range(self.m):
                self.pp1[i] = self.PR1[i] - self.w1[i] + self.mean_w1
                self.pp2[i] = self.PR2[i] - self.w2[i] + self.mean_w2
            k0, wgt = self.ref_weight(self.t)
            dq, dz = self.drift_piecework(k0, self.t, t2, self.u, self.mean_u,
                                          self.pp1, self.mean_R1,
                                          self.ref_u, self.ref_mu)
            self.q1 -= dq
            self.intZ1 += dz
            dq, dz = self.drift_piecework(k0, self.t, t2, self.v, self.mean_v,
                                          self.pp2, self.mean_R2,
                                          self.ref_v, self.ref_mv)
            self.q2 -= dq
            self.intZ2 += dz
            for i in range(self.m):
                self.D1[i] += dt * self.phi1[i]
                self.D2[i] += dt * self.phi2[i]
                self.mart1[i] -= dt * self.phi1[i]
                self.mart2[i] -= dt * self.phi2[i]
                self.PM1[i] -= dt * self.pp1[i]
                self.PM2[i] -= dt * self.pp2[i]
            self.mean_M1 -= dt * self.mean_R1
            self.mean_M2 -= dt * self.mean_R2
        self.t = t2

    def record_sample(self, Py_ssize_t si):
        cdef int i
        if self.track:
            self.eval_sups(self.t)
        for i in range(self.m):
            self.s_u[si, i] = self.u[i]
            self.s_v[si, i] = self.v[i]
            self.s_mart1[si, i] = self.mart1[i]
            self.s_mart2[si, i] = self.mart2[i]
        sc = self.s_scalar
        sc["q1"][si] = self.q1
        sc["q2"][si] = self.q2
        sc["qv1"][si] = self.qv1
        sc["qv2"][si] = self.qv2
        sc["supM1"][si] = self.supM1
        sc["supM2"][si] = self.supM2
        sc["supZ1"][si] = self.supZ1
        sc["supZ2"][si] = self.supZ2
        sc["intZ1"][si] = self.intZ1
        sc["intZ2"][si] = self.intZ2
        sc["mom"][si] = self.mom
        sc["ib1"][si] = self.ib1
        sc["id1"][si] = self.id1
        sc["ib2"][si] = self.ib2
        sc["id2"][si] = self.id2
        cc = self.s_counts
        cc["nb1"][si] = self.nb1
        cc["nd1"][si] = self.nd1
        cc["nb2"][si] = self.nb2
        cc["nd2"][si] = self.nd2

    def run(self):
        cdef double total, u1, u2, dt, t_new, horizon, target
        cdef double old, new, du, dc, g, dR, qjump, zm, pz_d, pz_s, cw, wgt
        cdef double nw1, nw2, nR1, nR2
        cdef Py_ssize_t i, leaf
        cdef int site, cls, sp, kind, dst, j, k, idx, n_changed, n_t, tj, pos
        cdef int changed[2]
        cdef double deltas[2]
        cdef int touched[6]
        cdef double svals[6]
        cdef double[::1] PUx
        cdef double[:, ::1] prows
        cdef double[::1] rmeans
        cdef double mux
        cdef double rates[8]
        cdef double fresh_total

        while True:
            total = self.tree[1]
            if not total > 0.0:
                self.extinct_time = self.t
                self.status = STATUS_EXTINCT
                while self.si < self.n_samp:
                    self.flush_to(self.sample_times[self.si])
                    self.record_sample(self.si)
                    self.si += 1
                self.flush_to(self.T)
                break
            if total > self.budget:
                raise RateOverflow(
                    f"total rate {total:.3e} exceeds budget "
                    f"{self.budget:.3e} at t={self.t:.6g}")
            u1 = self.rng.next_double(self.rng.state)
            dt = -log1p(-u1) / total
            t_new = self.t + dt
            horizon = t_new if t_new < self.T else self.T
            while self.si < self.n_samp \
                    and self.sample_times[self.si] <= horizon:
                self.flush_to(self.sample_times[self.si])
                self.record_sample(self.si)
                self.si += 1
            if t_new > self.T:
                self.flush_to(self.T)
                break
            self.flush_to(t_new)
            if self.track:
                self.eval_sups(self.t)

            u2 = self.rng.next_double(self.rng.state)
            target = u2 * total
            i = 1
            while i < self.P:
                i <<= 1
                if target >= self.tree[i]:
                    target -= self.tree[i]
                    i += 1
            leaf = i - self.P
            while leaf > 0 and self.tree[self.P + leaf] == 0.0:
                leaf -= 1
            if self.tree[self.P + leaf] == 0.0:
                raise RuntimeError(
                    "event selection failed on a zero-rate table")
            site = <int> (leaf >> 3)
            cls = <int> (leaf & 7)

            sp = 1 if cls < 4 else 2
            kind = cls & 3
            if kind == 0:
                dst = site + 1 if site + 1 < self.m else 0
            elif kind == 1:
                dst = site - 1 if site else self.m - 1
            else:
                dst = site

            if self.track:
                k, wgt = self.ref_weight(self.t)
                if sp == 1:
                    PUx = self.PU1
                    prows = self.ref_pu
                    rmeans = self.ref_mu
                    mux = self.mean_u
                else:
                    PUx = self.PU2
                    prows = self.ref_pv
                    rmeans = self.ref_mv
                    mux = self.mean_v
                cw = 1.0 - wgt
                if kind < 2:
                    pz_d = PUx[dst] - (cw * prows[k, dst]
                                       + wgt * prows[k + 1, dst])
                    pz_s = PUx[site] - (cw * prows[k, site]
                                        + wgt * prows[k + 1, site])
                    qjump = self.inv_m * self.inv_n * (pz_d - pz_s)
                else:
                    zm = mux - (cw * rmeans[k] + wgt * rmeans[k + 1])
                    pz_s = PUx[site] - (cw * prows[k, site]
                                        + wgt * prows[k + 1, site])
                    qjump = self.inv_m * self.inv_n * (zm + pz_s)
                    if kind == 3:
                        qjump = -qjump
                if sp == 1:
                    self.q1 += qjump
                    self.qv1 += self.jump_de if kind < 2 else self.jump_e
                else:
                    self.q2 += qjump
                    self.qv2 += self.jump_de if kind < 2 else self.jump_e

            if kind == 2:
                if sp == 1:
                    self.nb1 += 1
                else:
                    self.nb2 += 1
            elif kind == 3:
                if sp == 1:
                    self.nd1 += 1
                else:
                    self.nd2 += 1
            if self.record_events:
                self.evt_t.append(self.t)
                self.evt_sp.append(sp)
                self.evt_cls.append(kind)
                self.evt_site.append(site)
                if kind == 2:
                    self.evt_int.append(self.ib1 if sp == 1 else self.ib2)
                elif kind == 3:
                    self.evt_int.append(self.id1 if sp == 1 else self.id2)
                else:
                    self.evt_int.append(0.0)

            if kind < 2:
                changed[0] = site
                changed[1] = dst
                deltas[0] = -1.0
                deltas[1] = 1.0
                n_changed = 2
            elif kind == 2:
                changed[0] = site
                deltas[0] = 1.0
                n_changed = 1
            else:
                changed[0] = site
                deltas[0] = -1.0
                n_changed = 1
            for idx in range(n_changed):
                j = changed[idx]
                dc = deltas[idx]
                if sp == 1:
                    self.counts1[j] += dc
                    old = self.u[j]
                    new = self.counts1[j] * self.inv_n
                    self.u[j] = new
                    du = new - old
                    self.sum_u2 += new * new - old * old
                    self.mean_u += du * self.inv_m
                else:
                    self.counts2[j] += dc
                    old = self.v[j]
                    new = self.counts2[j] * self.inv_n
                    self.v[j] = new
                    du = new - old
                    self.sum_v2 += new * new - old * old
                    self.mean_v += du * self.inv_m
                if self.track:
                    if sp == 1:
                        for i in range(self.m):
                            g = du * self.negG2[self.m - j + i]
                            self.PU1[i] += g
                            self.PM1[i] += g
                        self.mart1[j] += du
                        self.mean_M1 += du * self.inv_m
                    else:
                        for i in range(self.m):
                            g = du * self.negG2[self.m - j + i]
                            self.PU2[i] += g
                            self.PM2[i] += g
                        self.mart2[j] += du
                        self.mean_M2 += du * self.inv_m

            if self.track:
                # Both species' rate fields depend on both densities here.
                for idx in range(n_changed):
                    j = changed[idx]
                    self.site_values(j, svals)
                    nw1 = svals[0] * self.u[j]
                    nw2 = svals[1] * self.v[j]
                    nR1 = self.u[j] * (svals[2] - svals[4])
                    nR2 = self.v[j] * (svals[3] - svals[5])
                    self.mean_w1 += (nw1 - self.w1[j]) * self.inv_m
                    self.mean_w2 += (nw2 - self.w2[j]) * self.inv_m
                    dR = nR1 - self.R1[j]
                    if dR != 0.0:
                        self.mean_R1 += dR * self.inv_m
                        for i in range(self.m):
                            self.PR1[i] += dR * self.negG2[self.m - j + i]
                    dR = nR2 - self.R2[j]
                    if dR != 0.0:
                        self.mean_R2 += dR * self.inv_m
                        for i in range(self.m):
                            self.PR2[i] += dR * self.negG2[self.m - j + i]
                    self.w1[j] = nw1
                    self.w2[j] = nw2
                    self.R1[j] = nR1
                    self.R2[j] = nR2
                n_t = 0
                for idx in range(n_changed):
                    j = changed[idx]
                    for pos in range(3):
                        if pos == 0:
                            tj = j - 1 if j else self.m - 1
                        elif pos == 1:
                            tj = j
                        else:
                            tj = j + 1 if j + 1 < self.m else 0
                        for k in range(n_t):
                            if touched[k] == tj:
                                break
                        else:
                            touched[n_t] = tj
                            n_t += 1
                for idx in range(n_t):
                    j = touched[idx]
                    self.phi1[j] = self.stencil(self.w1, j) + self.R1[j]
                    self.phi2[j] = self.stencil(self.w2, j) + self.R2[j]
                self.eval_sups(self.t)

            for idx in range(n_changed):
                self.update_site(changed[idx])

            self.n_events += 1
            if self.n_events % self.rebuild_every == 0:
                self.rebuild()
                self.refresh_scalars()

        while self.si < self.n_samp:
            self.flush_to(self.sample_times[self.si])
            self.record_sample(self.si)
            self.si += 1

        fresh_total = 0.0
        for j in range(self.m):
            self.leaf_rates(j, rates)
            for idx in range(8):
                fresh_total += rates[idx]
        denom = fresh_total if fresh_total > 1.0 else 1.0
        rate_drift = fabs(self.tree[1] - fresh_total) / denom

        out = {
            "status": self.status,
            "extinct_time": self.extinct_time,
            "n_events": self.n_events,
            "total_rate_drift": rate_drift,
            "final_total_rate": fresh_total,
            "times": self.sample_times_np.copy(),
            "u": self.s_u_np, "v": self.s_v_np,
            "mart1": self.s_mart1_np, "mart2": self.s_mart2_np,
            "counts1": self.counts1_np, "counts2": self.counts2_np,
            "drift1": self.D1_np, "drift2": self.D2_np,
        }
        out.update(self.s_scalar)
        out.update(self.s_counts)
        if self.record_events:
            out["evt_t"] = np.asarray(self.evt_t, dtype=float)
            out["evt_sp"] = np.asarray(self.evt_sp, dtype=np.uint8)
            out["evt_cls"] = np.asarray(self.evt_cls, dtype=np.uint8)
            out["evt_site"] = np.asarray(self.evt_site, dtype=np.uint32)
            out["evt_int"] = np.asarray(self.evt_int, dtype=float)
        return out


def run_engine(cfg):
    if cfg.get("callables") is not None:
        raise ValueError("compiled engine supports affine rates only")
    return _Engine(cfg).run()
