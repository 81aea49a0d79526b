"""Rate model construction and hypothesis checking."""

import numpy as np
import pytest

from torusdiff import model


def lv_params(**kw):
    base = dict(d1=1.0, d2=1.0, a1=0.5, a2=0.5, rho1=1.0, rho2=1.0,
                s11=1.0, s12=0.5, s21=0.5, s22=1.0)
    base.update(kw)
    return model.SktParams(**base)


class TestBuildSkt:
    def test_conservative_model(self):
        m = model.build_skt(model.SktParams(d1=1.0, d2=1.0))
        assert m.rho0 == 0.0
        assert m.lambda1(2.0, 3.0) == 0.0
        assert m.reaction2(1.0, 4.0) == 0.0

    def test_rate_functions(self):
        m = model.build_skt(lv_params())
        assert m.mu1(2.0) == pytest.approx(2.0)  # 1 + 0.5 * 2
        assert m.mu2(4.0) == pytest.approx(3.0)
        assert m.b1(7.0, 9.0) == pytest.approx(1.0)
        assert m.d1(2.0, 4.0) == pytest.approx(4.0)  # 1*2 + 0.5*4
        assert m.reaction1(2.0, 4.0) == pytest.approx(2.0 * (1.0 - 4.0))

    def test_declared_constants(self):
        m = model.build_skt(lv_params())
        assert (m.alpha1, m.alpha2) == (1.0, 1.0)
        assert (m.lip_mu1, m.lip_mu2) == (0.5, 0.5)
        assert m.rho0 == 2.0
        assert m.alpha_dom == 0.0

    def test_degenerate_diffusion_rejected(self):
        with pytest.raises(model.DegenerateDiffusion):
            model.build_skt(model.SktParams(d1=0.0, d2=1.0))

    def test_negative_coefficients_rejected(self):
        with pytest.raises(ValueError):
            model.SktParams(d1=1.0, d2=1.0, s11=-0.5)

    def test_unit_smallness_threshold(self):
        m = model.build_skt(model.SktParams(d1=1.0, d2=1.0, a1=1.0, a2=1.0))
        assert model.check_smallness(m, 0.0, 0.0).threshold == pytest.approx(1.0)

    def test_growth_cap_on_positive_quadrant(self):
        m = model.build_skt(lv_params())
        rng = np.random.default_rng(0)
        u, v = rng.uniform(0, 50, 1000), rng.uniform(0, 50, 1000)
        assert np.all(m.lambda1(u, v) + m.lambda2(u, v) <= m.rho0 + 1e-12)

    def test_affine_table_matches_callables(self):
        m = model.build_skt(lv_params())
        arr = m.affine.as_array()
        assert arr.shape == (16,)
        u, v = 1.3, 0.7
        assert m.mu1(v) == pytest.approx(arr[0] + arr[1] * v)
        assert m.mu2(u) == pytest.approx(arr[2] + arr[3] * u)
        assert m.b1(u, v) == pytest.approx(arr[4] + arr[5] * u + arr[6] * v)
        assert m.d2(u, v) == pytest.approx(arr[13] + arr[14] * u + arr[15] * v)


class TestBuildAffine:
    def test_pure_death_chain(self):
        aff = model.AffineRates(mu1_0=1.0, mu1_1=0.0, mu2_0=1.0, mu2_1=0.0,
                                d1=(2.0, 0.0, 0.0), d2=(2.0, 0.0, 0.0))
        m = model.build_affine(aff, name="pure-death")
        assert m.lambda1(3.0, 1.0) == -2.0
        assert m.rho0 == -4.0

    def test_pure_birth_needs_explicit_cap(self):
        aff = model.AffineRates(mu1_0=1.0, mu1_1=0.0, mu2_0=1.0, mu2_1=0.0,
                                b1=(1.5, 0.0, 0.0))
        m = model.build_affine(aff, rho0=1.5)
        assert m.lambda1(0.3, 0.2) == 1.5

    def test_density_dependent_growth_rejected_without_cap(self):
        aff = model.AffineRates(mu1_0=1.0, mu1_1=0.0, mu2_0=1.0, mu2_1=0.0,
                                b1=(0.0, 1.0, 0.0))
        with pytest.raises(ValueError):
            model.build_affine(aff)

    def test_zero_motion_rejected(self):
        aff = model.AffineRates(mu1_0=0.0, mu1_1=1.0, mu2_0=1.0, mu2_1=0.0)
        with pytest.raises(model.DegenerateDiffusion):
            model.build_affine(aff)


class TestSmallness:
    def test_linear_diffusion_always_holds(self):
        m = model.build_skt(model.SktParams(d1=1.0, d2=1.0))
        rep = model.check_smallness(m, 1e9, 1e9)
        assert rep.holds and rep.margin == np.inf

    def test_margin_positive_example(self):
        m = model.build_skt(model.SktParams(d1=1.0, d2=1.0, a1=1.0, a2=1.0))
        rep = model.check_smallness(m, 0.5, 0.5)
        assert rep.holds
        assert rep.margin == pytest.approx(0.75)

    def test_margin_negative_example(self):
        m = model.build_skt(model.SktParams(d1=1.0, d2=1.0, a1=1.0, a2=1.0))
        rep = model.check_smallness(m, 1.5, 1.5)
        assert not rep.holds
        assert rep.margin == pytest.approx(-1.25)

    def test_monotone_in_bounds(self):
        m = model.build_skt(lv_params())
        rng = np.random.default_rng(1)
        for _ in range(200):
            u1, v1 = rng.uniform(0, 3, 2)
            u2, v2 = u1 + rng.uniform(0, 2), v1 + rng.uniform(0, 2)
            small = model.check_smallness(m, u1, v1)
            large = model.check_smallness(m, u2, v2)
            assert small.margin >= large.margin
            if not small.holds:
                assert not large.holds

    def test_rejects_negative_bounds(self):
        m = model.build_skt(lv_params())
        with pytest.raises(ValueError):
            model.check_smallness(m, -1.0, 0.5)


class TestCheckHypotheses:
    def test_conservative_all_pass(self):
        m = model.build_skt(model.SktParams(d1=1.0, d2=1.0))
        rep = model.check_hypotheses(m)
        assert rep.all_passed
        for check in rep.checks:
            assert check.worst_violation == 0.0

    def test_lotka_volterra_passes(self):
        rep = model.check_hypotheses(model.build_skt(lv_params()))
        assert rep.all_passed
        assert rep.fitted_constants["death_quadratic"] <= 1e3

    def test_sampled_lipschitz_within_declared(self):
        rep = model.check_hypotheses(model.build_skt(lv_params()), n_samples=4000)
        for tag in ("mu1", "mu2", "b1", "b2", "d1", "d2"):
            assert rep[f"{tag}_lipschitz"].passed

    def test_birth_domination_failure_detected(self):
        # b1 = 2*d1 + 1 with alpha_dom = 0.5: b1 - rho0 - 0.5*d1 grows with d1.
        m = model.RateModel(
            mu1=lambda v: 1.0 + 0.0 * v, mu2=lambda u: 1.0 + 0.0 * u,
            b1=lambda u, v: 2.0 * (u + v) + 1.0, b2=lambda u, v: 0.0 * u,
            d1=lambda u, v: u + v, d2=lambda u, v: 0.0 * u,
            alpha1=1.0, alpha2=1.0, lip_mu1=0.0, lip_mu2=0.0,
            lip_b1=float(np.hypot(2.0, 2.0)), lip_b2=0.0,
            lip_d1=float(np.hypot(1.0, 1.0)), lip_d2=0.0,
            rho0=1.0, alpha_dom=0.5,
        )
        rep = model.check_hypotheses(m)
        assert not rep["b1_domination"].passed
        assert rep["b1_domination"].worst_violation > 0

    def test_understated_lipschitz_detected(self):
        m = model.RateModel(
            mu1=lambda v: 1.0 + 2.0 * v, mu2=lambda u: 1.0 + 0.0 * u,
            b1=lambda u, v: 0.0 * u, b2=lambda u, v: 0.0 * u,
            d1=lambda u, v: 0.0 * u, d2=lambda u, v: 0.0 * u,
            alpha1=1.0, alpha2=1.0,
            lip_mu1=1.0,  # true slope is 2
            lip_mu2=0.0, lip_b1=0.0, lip_b2=0.0, lip_d1=0.0, lip_d2=0.0,
            rho0=0.0, alpha_dom=0.0,
        )
        rep = model.check_hypotheses(m)
        assert not rep["mu1_lipschitz"].passed

    def test_degenerate_box_rejected(self):
        m = model.build_skt(lv_params())
        with pytest.raises(ValueError):
            model.check_hypotheses(m, sample_box=((0.0, 0.0), (0.0, 1.0)))

    def test_fit_ceiling_enforced(self):
        rep = model.check_hypotheses(model.build_skt(lv_params()), fit_ceiling=1e-9)
        assert not rep["death_quadratic"].passed
