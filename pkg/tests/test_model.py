import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fptmc import (
    FirmSpec,
    JumpLaw,
    MarketModel,
    ModelError,
    Threshold,
    effective_sigma,
    sigma_rows_from_corr,
    threshold_at,
)


def make_firm(sigma_row=(1.0,), x0=2.0, kappa=1.0, gamma=-0.001, n_laws=1):
    return FirmSpec(
        mu=-0.001,
        sigma_row=sigma_row,
        jump_laws=tuple(JumpLaw(-0.2, 0.5) for _ in range(n_laws)),
        threshold=Threshold(kappa=kappa, gamma=gamma),
        x0=x0,
    )


class TestThreshold:
    def test_at_zero(self):
        assert threshold_at(Threshold(kappa=1.0, gamma=-0.001), 0.0) == 0.0

    def test_log_kappa(self):
        assert threshold_at(Threshold(kappa=math.e, gamma=0.0), 5.0) == pytest.approx(1.0)

    def test_linear_evaluation(self):
        assert threshold_at(Threshold(kappa=1.0, gamma=-0.001), 10.0) == pytest.approx(-0.01)

    def test_kappa_positive(self):
        with pytest.raises(ModelError) as exc:
            Threshold(kappa=0.0, gamma=0.0)
        assert exc.value.rule == "threshold.kappa"

    @given(
        gamma=st.floats(-2, 2),
        kappa=st.floats(0.1, 10),
        t1=st.floats(0, 50),
        t2=st.floats(0, 50),
    )
    def test_affine_in_time(self, gamma, kappa, t1, t2):
        th = Threshold(kappa=kappa, gamma=gamma)
        lhs = threshold_at(th, t1) + threshold_at(th, t2)
        rhs = threshold_at(th, t1 + t2) + threshold_at(th, 0.0)
        assert lhs == pytest.approx(rhs, abs=1e-9)


class TestEffectiveSigma:
    def test_single_factor(self):
        assert effective_sigma((0.09, 0.0)) == pytest.approx(0.09)

    def test_pythagorean(self):
        assert effective_sigma((3.0, 4.0)) == pytest.approx(5.0)

    def test_factorized_row(self):
        assert effective_sigma((0.06348, 0.145451)) == pytest.approx(0.1587, abs=1e-4)

    def test_rejects_zero_row(self):
        with pytest.raises(ModelError) as exc:
            effective_sigma((0.0, 0.0))
        assert exc.value.rule == "firm.sigma_zero"

    def test_accepts_firm(self):
        firm = make_firm(sigma_row=(3.0, 4.0))
        assert effective_sigma(firm) == pytest.approx(5.0)
        assert firm.sigma == pytest.approx(5.0)


class TestSigmaRowsFromCorr:
    def test_production_values(self):
        r1, r2 = sigma_rows_from_corr(0.09, 0.1587, 0.4)
        assert r1 == pytest.approx((0.09, 0.0))
        assert r2[0] == pytest.approx(0.06348)
        assert r2[1] == pytest.approx(0.145451, abs=1e-6)
        off = r1[0] * r2[0] + r1[1] * r2[1]
        assert off == pytest.approx(0.4 * 0.09 * 0.1587, abs=1e-12)

    def test_identity_case(self):
        assert sigma_rows_from_corr(1.0, 1.0, 0.0) == ((1.0, 0.0), (0.0, 1.0))

    def test_high_correlation_product(self):
        r1, r2 = sigma_rows_from_corr(0.5, 0.5, 0.999)
        off = r1[0] * r2[0] + r1[1] * r2[1]
        assert abs(off - 0.999 * 0.25) < 1e-12

    def test_singular_rejected(self):
        with pytest.raises(ModelError):
            sigma_rows_from_corr(1.0, 1.0, 1.0)
        with pytest.raises(ModelError):
            sigma_rows_from_corr(1.0, 1.0, -1.0)

    @given(
        s1=st.floats(0.01, 10),
        s2=st.floats(0.01, 10),
        rho=st.floats(-0.999, 0.999),
    )
    @settings(max_examples=200)
    def test_reconstructs_covariance(self, s1, s2, rho):
        rows = np.array(sigma_rows_from_corr(s1, s2, rho))
        cov = rows @ rows.T
        target = np.array([[s1 * s1, rho * s1 * s2], [rho * s1 * s2, s2 * s2]])
        assert np.max(np.abs(cov - target)) < 1e-12 * max(1.0, s1 * s2, s1 * s1, s2 * s2)


class TestFirmSpec:
    def test_requires_start_above_boundary(self):
        with pytest.raises(ModelError) as exc:
            make_firm(x0=0.0, kappa=1.0)
        assert exc.value.rule == "firm.x0"

    def test_rejects_zero_diffusion(self):
        with pytest.raises(ModelError) as exc:
            make_firm(sigma_row=(0.0, 0.0))
        assert exc.value.rule == "firm.sigma_zero"

    def test_jump_law_validation(self):
        with pytest.raises(ModelError) as exc:
            JumpLaw(mu_z=0.0, sigma_z=0.0)
        assert exc.value.rule == "jumplaw.sigma_z"

    def test_immutable(self):
        firm = make_firm()
        with pytest.raises(AttributeError):
            firm.mu = 0.5


class TestMarketModel:
    def test_distinct_rules_per_violation(self):
        rules = set()
        cases = [
            dict(firms=(), shock_intensities=(0.1,), horizon=10.0),
            dict(firms=(make_firm(),), shock_intensities=(0.1,), horizon=0.0),
            dict(firms=(make_firm(),), shock_intensities=(0.0,), horizon=10.0),
            dict(firms=(make_firm(sigma_row=(1.0, 0.0)),), shock_intensities=(0.1,), horizon=10.0),
            dict(firms=(make_firm(n_laws=2),), shock_intensities=(0.1,), horizon=10.0),
            dict(
                firms=(make_firm(),),
                shock_intensities=(0.1,),
                horizon=10.0,
                bridge_correlations=((1.0, 0.0),),
            ),
        ]
        for kwargs in cases:
            with pytest.raises(ModelError) as exc:
                MarketModel(**kwargs)
            rules.add(exc.value.rule)
        assert len(rules) == len(cases)

    def test_correlation_matrix_rules(self):
        f2 = (make_firm(sigma_row=(1.0, 0.0)), make_firm(sigma_row=(0.0, 1.0)))
        bad = {
            "bridge_corr.symmetry": ((1.0, 0.3), (0.4, 1.0)),
            "bridge_corr.diagonal": ((0.9, 0.4), (0.4, 1.0)),
            "bridge_corr.range": ((1.0, 1.4), (1.4, 1.0)),
        }
        for rule, mat in bad.items():
            with pytest.raises(ModelError) as exc:
                MarketModel(
                    firms=f2, shock_intensities=(0.1,), horizon=10.0, bridge_correlations=mat
                )
            assert exc.value.rule == rule

    def test_default_bridge_correlations_identity(self):
        f2 = (make_firm(sigma_row=(1.0, 0.0)), make_firm(sigma_row=(0.0, 1.0)))
        m = MarketModel(firms=f2, shock_intensities=(0.1,), horizon=10.0)
        assert m.bridge_correlations == ((1.0, 0.0), (0.0, 1.0))

    def test_jump_correlations_must_be_psd(self):
        f2 = (make_firm(sigma_row=(1.0, 0.0)), make_firm(sigma_row=(0.0, 1.0)))
        with pytest.raises(ModelError) as exc:
            MarketModel(
                firms=f2,
                shock_intensities=(0.1,),
                horizon=10.0,
                jump_correlations=((1.0, 2.0), (2.0, 1.0)),
            )
        assert exc.value.rule in ("jump_corr.range", "jump_corr.psd")

    def test_zero_shock_model_allowed(self):
        m = MarketModel(
            firms=(make_firm(n_laws=0),), shock_intensities=(), horizon=5.0
        )
        assert m.n_shocks == 0

    def test_firm_names(self):
        m = MarketModel(firms=(make_firm(),), shock_intensities=(0.1,), horizon=5.0)
        assert m.firm_name(0) == "firm0"
