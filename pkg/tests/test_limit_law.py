import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from densityprice import (
    BUYER,
    TRADER,
    Atom,
    LimitLaw,
    estimate_limit_law,
    limit_cdf,
    mgf_lambda,
    normal_tilt,
    poisson_component_law,
    sigma2_geometric,
    translation_spec,
)
from densityprice.limit_law import risk_neutral_expectation, sample_poisson_component, truncation_sensitivity


def one_atom_law(y=-0.15, nu=0.5, sigma2=0.01):
    """Self-consistent law: trader mgf vanishes at s=1 and buyer atoms are the e^Λ tilt."""
    mu = -(sigma2 + nu * y * y) / 2
    return LimitLaw(mu, sigma2, (Atom.from_intensity(y, nu),),
                    (Atom.from_intensity(y, nu * (1 + y) ** 2),))


class TestAtom:
    def test_intensity_round_trip(self):
        a = Atom.from_intensity(-0.2, 0.7)
        assert a.intensity == pytest.approx(0.7, rel=1e-15)
        assert a.u == pytest.approx(0.25, rel=1e-15)

    @pytest.mark.parametrize("y,m", [(-1.5, 1.0), (0.0, 1.0), (0.1, -1.0)])
    def test_invalid(self, y, m):
        with pytest.raises(ValueError):
            Atom(y, m)


class TestLaw:
    def test_interval_moments(self):
        law = LimitLaw.from_interval(-0.02, 0.04)
        assert law.sigma2 == pytest.approx(0.01)
        assert law.mu_interval == pytest.approx(-0.02)
        assert law.is_calm

    def test_json_round_trip(self):
        law = one_atom_law()
        back = LimitLaw.from_json(law.to_json())
        assert back == law

    def test_negative_variance(self):
        with pytest.raises(ValueError):
            LimitLaw(0.0, -1.0)


class TestMgf:
    @given(st.floats(0.01, 0.99), st.floats(0.0, 0.5))
    def test_calm_reduces_to_normal(self, s, sig2):
        law = LimitLaw.calm(sig2)
        normal = law.mu_interval * s + 0.5 * law.sigma2_interval * s * s
        assert abs(mgf_lambda(law, s) - normal) <= 1e-12

    @pytest.mark.parametrize("s", [0.0, 1.0, 1.5])
    def test_domain(self, s):
        with pytest.raises(ValueError):
            mgf_lambda(LimitLaw.calm(0.04), s)

    def test_trader_mgf_vanishes_at_one(self):
        # the limit form at s -> 1 is exp(Λ)-integrable with mean one
        law = one_atom_law()
        s = 1 - 1e-9
        assert abs(mgf_lambda(law, s)) < 1e-9

    @pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
    def test_trader_buyer_symmetry(self, s):
        # buyer -Λ at s equals trader Λ at 1-s when buyer atoms are the tilt of trader atoms
        law = one_atom_law()
        assert mgf_lambda(law, s, "T") == pytest.approx(mgf_lambda(law, 1 - s, "t0"), abs=1e-14)

    @pytest.mark.parametrize("side", ["t0", "T"])
    @pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
    def test_poisson_component_matches_atom_term(self, side, s):
        law = one_atom_law()
        atoms = law.atoms_t0 if side == "t0" else law.atoms_T
        cp = poisson_component_law(atoms, 1e-14, side)
        atom_term = mgf_lambda(law, s, side) - mgf_lambda(LimitLaw(law.mu, law.sigma2), s)
        t = s if side == "t0" else -s
        assert math.log(cp.mgf(t)) == pytest.approx(atom_term, abs=1e-12)


class TestPoissonComponent:
    def test_single_atom_pmf(self):
        a = Atom.from_intensity(-0.2, 1.3)
        cp = poisson_component_law([a], 1e-12)
        jump = 2 * math.log(0.8)
        n = np.round((cp.values - cp.shift) / jump).astype(int)
        np.testing.assert_allclose(cp.probs, stats.poisson.pmf(n, 1.3), rtol=1e-12)
        assert cp.shift == pytest.approx(2 * 1.3 * 0.2)
        assert cp.tail_mass <= 1e-12

    def test_merging_identical_jumps(self):
        a, b = Atom.from_intensity(-0.2, 0.4), Atom.from_intensity(-0.2, 0.9)
        cp = poisson_component_law([a, b], 1e-12)
        n = np.round((cp.values - cp.shift) / (2 * math.log(0.8))).astype(int)
        np.testing.assert_allclose(cp.probs, stats.poisson.pmf(n, 1.3), rtol=1e-10, atol=1e-13)

    def test_two_atom_convolution(self):
        atoms = [Atom.from_intensity(-0.2, 0.4), Atom.from_intensity(0.1, 0.3)]
        cp = poisson_component_law(atoms, 1e-13)
        assert cp.probs.sum() == pytest.approx(1.0, abs=1e-12)
        mean = np.dot(cp.probs, cp.values)
        exact = sum(a.intensity * 2 * math.log1p(a.y) for a in atoms) + cp.shift
        assert mean == pytest.approx(exact, abs=1e-10)

    def test_empty(self):
        cp = poisson_component_law([])
        assert cp.values.tolist() == [0.0] and cp.probs.tolist() == [1.0]

    def test_zero_price_atom_rejected(self):
        with pytest.raises(ValueError, match="zero price"):
            poisson_component_law([Atom(-1.0, 0.5)])

    def test_direct_simulation_agrees(self):
        atoms = [Atom.from_intensity(-0.2, 0.8)]
        cp = poisson_component_law(atoms, 1e-12)
        draws = sample_poisson_component(atoms, 200_000, np.random.default_rng(1))
        se = draws.std() / math.sqrt(draws.size)
        assert abs(draws.mean() - np.dot(cp.probs, cp.values)) < 4 * se


class TestLimitCdf:
    def test_calm_is_normal(self):
        law = LimitLaw.calm(0.04)
        x = np.linspace(-1, 1, 21)
        np.testing.assert_allclose(limit_cdf(law, TRADER, x),
                                   stats.norm.cdf(x, -0.02, 0.2), atol=1e-14)
        np.testing.assert_allclose(limit_cdf(law, BUYER, x),
                                   stats.norm.cdf(x, 0.02, 0.2), atol=1e-14)

    @pytest.mark.parametrize("x", [-0.5, -0.1, 0.0, 0.2])
    def test_buyer_is_tilted_trader(self, x):
        law = one_atom_law()
        cp = poisson_component_law(law.atoms_t0, 1e-14)
        sig, m = law.sigma_interval, law.mu_interval
        tilted = sum(p * math.exp(m + v + sig**2 / 2) * stats.norm.cdf((x - m - v) / sig - sig)
                     for v, p in zip(cp.values, cp.probs))
        assert float(limit_cdf(law, BUYER, x)) == pytest.approx(tilted, abs=1e-11)

    def test_zero_variance_step(self):
        law = LimitLaw.calm(0.0)
        assert limit_cdf(law, TRADER, [-1e-9, 0.0, 1e-9]).tolist() == [0.0, 1.0, 1.0]


class TestEstimation:
    def test_gbm_is_calm(self, gbm_256_exp):
        law = estimate_limit_law(gbm_256_exp)
        assert law.is_calm
        assert law.sigma2_interval == pytest.approx(0.04, rel=0.05)
        assert law.mu_interval + law.sigma2_interval / 2 == pytest.approx(0.0, abs=0.002)

    def test_jump_atoms(self, jump_small_exp):
        law = estimate_limit_law(jump_small_exp)
        assert law.atoms_t0 and law.atoms_T
        big = [a for a in law.atoms_t0 if abs(a.y - (math.sqrt(0.6) - 1)) < 0.05]
        assert sum(a.intensity for a in big) == pytest.approx(1.0, rel=0.1)
        big_T = [a for a in law.atoms_T if abs(a.y - (math.sqrt(0.6) - 1)) < 0.05]
        # the buyer weights include the jump, so the rate scales by (1+y)^2 = 0.6
        assert sum(a.intensity for a in big_T) == pytest.approx(0.6, rel=0.1)
        assert law.sigma2_interval == pytest.approx(0.04, rel=0.1)

    def test_truncation_sensitivity(self, gbm_small_exp):
        out = truncation_sensitivity(gbm_small_exp)
        assert out["sigma2_interval"] >= out["sigma2_interval_half_tau"]

    def test_bad_tau(self, gbm_small_exp):
        with pytest.raises(ValueError):
            estimate_limit_law(gbm_small_exp, tau=0)


class TestTranslation:
    @pytest.mark.parametrize("law", [LimitLaw.calm(0.04), one_atom_law()])
    @pytest.mark.parametrize("r,dt,log_a", [(0.05, 1.0, 0.08), (0.0, 2.0, -0.3)])
    def test_risk_neutral_identity(self, law, r, dt, log_a):
        tr = translation_spec(law, r, dt, log_a)
        assert risk_neutral_expectation(law, tr) == pytest.approx(math.exp(r * dt), abs=1e-8)

    def test_calm_replacement_is_r_dt(self):
        tr = translation_spec(LimitLaw.calm(0.04), 0.05, 1.0, 0.08)
        assert tr.replacement == pytest.approx(0.05, abs=1e-15)
        assert tr.amount == pytest.approx(0.05 - 0.08, abs=1e-15)

    def test_bad_horizon(self):
        with pytest.raises(ValueError):
            translation_spec(LimitLaw.calm(0.04), 0.05, 0.0, 0.0)


def test_normal_tilt():
    assert normal_tilt(-0.02, 0.04, 1.0) == pytest.approx((0.02, 0.04))
    with pytest.raises(ValueError):
        normal_tilt(0, -1, 1)


def test_sigma2_geometric():
    assert sigma2_geometric(0.1, 0.5, 2.0) == pytest.approx(0.4)
    with pytest.raises(ValueError):
        sigma2_geometric(0.0, 1.0, 1.0)
