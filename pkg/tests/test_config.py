import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frontsim.config import (
    AlphaParams,
    Configuration,
    ModelParams,
    config_distance,
    config_from_text,
    config_to_text,
    phi_theta,
    sample_nu,
    sample_nu_c_plus,
)
from frontsim.errors import ParameterError


def poisson_pmf_highprec(k, rho):
    # independent evaluator: mpmath, 50 digits
    import mpmath

    mpmath.mp.dps = 50
    return float(mpmath.exp(-rho) * mpmath.mpf(rho) ** k / mpmath.factorial(k))


class TestSampleNu:
    def test_zero_count_window_gives_empty_config(self):
        # seed chosen so that Poisson(1) draws 0 on the single window site
        for seed in range(100):
            rng = np.random.default_rng(seed)
            if np.random.default_rng(seed).poisson(1.0) == 0:
                w = sample_nu(1.0, (0, 0), rng)
                assert w.total_count == 0
                assert w.sites == {}
                return
        pytest.fail("no seed with a zero draw in 100 tries")

    def test_counts_match_poisson_pmf(self):
        # chi-square against the pmf from an independent high-precision
        # evaluator; 1e5 site draws at fixed seed
        rng = np.random.default_rng(20240601)
        counts = []
        for _ in range(10_000):
            w = sample_nu(1.0, (-2, 2), rng)
            counts.extend(w.count_at(x) for x in range(-2, 3))
        counts = np.asarray(counts)
        kmax = counts.max()
        pmf = np.asarray([poisson_pmf_highprec(k, 1.0) for k in range(kmax + 1)])
        hist = np.bincount(counts, minlength=kmax + 1).astype(float)
        n = counts.size
        # pool tail bins to expected >= 5
        exp = n * pmf
        tail = n * (1 - pmf.sum())
        o, e = [], []
        acc_o, acc_e = 0.0, tail
        for k in range(kmax, -1, -1):
            acc_o += hist[k]
            acc_e += exp[k]
            if acc_e >= 5:
                o.append(acc_o)
                e.append(acc_e)
                acc_o = acc_e = 0.0
        o[-1] += acc_o
        e[-1] += acc_e
        stat = (((np.asarray(o) - np.asarray(e)) ** 2) / np.asarray(e)).sum()
        from scipy.stats import chi2

        assert chi2.sf(stat, len(o) - 1) > 0.01

    def test_labels_distinct_and_descending(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            w = sample_nu(2.0, (-5, 5), rng)
            labels = [u for _, ls in w.items() for u in ls]
            assert len(labels) == len(set(labels)) == w.total_count
            for _, ls in w.items():
                assert list(ls) == sorted(ls, reverse=True)

    def test_rho_nonpositive_rejected(self):
        with pytest.raises(ParameterError):
            sample_nu(0.0, (0, 1), np.random.default_rng(0))
        with pytest.raises(ParameterError):
            sample_nu(-1.0, (0, 1), np.random.default_rng(0))


class TestSampleNuCPlus:
    def test_conditional_mean_matches_closed_form(self):
        # E[X | X >= 1] for Poisson(1) is 1 / (1 - e^{-1})
        import mpmath

        mpmath.mp.dps = 50
        expected = float(1 / (1 - mpmath.exp(-1)))
        rng = np.random.default_rng(99)
        draws = [
            sample_nu_c_plus(1.0, 1, (0, 0), rng).count_at(0) for _ in range(40_000)
        ]
        mean = float(np.mean(draws))
        se = float(np.std(draws) / math.sqrt(len(draws)))
        assert abs(mean - expected) < 4 * se

    def test_conditioning_constraint(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            w = sample_nu_c_plus(1.0, 3, (0, 4), rng)
            assert w.count_at(0) >= 3
            assert all(x >= 0 for x in w.sites)

    def test_cap_zero_rejected(self):
        with pytest.raises(ParameterError):
            sample_nu_c_plus(1.0, 0, (0, 3), np.random.default_rng(0))

    def test_negative_window_rejected(self):
        with pytest.raises(ParameterError):
            sample_nu_c_plus(1.0, 1, (-1, 3), np.random.default_rng(0))

    def test_unreachable_conditioning_fails_loudly(self):
        with pytest.raises(ParameterError, match="rejection"):
            sample_nu_c_plus(0.001, 30, (0, 0), np.random.default_rng(0))


class TestPhiTheta:
    def test_empty_config(self):
        assert phi_theta(Configuration({}, (0, 0)), 0.5) == 0.0

    def test_single_particle_at_origin(self):
        w = Configuration({0: (0.5,)}, (0, 0))
        assert phi_theta(w, 0.7) == 1.0

    def test_two_particles_at_minus_one_theta_ln2(self):
        w = Configuration({-1: (0.5, 0.25)}, (-1, 0))
        assert phi_theta(w, math.log(2)) == pytest.approx(1.0, abs=1e-15)

    def test_monotone_under_left_addition(self):
        w = Configuration({-2: (0.5,)}, (-5, 5))
        w2 = Configuration({-2: (0.5,), -1: (0.25,)}, (-5, 5))
        w3 = Configuration({-2: (0.5,), 3: (0.25,)}, (-5, 5))
        assert phi_theta(w2, 0.5) > phi_theta(w, 0.5)
        assert phi_theta(w3, 0.5) == phi_theta(w, 0.5)


small_configs = st.dictionaries(
    st.integers(-4, 4),
    st.lists(st.floats(0.001, 0.999), min_size=1, max_size=3, unique=True),
    max_size=5,
)


def _mk(sites_dict, offset=0.0):
    # deduplicate labels globally by nudging ties
    used = set()
    sites = {}
    for x, labels in sites_dict.items():
        fixed = []
        for u in labels:
            while u in used:
                u = (u + 0.37) % 1.0
            used.add(u)
            fixed.append(u)
        sites[x] = tuple(sorted(fixed, reverse=True))
    return Configuration(sites, (-4, 4))


class TestConfigDistance:
    def test_identity(self):
        w = _mk({0: [0.5], 2: [0.7, 0.1]})
        assert config_distance(w, w, 0.5) == 0.0

    def test_hand_value(self):
        w1 = Configuration({0: (0.5,)}, (0, 0))
        w2 = Configuration({}, (0, 0))
        assert config_distance(w1, w2, 0.9) == pytest.approx(1.5, abs=1e-15)

    @settings(max_examples=60, deadline=None)
    @given(small_configs, small_configs)
    def test_symmetry(self, a, b):
        wa, wb = _mk(a), _mk(b)
        assert config_distance(wa, wb, 0.5) == pytest.approx(
            config_distance(wb, wa, 0.5), abs=1e-12
        )

    @settings(max_examples=60, deadline=None)
    @given(small_configs, small_configs, small_configs)
    def test_triangle_inequality(self, a, b, c):
        wa, wb, wc = _mk(a), _mk(b), _mk(c)
        dab = config_distance(wa, wb, 0.5)
        dbc = config_distance(wb, wc, 0.5)
        dac = config_distance(wa, wc, 0.5)
        assert dac <= dab + dbc + 1e-9

    @settings(max_examples=60, deadline=None)
    @given(small_configs, small_configs)
    def test_nonnegative_and_discerning(self, a, b):
        wa, wb = _mk(a), _mk(b)
        d = config_distance(wa, wb, 0.5)
        assert d >= 0
        if wa.sites == wb.sites:
            assert d == 0


class TestParams:
    def test_variant_constraints(self):
        ModelParams(1.0, 2.0, 2.0, "single_rate")
        ModelParams(1.0, 4.0, 2.0, "remanent")
        ModelParams(1.0, 2.0, 0.0, "frog")
        with pytest.raises(ParameterError):
            ModelParams(1.0, 2.0, 3.0, "single_rate")
        with pytest.raises(ParameterError):
            ModelParams(1.0, 1.0, 2.0, "remanent")
        with pytest.raises(ParameterError):
            ModelParams(1.0, 2.0, 1.0, "frog")

    def test_alpha_params_mu_validation(self):
        ap = AlphaParams(alpha=1.0, theta=0.5, beta=1.5)
        assert ap.mu == pytest.approx(0.2447480695872386, abs=1e-15)
        # mu < 0 for alpha=0.1, theta=0.5 (~ -0.205): rejected
        with pytest.raises(ParameterError):
            AlphaParams(alpha=0.1, theta=0.5, beta=0.2)
        with pytest.raises(ParameterError):
            AlphaParams(alpha=1.0, theta=0.5, beta=0.5)  # beta <= alpha


class TestSerialization:
    def test_round_trip(self):
        rng = np.random.default_rng(11)
        w = sample_nu(1.5, (-3, 3), rng)
        text = config_to_text(w)
        back = config_from_text(text)
        assert back.sites == w.sites
        assert back.window == w.window

    def test_line_format(self):
        w = Configuration({1: (0.75, 0.25)}, (0, 2))
        lines = config_to_text(w).strip().splitlines()
        assert lines[1].split("\t")[0] == "1"
        assert lines[1].split("\t")[1] == "2"
