import math

import numpy as np
import pytest

from frontsim.config import Configuration
from frontsim.errors import HorizonError, ParameterError
from frontsim.walks import (
    ParticlePath,
    apply_time_change,
    check_lemma2_bound,
    check_line_avoidance,
    extend_forward,
    mu_of,
    path_from_text,
    path_to_text,
    scripted_path,
    simulate_two_sided_walk,
    _batch_walks,
)


class TestPositionAt:
    def test_empty_horizon(self):
        p = simulate_two_sided_walk(3, 2.0, 0.0, 0.0, np.random.default_rng(0))
        assert p.n_jumps == 0
        assert p.position_at(0.0) == 3

    def test_cadlag_forward(self):
        p = scripted_path(0.5, 0, fwd=[(0.5, +1)], t_fwd=1.0)
        assert p.position_at(0.5) == 1
        assert p.position_at(0.49) == 0

    def test_backward_convention(self):
        # a backward jump (-1 at t=-0.5) means W_s = -1 for s < -0.5 and the
        # cadlag value at -0.5 is already the forward-side one
        p = scripted_path(0.5, 0, bwd=[(-0.5, -1)], t_back=-1.0)
        assert p.position_at(-0.5) == 0
        assert p.position_at(-0.51) == -1

    def test_anchoring(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            p = simulate_two_sided_walk(-2, 2.0, -3.0, 3.0, rng)
            assert p.position_at(0.0) == -2

    def test_horizon_error(self):
        p = scripted_path(0.5, 0, fwd=[(0.5, +1)], t_fwd=1.0, t_back=-1.0)
        with pytest.raises(HorizonError):
            p.position_at(1.5)
        with pytest.raises(HorizonError):
            p.position_at(-1.5)

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(8)
        p = simulate_two_sided_walk(0, 2.0, -5.0, 5.0, rng)
        ts = np.linspace(-5.0, 5.0, 101)
        vec = p.positions_at(ts)
        for t, v in zip(ts, vec):
            assert p.position_at(float(t)) == v


class TestSimulate:
    def test_determinism(self):
        a = simulate_two_sided_walk(0, 2.0, -4.0, 4.0, np.random.default_rng(42))
        b = simulate_two_sided_walk(0, 2.0, -4.0, 4.0, np.random.default_rng(42))
        assert np.array_equal(a.fwd_times, b.fwd_times)
        assert np.array_equal(a.fwd_steps, b.fwd_steps)
        assert np.array_equal(a.bwd_times, b.bwd_times)
        assert np.array_equal(a.bwd_steps, b.bwd_steps)

    def test_rate_zero_only_for_frozen(self):
        p = simulate_two_sided_walk(1, 0.0, 0.0, 5.0, np.random.default_rng(0))
        assert p.n_jumps == 0
        with pytest.raises(ParameterError):
            simulate_two_sided_walk(0, -1.0, 0.0, 1.0, np.random.default_rng(0))

    def test_ensemble_moments(self):
        # analytic oracle: jump count ~ Poisson(rate*t); Var(W_t) = rate*t
        rng = np.random.default_rng(77)
        n, rate, t = 6000, 2.0, 100.0
        wid, times, positions, counts = _batch_walks(
            np.zeros(n, dtype=np.int64), rate, t, rng
        )
        mean_jumps = counts.mean()
        se = math.sqrt(rate * t / n)
        assert abs(mean_jumps - rate * t) < 3 * se
        finals = np.zeros(n, dtype=np.int64)
        starts = np.concatenate(([0], np.cumsum(counts)))[:-1]
        nz = counts > 0
        finals[nz] = positions[(starts + counts - 1)[nz]]
        var = finals.var()
        assert abs(var - rate * t) / (rate * t) < 0.05

    def test_two_sided_symmetry(self):
        # law of W_{-t} matches law of W_t: compare mean and variance curves
        rng = np.random.default_rng(123)
        n, t = 3000, 6.0
        fwd_vals, bwd_vals = [], []
        for _ in range(n):
            p = simulate_two_sided_walk(0, 2.0, -t, t, rng)
            fwd_vals.append(p.position_at(t))
            bwd_vals.append(p.position_at(-t))
        fwd, bwd = np.asarray(fwd_vals), np.asarray(bwd_vals)
        se_mean = math.sqrt(2 * 2.0 * t / n)
        assert abs(fwd.mean() - bwd.mean()) < 4 * se_mean
        assert abs(fwd.var() - bwd.var()) / (2.0 * t) < 0.15


class TestTimeChange:
    def test_identity_when_rates_equal(self):
        p = simulate_two_sided_walk(0, 2.0, -1.0, 4.0, np.random.default_rng(1))
        q = apply_time_change(p, 1.0, 2.0, 2.0)
        assert q is p  # bitwise identity on the jump list

    def test_hand_retiming(self):
        p = scripted_path(0.1, 0, fwd=[(2.0, +1)], t_fwd=4.0)
        q = apply_time_change(p, 1.0, 4.0, 2.0)
        assert q.fwd_times.tolist() == [1.5]
        assert q.t_fwd == pytest.approx(1.0 + 3.0 / 2.0)

    def test_tau_zero_pure_speedup(self):
        p = scripted_path(0.1, 0, fwd=[(1.0, +1), (3.0, -1)], t_fwd=4.0)
        q = apply_time_change(p, 0.0, 4.0, 2.0)
        assert q.fwd_times.tolist() == [0.5, 1.5]
        assert q.t_fwd == pytest.approx(2.0)

    def test_tau_beyond_horizon(self):
        p = scripted_path(0.1, 0, fwd=[(1.0, +1)], t_fwd=2.0)
        with pytest.raises(HorizonError):
            apply_time_change(p, 3.0, 4.0, 2.0)

    def test_clock_rescaling_exact(self):
        p = scripted_path(0.1, 0, fwd=[(0.5, +1), (1.25, +1), (2.0, -1), (3.5, +1)],
                          t_fwd=4.0)
        tau, d_r, d_b = 1.0, 6.0, 2.0
        q = apply_time_change(p, tau, d_r, d_b)
        for t in [0.0, 0.5, 0.99, 1.0, 1.1, 1.3, 1.5, q.t_fwd]:
            if t <= tau:
                assert q.position_at(t) == p.position_at(t)
            else:
                assert q.position_at(t) == p.position_at(tau + (d_r / d_b) * (t - tau))


class TestMu:
    def test_limit_small_theta(self):
        assert abs(mu_of(1.0, 1e-6)) < 1e-5

    def test_high_precision_value(self):
        import mpmath

        mpmath.mp.dps = 50
        ref = float(mpmath.mpf("0.5") - 2 * (mpmath.cosh(mpmath.mpf("0.5")) - 1))
        assert mu_of(1.0, 0.5) == pytest.approx(ref, abs=1e-15)

    def test_negative_for_small_alpha(self):
        assert mu_of(0.1, 0.5) == pytest.approx(-0.2052519304127616, abs=1e-12)


class TestLemma2Bound:
    def test_deep_start_is_never_hit(self):
        rng = np.random.default_rng(2)
        rep = check_lemma2_bound(-50, 1.0, 0.5, 0.0, 2.0, 2000, rng)
        assert rep.empirical_prob == 0.0
        assert rep.bound == pytest.approx(math.exp(-25.0))
        assert rep.passed

    def test_vacuous_at_origin(self):
        rng = np.random.default_rng(3)
        rep = check_lemma2_bound(0, 1.0, 0.5, 0.0, 2.0, 2000, rng)
        assert rep.bound == 1.0
        assert rep.passed

    def test_restart_time_five(self):
        rng = np.random.default_rng(4)
        rep = check_lemma2_bound(0, 1.0, 0.5, 5.0, 2.0, 10_000, rng)
        assert rep.bound == pytest.approx(0.2941279659709889, rel=1e-12)
        assert rep.empirical_prob <= rep.bound + 3 * rep.ci_halfwidth
        assert rep.passed

    def test_mu_nonpositive_rejected(self):
        with pytest.raises(ParameterError):
            check_lemma2_bound(0, 0.1, 0.5, 1.0, 2.0, 2000, np.random.default_rng(0))

    def test_small_n_rejected(self):
        with pytest.raises(ParameterError):
            check_lemma2_bound(0, 1.0, 0.5, 1.0, 2.0, 10, np.random.default_rng(0))


class TestLineAvoidance:
    def test_empty_configuration(self):
        rep = check_line_avoidance(
            Configuration({}, (0, 0)), 1.0, 10.0, 500, np.random.default_rng(0)
        )
        assert rep.estimate == 1.0

    def test_single_particle_strictly_between(self):
        w = Configuration({0: (0.5,)}, (0, 0))
        rep = check_line_avoidance(w, 1.0, 20.0, 4000, np.random.default_rng(1))
        assert rep.estimate - 3 * rep.ci_halfwidth > 0.0
        assert rep.estimate + 3 * rep.ci_halfwidth < 1.0

    def test_superset_monotone_on_shared_randomness(self):
        # coupled comparison: same simulated walks, subset indicator computed
        # from a subset of them
        rng = np.random.default_rng(9)
        n = 400
        t_fwd = 10.0
        crossings = np.zeros((n, 2), dtype=bool)
        for rep in range(n):
            walks = [
                simulate_two_sided_walk(0, 2.0, 0.0, t_fwd, rng, label=0.1),
                simulate_two_sided_walk(0, 2.0, 0.0, t_fwd, rng, label=0.2),
            ]
            for j, p in enumerate(walks):
                hit = any(
                    pos >= 1.0 * t for t, pos in zip(
                        p.fwd_times, p.x0 + np.cumsum(p.fwd_steps)
                    )
                )
                crossings[rep, j] = hit
        avoid_sub = ~crossings[:, 0]
        avoid_super = ~(crossings[:, 0] | crossings[:, 1])
        assert (avoid_super <= avoid_sub).all()

    def test_rejects_right_particles(self):
        w = Configuration({1: (0.5,)}, (0, 1))
        with pytest.raises(ParameterError):
            check_line_avoidance(w, 1.0, 5.0, 100, np.random.default_rng(0))


class TestSerializationAndExtension:
    def test_text_round_trip(self):
        p = simulate_two_sided_walk(-1, 2.0, -2.0, 3.0, np.random.default_rng(21),
                                    label=0.625)
        q = path_from_text(path_to_text(p))
        assert q.label == p.label and q.x0 == p.x0
        assert np.array_equal(q.fwd_times, p.fwd_times)
        assert np.array_equal(q.fwd_steps, p.fwd_steps)
        assert np.array_equal(q.bwd_times, p.bwd_times)
        assert np.array_equal(q.bwd_steps, p.bwd_steps)

    def test_extend_forward_preserves_prefix(self):
        rng = np.random.default_rng(31)
        p = simulate_two_sided_walk(0, 2.0, 0.0, 2.0, rng)
        q = extend_forward(p, 5.0, rng)
        assert q.t_fwd == 5.0
        k = p.fwd_times.size
        assert np.array_equal(q.fwd_times[:k], p.fwd_times)
        assert np.array_equal(q.fwd_steps[:k], p.fwd_steps)
        assert (q.fwd_times[k:] > 2.0).all()
        with pytest.raises(HorizonError):
            extend_forward(q, 1.0, rng)
