import math

import numpy as np
import pytest

from frontsim.bounds import (
    BoundGridSpec,
    grid_to_csv,
    run_single_walk_grid,
    verify_lemma1a,
    verify_record_identity,
    verify_shift_invariance,
)
from frontsim.config import Configuration, ModelParams, sample_nu
from frontsim.errors import ParameterError
from frontsim.front import FrontTrace
from frontsim.renewal import RenewalRecord


class TestLemma1a:
    def test_empty_configuration(self):
        rep = verify_lemma1a(Configuration({}, (0, 0)), 1.0, 0.5, 1.0, 2000,
                             np.random.default_rng(0))
        assert rep.empirical_prob == 0.0 and rep.passed

    def test_vacuous_at_origin(self):
        w = Configuration({0: (0.5,)}, (0, 0))
        rep = verify_lemma1a(w, 1.0, 0.5, 0.0, 2000, np.random.default_rng(1))
        assert rep.bound == pytest.approx(1.0)
        assert rep.passed

    def test_poisson_left_window(self):
        rng = np.random.default_rng(2024)
        w = sample_nu(1.0, (-30, 0), rng)
        rep = verify_lemma1a(w, 1.0, 0.5, 5.0, 10_000, rng)
        assert rep.empirical_prob - 3 * rep.ci_halfwidth <= rep.bound
        assert rep.passed

    def test_right_particles_rejected(self):
        w = Configuration({1: (0.5,)}, (0, 1))
        with pytest.raises(ParameterError):
            verify_lemma1a(w, 1.0, 0.5, 1.0, 2000, np.random.default_rng(0))


class TestGrid:
    def test_small_grid_runs_and_serializes(self):
        spec = BoundGridSpec(x_values=(0, -1), t_values=(1.0, 2.0),
                             n_per_cell=2000, alpha=1.0, theta=0.5)
        results = run_single_walk_grid(spec, np.random.default_rng(5))
        assert len(results) == 4
        assert all(rep.passed for _, _, rep in results)
        csv = grid_to_csv(results)
        assert csv.splitlines()[0] == "x,t,empirical,ci,bound,pass"
        assert len(csv.splitlines()) == 5

    def test_spec_validation(self):
        with pytest.raises(ParameterError):
            BoundGridSpec((1,), (1.0,), 2000, 1.0, 0.5)
        with pytest.raises(ParameterError):
            BoundGridSpec((0,), (1.0,), 10, 1.0, 0.5)
        with pytest.raises(ParameterError):
            BoundGridSpec((0,), (1.0,), 2000, 0.1, 0.5)  # mu < 0


class TestShiftInvariance:
    def test_time_zero_exact(self):
        params = ModelParams(1.0, 2.0, 2.0, "single_rate")
        rep = verify_shift_invariance(
            params, t=0.0, bulk_window=(-10, 10), n=200,
            rng=np.random.default_rng(9),
        )
        assert rep.passed

    def test_bulk_invariance_at_t_ten(self):
        params = ModelParams(1.0, 2.0, 2.0, "single_rate")
        rep = verify_shift_invariance(
            params, t=10.0, bulk_window=(-20, 20), n=300,
            rng=np.random.default_rng(11),
        )
        assert rep.passed, (rep.chi2, rep.dof, rep.p_value)

    def test_margin_enforced(self):
        params = ModelParams(1.0, 2.0, 2.0, "single_rate")
        with pytest.raises(ParameterError):
            verify_shift_invariance(
                params, t=10.0, bulk_window=(-20, 20), n=10,
                rng=np.random.default_rng(0), sim_window=(-22, 22),
            )

    def test_shrunken_window_negative_control(self):
        # boundary leakage: no standoff at all, so bulk sites near the edge
        # lose mass and the chi-square gate must fail
        params = ModelParams(1.0, 2.0, 2.0, "single_rate")
        rep = verify_shift_invariance(
            params, t=10.0, bulk_window=(-20, 20), n=300,
            rng=np.random.default_rng(13), sim_window=(-20, 20),
            enforce_margin=False,
        )
        assert not rep.passed


class TestRecordIdentity:
    def _front(self):
        return FrontTrace(
            r0=0,
            times=np.asarray([1.0, 2.0, 3.0, 4.0]),
            positions=np.asarray([1, 2, 1, 2]),
            directions=np.asarray([1, 1, -1, 1]),
            movers=np.full(4, 0.5),
            t_end=5.0,
        )

    def test_empty_true(self):
        assert verify_record_identity([], self._front())

    def test_valid_records(self):
        recs = [RenewalRecord(1.0, 1, frozenset()),
                RenewalRecord(2.0, 2, frozenset())]
        assert verify_record_identity(recs, self._front())

    def test_fuzzed_record_detected(self):
        recs = [RenewalRecord(1.0, 2, frozenset())]  # running max there is 1
        assert not verify_record_identity(recs, self._front())
