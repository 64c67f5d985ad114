import numpy as np
import pytest

import rdlab
from rdlab import ModelParams, RngStream
from rdlab._rng import RngState
from rdlab.coupling import (
    CoupledState,
    coupled_step,
    coupling_threshold,
    domination_run,
    hitting_bound_estimate,
    symmetric_walk_hit_estimate,
)
from rdlab.ctmc_engine import initial_configuration


def test_threshold_hand_value():
    p = ModelParams(1.0, 1.0, 1, 1, 10)
    # (55 - 45) / (2 * 100)
    assert coupling_threshold(p, 10) == pytest.approx(0.05, rel=1e-14)


def test_threshold_stays_in_unit_half_interval():
    rng = np.random.default_rng(0)
    for _ in range(100):
        p = ModelParams(
            alpha=float(rng.uniform(0.01, 2.0)),
            beta=float(rng.uniform(0.0, 2.0)),
            k=int(rng.integers(1, 5)),
            ell=int(rng.integers(1, 5)),
            n=int(rng.integers(1, 40)),
        )
        count = int(rng.integers(1, 60))
        thr = coupling_threshold(p, count)
        assert 0.0 <= thr <= 0.5


class TestCoupledStep:
    def test_replication_rules_case_by_case(self, two_site):
        p = ModelParams(1.0, 1.0, 1, 1, 20)
        state = CoupledState(
            initial_configuration([1.0, 0.5], 20),
            initial_configuration([1.0, 0.5], 20),
        )
        rng = RngState.from_stream(RngStream(31))
        shared = RngState.from_stream(RngStream(31), substream=1)
        for i in range(400):
            if state.eta.sum() == 0:
                break
            ev, nxt = coupled_step(state, p, two_site, rng, shared)
            d_eta = nxt.eta - state.eta
            d_xi = nxt.xi - state.xi
            if ev.kind == "birth":
                assert d_eta[ev.site] == 1 and d_xi[ev.site] == 1
            elif ev.kind == "jump":
                assert d_eta[ev.site] == -1 and d_eta[ev.dest] == 1
                assert np.array_equal(d_eta, d_xi)
            else:
                assert d_eta[ev.site] == -1
                assert d_xi[ev.site] in (-1, 1)
            # the slack never shrinks
            assert (nxt.xi - nxt.eta).sum() >= (state.xi - state.eta).sum()
            assert nxt.transition_counter == state.transition_counter + 1
            state = nxt
        state.check_domination()

    def test_domination_checked_on_entry(self, single_site):
        p = ModelParams(1.0, 1.0, 1, 1, 10)
        bad = CoupledState(np.array([5]), np.array([3]))
        rng = RngState.from_stream(RngStream(0))
        shared = RngState.from_stream(RngStream(0), substream=1)
        with pytest.raises(AssertionError):
            coupled_step(bad, p, single_site, rng, shared)


class TestDominationRun:
    def test_empty_start_is_trivial(self, feller_params, single_site):
        rep = domination_run(feller_params, single_site, [0], 1.0,
                             replicas=10, seed=1)
        assert rep.violations == 0 and rep.total_events == 0

    def test_no_violations_across_models(self, single_site, two_site):
        cases = [
            (ModelParams(1.0, 1.0, 1, 1, 50), single_site, [1.0]),
            (ModelParams(1.0, 1.0, 2, 1, 50), two_site, [1.0, 0.5]),
            (ModelParams(1.0, 1.0, 2, 2, 50), two_site, [1.0, 1.0]),
        ]
        for p, kern, rho in cases:
            eta0 = initial_configuration(rho, p.n)
            rep = domination_run(p, kern, eta0, 1.0, replicas=300, seed=5)
            assert rep.violations == 0
            assert rep.min_margin >= 0
            assert rep.slack_decreases == 0
            assert rep.guard_terminations == 0


class TestHittingBound:
    def test_requires_start_below_cap(self, feller_params, single_site):
        with pytest.raises(ValueError):
            hitting_bound_estimate(feller_params, single_site, [200], 1.0,
                                   replicas=10, seed=0)

    def test_cap_equal_to_start_is_vacuous(self, single_site):
        # bound = 1: nothing to verify, but the estimate must still run
        p = ModelParams(alpha=1.0, beta=0.0, k=1, ell=1, n=20)
        eta0 = initial_configuration([1.0], 20)
        rep = hitting_bound_estimate(p, single_site, eta0, 1.0,
                                     replicas=500, seed=3)
        assert rep.bound == pytest.approx(1.0)
        assert rep.satisfies_bound()

    def test_critical_case_matches_gamblers_ruin_exactly(self, single_site):
        # beta = 0 makes the embedded mass chain a fair +-1 walk, so the hit
        # probability is exactly c0 / (floor(K n) + 1)
        p = ModelParams(alpha=1.0, beta=0.0, k=1, ell=1, n=20)
        eta0 = initial_configuration([1.0], 20)
        rep = hitting_bound_estimate(p, single_site, eta0, 5.0,
                                     replicas=4000, seed=9)
        exact = 20 / (5 * 20 + 1)
        assert abs(rep.p_hat - exact) <= 4 * rep.std_err
        assert rep.satisfies_bound()
        assert rep.guard_terminations == 0

    def test_subcritical_case_is_far_below_bound(self, single_site):
        p = ModelParams(alpha=1.0, beta=1.0, k=1, ell=1, n=50)
        eta0 = initial_configuration([1.0], 50)
        rep = hitting_bound_estimate(p, single_site, eta0, 10.0,
                                     replicas=2000, seed=2)
        assert rep.satisfies_bound()
        assert rep.p_hat <= 0.01

    def test_outcome_bookkeeping(self, single_site):
        p = ModelParams(alpha=1.0, beta=0.0, k=1, ell=1, n=10)
        eta0 = initial_configuration([1.0], 10)
        rep = hitting_bound_estimate(p, single_site, eta0, 2.0,
                                     replicas=200, seed=4)
        assert rep.decided + rep.guard_terminations == rep.replicas
        hits = int(np.sum(rep.outcomes == 1))
        assert hits == rep.hits
        assert np.all(np.isfinite(rep.stopping_times[rep.outcomes != 2]))


class TestWalkOracle:
    def test_exact_gamblers_ruin_value(self):
        rep = symmetric_walk_hit_estimate(20, 200, replicas=10_000, seed=7)
        assert rep.bound == pytest.approx(0.1)
        assert abs(rep.p_hat - 0.1) <= 4 * rep.std_err

    def test_input_validation(self):
        with pytest.raises(ValueError):
            symmetric_walk_hit_estimate(0, 10, replicas=10, seed=0)
        with pytest.raises(ValueError):
            symmetric_walk_hit_estimate(11, 10, replicas=10, seed=0)
