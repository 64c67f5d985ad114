import math

import numpy as np
import pytest
from scipy.linalg import expm


from rdlab.sde_reference import (
    SDESpec,
    coupled_step_pair,
    em_step,
    moment_oracle_linear,
    simulate_path,
    simulate_paths,
)


def _spec(kernel, rho0, **kw):
    base = dict(alpha=1.0, beta=1.0, k=1, ell=1, kernel=kernel,
                rho0=np.asarray(rho0, dtype=float), dt=0.001, horizon=1.0)
    base.update(kw)
    return SDESpec(**base)


class TestSpecValidation:
    def test_dt_must_divide_horizon(self, single_site):
        with pytest.raises(ValueError):
            _spec(single_site, [1.0], dt=0.3, horizon=1.0)

    def test_dt_bounded_by_horizon(self, single_site):
        with pytest.raises(ValueError):
            _spec(single_site, [1.0], dt=2.0, horizon=1.0)

    def test_stability_advisory(self, single_site):
        with pytest.warns(UserWarning):
            _spec(single_site, [1.0], beta=5.0, k=3, dt=0.5, horizon=1.0,
                  mass_guard=2.0)


class TestEmStep:
    def test_origin_is_a_fixed_point(self, single_site):
        spec = _spec(single_site, [0.0])
        out = em_step(np.zeros(1), spec, np.array([1.7]))
        assert out[0] == 0.0

    def test_near_deterministic_linear_decay(self, single_site):
        # vanishing noise: explicit Euler on dz = -z dt
        spec = _spec(single_site, [1.0], alpha=1e-12, dt=1e-4, horizon=0.1)
        z = np.array([1.0])
        rng = np.random.default_rng(0)
        for _ in range(spec.nsteps):
            z = em_step(z, spec, rng.standard_normal(1))
        assert z[0] == pytest.approx(math.exp(-0.1), abs=1e-3)

    def test_pure_diffusion_conserves_mass(self, two_site):
        # beta's drift off, zero gaussians: only the graph term moves mass
        spec = _spec(two_site, [1.0, 0.0], beta=1e-300, alpha=1.0)
        z = np.array([1.0, 0.0])
        for _ in range(100):
            z = em_step(z, spec, np.zeros(2))
        assert z.sum() == pytest.approx(1.0, abs=1e-12)
        assert z[0] < 1.0 < z[0] + 2 * z[1]  # mass actually moved

    def test_coefficients_use_positive_part(self, single_site):
        spec = _spec(single_site, [1.0])
        out = em_step(np.array([-0.5]), spec, np.array([2.0]))
        # drift and noise vanish at the truncated state, so nothing moves
        assert out[0] == -0.5

    def test_nonfinite_state_aborts(self, single_site):
        spec = _spec(single_site, [1.0])
        with pytest.raises(FloatingPointError):
            em_step(np.array([np.nan]), spec, np.array([0.0]))


class TestSimulatePaths:
    def test_deterministic_under_seed(self, single_site):
        spec = _spec(single_site, [1.0], dt=0.01)
        a = simulate_paths(spec, 50, seed=4)
        b = simulate_paths(spec, 50, seed=4)
        assert np.array_equal(a.terminal, b.terminal)
        c = simulate_paths(spec, 50, seed=5)
        assert not np.array_equal(a.terminal, c.terminal)

    def test_single_path_reproducible_and_recorded(self, single_site):
        spec = _spec(single_site, [1.0], dt=0.01)
        path = simulate_path(spec, seed=4, record_stride=10)
        assert path.states.shape == (11, 1)
        assert path.times[-1] == pytest.approx(1.0)
        assert path.states[0, 0] == 1.0
        again = simulate_path(spec, seed=4, record_stride=10)
        assert np.array_equal(path.states, again.states)

    def test_reported_values_are_nonnegative(self, single_site):
        spec = _spec(single_site, [0.05], dt=0.01)
        ens = simulate_paths(spec, 500, seed=6)
        assert np.all(ens.terminal >= 0.0)
        path = simulate_path(spec, seed=6)
        assert np.all(path.states >= 0.0)

    def test_terminal_matches_single_path(self, two_site):
        spec = _spec(two_site, [1.0, 0.5], dt=0.01)
        ens = simulate_paths(spec, 3, seed=9)
        for r in range(3):
            path = simulate_path(spec, seed=9, stream_id=r)
            assert np.array_equal(path.terminal, ens.terminal[r])

    def test_guard_excursions_flagged(self, single_site):
        spec = _spec(single_site, [1.0], mass_guard=0.5, dt=0.01)
        ens = simulate_paths(spec, 20, seed=0)
        assert ens.guard_excursions() == 20  # initial state already above


class TestMomentOracle:
    def test_initial_condition(self, two_site):
        spec = _spec(two_site, [1.0, 0.5])
        mean, second = moment_oracle_linear(spec, 0.0)
        assert np.array_equal(mean, [1.0, 0.5])
        assert np.array_equal(second, np.outer([1.0, 0.5], [1.0, 0.5]))

    def test_single_site_closed_form(self, single_site):
        spec = _spec(single_site, [1.0])
        mean, second = moment_oracle_linear(spec, 1.0)
        assert mean[0] == pytest.approx(math.exp(-1.0), abs=1e-9)
        # E[z^2](t) = e^{-2t} + e^{-t} - e^{-2t} = e^{-t} for these parameters
        assert second[0, 0] == pytest.approx(math.exp(-1.0), abs=1e-9)

    def test_two_site_mean_matches_matrix_exponential(self, two_site):
        spec = _spec(two_site, [1.0, 0.0])
        mean, _ = moment_oracle_linear(spec, 1.0)
        gen = two_site.rates.T - np.diag(two_site.row_sums) - np.eye(2)
        want = expm(gen) @ np.array([1.0, 0.0])
        assert mean == pytest.approx(want, abs=1e-9)

    def test_requires_linear_orders(self, single_site):
        spec = _spec(single_site, [1.0], k=2)
        with pytest.raises(ValueError):
            moment_oracle_linear(spec, 1.0)

    def test_ensemble_matches_oracle(self, single_site):
        spec = _spec(single_site, [1.0], dt=0.002, horizon=0.5)
        ens = simulate_paths(spec, 20_000, seed=15)
        mean, second = moment_oracle_linear(spec, 0.5)
        m = ens.terminal[:, 0]
        se = m.std(ddof=1) / math.sqrt(len(m))
        assert abs(m.mean() - mean[0]) <= 4 * se + 0.01 * mean[0]
        sq = m**2
        se2 = sq.std(ddof=1) / math.sqrt(len(sq))
        assert abs(sq.mean() - second[0, 0]) <= 4 * se2 + 0.01 * second[0, 0]


class TestCoupledPair:
    def test_needs_even_steps(self, single_site):
        with pytest.warns(UserWarning):  # large-dt stability advisory
            spec = _spec(single_site, [1.0], dt=1.0 / 3.0, horizon=1.0)
        with pytest.raises(ValueError):
            coupled_step_pair(spec, 10, seed=0)

    def test_pairs_are_strongly_coupled(self, single_site):
        spec = _spec(single_site, [1.0], dt=0.005)
        fine, coarse = coupled_step_pair(spec, 2000, seed=3)
        r = np.corrcoef(fine[:, 0], coarse[:, 0])[0, 1]
        assert r > 0.99
