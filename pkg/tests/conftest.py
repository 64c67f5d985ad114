"""Shared fixtures; warms the compiled kernels once so test timings reflect
the workload, not LLVM."""

import numpy as np
import pytest

import rdlab
from rdlab import _engine_kernels as _k


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Trigger jit compilation of every hot loop with tiny inputs."""
    kern1 = rdlab.SiteKernel.single_site()
    kern2 = rdlab.SiteKernel(np.array([[0.0, 1.0], [1.0, 0.0]]))
    p = rdlab.ModelParams(alpha=1.0, beta=1.0, k=1, ell=1, n=10)
    eta1 = rdlab.initial_configuration([1.0], 10)
    eta2 = rdlab.initial_configuration([1.0, 0.5], 10)

    rdlab.simulate(p, kern1, eta1, 0.05, 0.05, rng=rdlab.RngStream(0),
                   record_events=True, track_stats=True)
    rdlab.simulate_ensemble(p, kern2, eta2, 0.05, replicas=2, seed=0)
    _k.bd_terminal_batch(
        2, 0, 10, 0.05, -1, 10**6, _k.RATES_POWER, 1.0, 1.0, 1, 1, 10.0,
        _k.EMPTY_COEFFS, _k.EMPTY_COEFFS, 64,
    )
    rdlab.domination_run(p, kern2, eta2, 0.05, replicas=2, seed=0)
    rdlab.symmetric_walk_hit_estimate(1, 4, replicas=4, seed=0)
    rdlab.hitting_bound_estimate(p, kern1, eta1, 5.0, replicas=2, seed=0)

    spec = rdlab.SDESpec(alpha=1.0, beta=1.0, k=1, ell=1, kernel=kern2,
                         rho0=np.array([1.0, 0.5]), dt=0.01, horizon=0.02)
    rdlab.simulate_paths(spec, 2, 0)
    rdlab.simulate_path(spec, 0)
    from rdlab.sde_reference import coupled_step_pair
    coupled_step_pair(spec, 2, 0)

    pair = rdlab.ReactionPair([0.0], [0.0, 1.0])
    rdlab.simulate_rescaled(pair, 10, 2.0, 0.05, 0.05, seed=0)
    yield


@pytest.fixture
def single_site():
    return rdlab.SiteKernel.single_site()


@pytest.fixture
def two_site():
    return rdlab.SiteKernel(np.array([[0.0, 1.0], [1.0, 0.0]]))


@pytest.fixture
def feller_params():
    return rdlab.ModelParams(alpha=1.0, beta=1.0, k=1, ell=1, n=100)
