"""Monte Carlo reference solver for the limiting diffusion.

The target system, per site x,

    d z_t(x) = [lap(z_t)(x) - beta z_t(x)^k] dt + sqrt(alpha z_t(x)^ell) dB_t(x)

is integrated by full-truncation Euler: drift and noise coefficients are
evaluated at the positive part of the state, the state itself is never
clamped.  That is the standard weakly-convergent scheme for square-root
diffusions and guarantees no negative argument ever reaches the square root.

For k = ell = 1 the first two moments satisfy closed linear ODEs; a
high-order deterministic integration of those serves as the calibration
oracle for both this solver and the particle system.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from . import _engine_kernels as _k
from ._rng import seed_state
from .graph_kernel import SiteKernel, as_density


@dataclass(frozen=True)
class SDESpec:
    """Limit-equation parameters plus integration controls (no n)."""

    alpha: float
    beta: float
    k: int
    ell: int
    kernel: SiteKernel
    rho0: np.ndarray
    dt: float
    horizon: float
    mass_guard: float = 10.0

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not (np.isfinite(self.beta) and self.beta >= 0):
            raise ValueError(f"beta must be nonnegative, got {self.beta}")
        if self.k < 1 or self.ell < 1:
            raise ValueError("k and ell must be positive integers")
        if not (0 < self.dt <= self.horizon):
            raise ValueError("need 0 < dt <= horizon")
        object.__setattr__(self, "rho0", as_density(self.rho0, self.kernel.site_count))
        steps = self.horizon / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError("horizon must be an integer multiple of dt")
        if self.beta * self.mass_guard**self.k * self.dt >= 1.0:
            warnings.warn(
                "dt is large for the drift scale: beta * guard^k * dt >= 1 "
                "(explicit Euler may be unstable near the mass guard)",
                stacklevel=2,
            )

    @property
    def nsteps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass
class SamplePath:
    """Recorded diffusion path.  The internal state evolves signed (the
    scheme never clamps it); reported values are the positive parts."""

    times: np.ndarray
    states: np.ndarray       # (T, V), post-truncation (nonnegative) values
    ok: bool
    exceeded_guard: bool

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]


@dataclass
class SDEEnsemble:
    """Terminal slice of a replica ensemble (replica r drives substreams
    (seed, r, 16+x) so results are independent of worker count)."""

    spec: SDESpec
    seed: int
    terminal: np.ndarray     # (R, V), post-truncation (nonnegative) values
    ok: np.ndarray           # (R,) finite-state flags
    exceeded_guard: np.ndarray

    @property
    def replicas(self) -> int:
        return self.terminal.shape[0]

    def guard_excursions(self) -> int:
        return int(np.sum(self.exceeded_guard))

    def failures(self) -> int:
        return int(np.sum(~self.ok))


def em_step(state, spec: SDESpec, gaussians) -> np.ndarray:
    """One full-truncation Euler step (reference implementation).

    z' = z + [lap(z+)(x) - beta z+(x)^k] dt + sqrt(alpha z+(x)^ell) sqrt(dt) g
    """
    z = np.asarray(state, dtype=np.float64)
    g = np.asarray(gaussians, dtype=np.float64)
    if z.shape != g.shape or z.shape[0] != spec.kernel.site_count:
        raise ValueError("state/gaussian shape mismatch")
    if not np.all(np.isfinite(z)):
        raise FloatingPointError("non-finite state entering em_step")
    zp = np.maximum(z, 0.0)
    lap = spec.kernel.rates.T @ zp - spec.kernel.row_sums * zp
    drift = lap - spec.beta * zp**spec.k
    out = z + drift * spec.dt + np.sqrt(spec.alpha * zp**spec.ell) * math.sqrt(spec.dt) * g
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("em_step produced a non-finite state")
    return out


def simulate_path(
    spec: SDESpec, seed: int, stream_id: int = 0, record_stride: int = 1
) -> SamplePath:
    """One path with the full grid recorded every record_stride steps."""
    nsteps = spec.nsteps
    if nsteps % record_stride != 0:
        raise ValueError("record_stride must divide the step count")
    nsites = spec.kernel.site_count
    states = np.empty((nsites, 4), dtype=np.uint64)
    for x in range(nsites):
        seed_state(seed, stream_id, _k.SDE_SUBSTREAM_BASE + x, states[x])
    rows = nsteps // record_stride + 1
    path = np.empty((rows, nsites), dtype=np.float64)
    path[0] = spec.rho0
    z = spec.rho0.copy()
    ok, exceeded = _k.em_path(
        z, spec.kernel.rates, spec.kernel.row_sums,
        spec.alpha, spec.beta, spec.k, spec.ell, spec.dt, nsteps,
        spec.mass_guard, states, np.zeros(nsites), np.zeros(nsites, dtype=np.bool_),
        path, record_stride,
    )
    times = np.arange(rows) * (spec.dt * record_stride)
    return SamplePath(
        times=times, states=np.maximum(path, 0.0), ok=bool(ok),
        exceeded_guard=bool(exceeded),
    )


def simulate_paths(spec: SDESpec, replicas: int, seed: int) -> SDEEnsemble:
    """Replica ensemble; terminal states only (paths are not retained)."""
    if replicas <= 0:
        raise ValueError("replicas must be positive")
    terminal, ok, exceeded = _k.sde_terminal_batch(
        replicas, seed, spec.rho0, spec.kernel.rates, spec.kernel.row_sums,
        spec.alpha, spec.beta, spec.k, spec.ell, spec.dt, spec.nsteps,
        spec.mass_guard,
    )
    if not np.all(ok):
        warnings.warn(
            f"{int(np.sum(~ok))} path(s) left double range and were aborted",
            stacklevel=2,
        )
    return SDEEnsemble(
        spec=spec, seed=seed, terminal=np.maximum(terminal, 0.0), ok=ok,
        exceeded_guard=exceeded,
    )


def coupled_step_pair(spec: SDESpec, replicas: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Terminal means at step sizes (dt, 2 dt) from pairwise-coupled paths.

    The coarse path consumes the fine path's Brownian increments summed in
    pairs, so the two bias estimates share almost all Monte Carlo noise;
    their ratio cleanly exposes the first-order weak error.
    Returns (fine_terminal, coarse_terminal), each (R, V).
    """
    if spec.nsteps % 2 != 0:
        raise ValueError("need an even number of steps to couple dt with 2 dt")
    fine, coarse, ok = _k.sde_coupled_pair_batch(
        replicas, seed, spec.rho0, spec.kernel.rates, spec.kernel.row_sums,
        spec.alpha, spec.beta, spec.k, spec.ell, spec.dt, spec.nsteps,
        spec.mass_guard,
    )
    if not np.all(ok):
        warnings.warn(f"{int(np.sum(~ok))} coupled path(s) aborted", stacklevel=2)
    return np.maximum(fine, 0.0), np.maximum(coarse, 0.0)


def moment_oracle_linear(spec: SDESpec, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact first/second moments for the linear case k = ell = 1.

    d/dt m = A m and d/dt S = A S + S A' + alpha diag(m), with
    A = rates' - diag(row_sums) - beta I; solved by a high-order
    deterministic integrator with max step dt/100.  Returns
    (mean vector, second-moment matrix E[z z']).
    """
    if spec.k != 1 or spec.ell != 1:
        raise ValueError("the linear moment oracle requires k = ell = 1")
    if t < 0:
        raise ValueError("t must be nonnegative")
    nsites = spec.kernel.site_count
    rho0 = spec.rho0
    if t == 0.0:
        return rho0.copy(), np.outer(rho0, rho0)
    a_mat = spec.kernel.rates.T - np.diag(spec.kernel.row_sums) - spec.beta * np.eye(nsites)

    def rhs(_t, y):
        m = y[:nsites]
        s = y[nsites:].reshape(nsites, nsites)
        dm = a_mat @ m
        ds = a_mat @ s + s @ a_mat.T + spec.alpha * np.diag(m)
        return np.concatenate([dm, ds.ravel()])

    y0 = np.concatenate([rho0, np.outer(rho0, rho0).ravel()])
    sol = solve_ivp(
        rhs, (0.0, t), y0, method="DOP853",
        rtol=1e-12, atol=1e-14, max_step=spec.dt / 100.0,
    )
    if not sol.success:
        raise RuntimeError(f"moment ODE integration failed: {sol.message}")
    yT = sol.y[:, -1]
    return yT[:nsites], yT[nsites:].reshape(nsites, nsites)
