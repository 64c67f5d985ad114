"""Pathwise domination coupling and hitting-probability estimates.

A companion process xi is driven by eta's events: births and jumps are
replicated; on an eta-death at site x one shared uniform (indexed by the
transition counter) decides whether xi also annihilates there or creates a
particle instead, the threshold being
(death - birth) / (2 (death + birth)) at eta's pre-event count.  The rule
keeps xi >= eta entrywise along every path, so xi's total mass dominates
eta's and a gambler's-ruin bound caps the probability that eta's mass
reaches K before hitting 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _engine_kernels as _k
from ._rng import RngState
from .ctmc_engine import Event, as_configuration, _KIND_NAMES
from .graph_kernel import SiteKernel
from .rate_synthesis import ModelParams, birth_rate, death_rate


class DominationViolation(AssertionError):
    """xi fell below eta: the replication rule was not applied correctly."""


@dataclass
class CoupledState:
    """Joint state (eta, xi) plus the transition counter T(t)."""

    eta: np.ndarray
    xi: np.ndarray
    transition_counter: int = 0

    def check_domination(self) -> None:
        if np.any(self.xi < self.eta):
            raise DominationViolation(
                f"xi < eta at sites {np.nonzero(self.xi < self.eta)[0].tolist()}"
            )

    @property
    def margin(self) -> int:
        return int(np.min(self.xi - self.eta))


@dataclass(frozen=True)
class DominationReport:
    replicas: int
    violations: int
    min_margin: int
    slack_decreases: int     # events where sum(xi - eta) shrank; 0 expected
    guard_terminations: int
    total_events: int


@dataclass(frozen=True)
class HittingBoundReport:
    """Monte Carlo estimate of P[mass exceeds K before hitting 0].

    outcomes[r]: 0 hit zero first, 1 exceeded the cap first, 2 event guard;
    stopping_times[r] is the corresponding exact event time (NaN on guard).
    """

    p_hat: float
    std_err: float
    bound: float             # initial mass / K
    initial_mass: float
    cap: float
    replicas: int
    decided: int
    hits: int
    guard_terminations: int
    outcomes: np.ndarray = None
    stopping_times: np.ndarray = None

    def satisfies_bound(self, z: float = 4.0) -> bool:
        return self.p_hat <= self.bound + z * self.std_err


def coupling_threshold(p: ModelParams, count: int) -> float:
    """Probability threshold governing xi's move on an eta-death."""
    b = birth_rate(p, count)
    d = death_rate(p, count)
    if b + d <= 0.0:
        raise ValueError("threshold undefined at zero total reaction rate")
    return (d - b) / (2.0 * (d + b))


def coupled_step(
    state: CoupledState,
    p: ModelParams,
    kernel: SiteKernel,
    rng: RngState,
    shared: RngState,
    t0: float = 0.0,
) -> tuple[Event, CoupledState]:
    """One eta-event with its xi replication; hard-asserts domination.

    Consumes exactly one shared uniform whether or not the event is a death,
    so the shared-stream index always equals the transition counter.
    """
    state.check_domination()
    eta = as_configuration(state.eta, kernel.site_count)
    xi = as_configuration(state.xi, kernel.site_count)
    cmax = int(eta.max())
    tb, td = _k.make_tables(
        _k.RATES_POWER, p.alpha, p.beta, p.k, p.ell, float(p.n),
        _k.EMPTY_COEFFS, _k.EMPTY_COEFFS, cmax + 2,
    )
    rowsum = kernel.row_sums
    total = 0.0
    for x in range(kernel.site_count):
        cx = int(eta[x])
        total += cx * rowsum[x] + tb[cx] + td[cx]
    if total <= 0.0:
        raise ValueError("absorbing state: no eta event to couple")
    out_xy = np.empty(2, dtype=np.int64)
    dt, kind = _k.ctmc_draw(eta, kernel.rates, rowsum, tb, td, total, rng.raw, out_xy)
    x, y = int(out_xy[0]), int(out_xy[1])
    u_shared = shared.uniform()

    new_eta = eta.copy()
    new_xi = xi.copy()
    if kind == _k.EV_BIRTH:
        new_eta[x] += 1
        new_xi[x] += 1
    elif kind == _k.EV_DEATH:
        thr = (td[eta[x]] - tb[eta[x]]) / (2.0 * (td[eta[x]] + tb[eta[x]]))
        new_eta[x] -= 1
        if u_shared > thr:
            new_xi[x] -= 1
        else:
            new_xi[x] += 1
    else:
        new_eta[x] -= 1
        new_eta[y] += 1
        new_xi[x] -= 1
        new_xi[y] += 1
    nxt = CoupledState(new_eta, new_xi, state.transition_counter + 1)
    nxt.check_domination()
    return Event(_KIND_NAMES[kind], x, y, t0 + float(dt)), nxt


def domination_run(
    p: ModelParams,
    kernel: SiteKernel,
    eta0,
    horizon: float,
    *,
    replicas: int,
    seed: int,
    max_events: int = 10**8,
) -> DominationReport:
    """Run coupled replicas to the horizon, certifying xi >= eta pathwise."""
    eta0 = as_configuration(eta0, kernel.site_count)
    events, _terms, violations, margins, decreases, _w, _s = _k.coupled_batch(
        replicas, seed, eta0, kernel.rates, kernel.row_sums, float(horizon),
        int(max_events), p.alpha, p.beta, p.k, p.ell, float(p.n),
    )
    guard = int(np.sum(_terms == _k.TERM_EVENT_GUARD))
    return DominationReport(
        replicas=replicas,
        violations=int(violations.sum()),
        min_margin=int(margins.min()) if replicas else 0,
        slack_decreases=int(decreases.sum()),
        guard_terminations=guard,
        total_events=int(events.sum()),
    )


def hitting_bound_estimate(
    p: ModelParams,
    kernel: SiteKernel,
    eta0,
    cap: float,
    *,
    replicas: int,
    seed: int,
    max_events: int = 10**8,
) -> HittingBoundReport:
    """Estimate P[total mass exceeds ``cap`` before hitting 0].

    Each replica runs until one stopping time fires; the event guard is a
    backstop and such replicas are excluded from the estimate but reported.
    """
    eta0 = as_configuration(eta0, kernel.site_count)
    s0 = float(eta0.sum()) / p.n
    if s0 > cap:
        raise ValueError(f"initial mass {s0} exceeds the cap {cap}")
    cap_count = int(math.floor(cap * p.n))
    if kernel.site_count == 1:
        _c, _ev, terms, _t, tau0, tauK, _cm = _k.bd_terminal_batch(
            replicas, seed, int(eta0[0]), np.inf, cap_count, int(max_events),
            _k.RATES_POWER, p.alpha, p.beta, p.k, p.ell, float(p.n),
            _k.EMPTY_COEFFS, _k.EMPTY_COEFFS, cap_count + 3,
        )
    else:
        out = _k.ctmc_batch(
            replicas, seed, eta0, kernel.rates, kernel.row_sums, np.inf,
            cap_count, int(max_events),
            _k.RATES_POWER, p.alpha, p.beta, p.k, p.ell, float(p.n),
            _k.EMPTY_COEFFS, _k.EMPTY_COEFFS, False,
        )
        terms, tau0, tauK = out[2], out[3], out[4]
    hit_mask = terms == _k.TERM_MASS_CAP
    zero_mask = terms == _k.TERM_ABSORBED
    hits = int(np.sum(hit_mask))
    zeros = int(np.sum(zero_mask))
    guard = replicas - hits - zeros
    decided = hits + zeros
    p_hat = hits / decided if decided else math.nan
    se = math.sqrt(p_hat * (1.0 - p_hat) / decided) if decided else math.nan
    outcomes = np.full(replicas, 2, dtype=np.int8)
    outcomes[zero_mask] = 0
    outcomes[hit_mask] = 1
    stop_times = np.full(replicas, np.nan)
    stop_times[zero_mask] = tau0[zero_mask]
    stop_times[hit_mask] = tauK[hit_mask]
    return HittingBoundReport(
        p_hat=p_hat,
        std_err=se,
        bound=s0 / cap,
        initial_mass=s0,
        cap=cap,
        replicas=replicas,
        decided=decided,
        hits=hits,
        guard_terminations=guard,
        outcomes=outcomes,
        stopping_times=stop_times,
    )


def symmetric_walk_hit_estimate(
    start: int,
    upper: int,
    *,
    replicas: int,
    seed: int,
    max_steps: int = 10**8,
) -> HittingBoundReport:
    """Validation oracle for the estimator itself: a fair +-1 walk hits
    ``upper`` before 0 with probability exactly start/upper."""
    if not (0 < start <= upper):
        raise ValueError("need 0 < start <= upper")
    outcomes = _k.symmetric_walk_batch(replicas, seed, start, upper, max_steps)
    hits = int(np.sum(outcomes == 1))
    zeros = int(np.sum(outcomes == 0))
    decided = hits + zeros
    p_hat = hits / decided if decided else math.nan
    se = math.sqrt(p_hat * (1.0 - p_hat) / decided) if decided else math.nan
    return HittingBoundReport(
        p_hat=p_hat,
        std_err=se,
        bound=start / upper,
        initial_mass=float(start),
        cap=float(upper),
        replicas=replicas,
        decided=decided,
        hits=hits,
        guard_terminations=replicas - decided,
    )
