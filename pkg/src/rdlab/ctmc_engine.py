"""Exact event-driven simulation of the reaction-diffusion particle system.

The process holds an integer particle count per site.  Three event families
run on independent exponential clocks: a particle jumps x -> y at rate
count(x) * rate(x, y), a particle is born at x at rate birth(count(x)), and
one dies at rate death(count(x)).  Events are realized by the direct method:
one exponential waiting time at the total rate, then a categorical pick
proportional to the individual rates.

Trajectories are piecewise constant and sampled right-continuously on a
fixed grid; stopping times (mass cap exceeded, total mass hitting zero) are
recorded at exact event times.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from . import _engine_kernels as _k
from ._rng import RngState, RngStream
from .graph_kernel import SiteKernel, as_density
from .rate_synthesis import ModelParams, birth_rate, death_rate

TERMINATION_NAMES = {
    _k.TERM_HORIZON: "horizon",
    _k.TERM_ABSORBED: "absorbed",
    _k.TERM_MASS_CAP: "mass_cap",
    _k.TERM_EVENT_GUARD: "event_guard",
}

_KIND_NAMES = {_k.EV_BIRTH: "birth", _k.EV_DEATH: "death", _k.EV_JUMP: "jump"}

DEFAULT_MAX_EVENTS = 10**8


class AbsorbedStateError(RuntimeError):
    """Raised when stepping a configuration whose total event rate is zero."""


@dataclass(frozen=True)
class Event:
    """One transition: kind is 'birth', 'death' or 'jump'.

    ``site`` is the affected site (the source for jumps), ``dest`` the jump
    destination (-1 otherwise).  ``time`` is absolute along a trajectory and
    NaN in pure rate enumerations.
    """

    kind: str
    site: int
    dest: int = -1
    time: float = math.nan


@dataclass(frozen=True)
class FirstPassage:
    """Exact stopping times; None when the passage never occurred."""

    tau_zero: float | None = None
    tau_mass_cap: float | None = None


@dataclass
class EventLog:
    """Columnar event record (times strictly increasing)."""

    times: np.ndarray
    kinds: np.ndarray
    src: np.ndarray
    dst: np.ndarray

    def __len__(self) -> int:
        return len(self.times)

    def __iter__(self):
        for t, kd, s, d in zip(self.times, self.kinds, self.src, self.dst):
            yield Event(_KIND_NAMES[int(kd)], int(s), int(d), float(t))


@dataclass
class TrajectoryStats:
    """Compensator integrals accumulated exactly over holding intervals."""

    int_b: np.ndarray      # (V,)   integral of b_x(zeta_s) ds
    int_a: np.ndarray      # (V,)   integral of a_xx(zeta_s) ds
    qv: np.ndarray         # (V,)   sum of squared coordinate jumps
    int_pair: np.ndarray   # (V,V)  integral of the product-coordinate compensator


@dataclass
class Trajectory:
    """Sampled path of densities plus bookkeeping.

    Consecutive recorded densities differ entrywise by integer multiples of
    1/n; after early termination (absorption, mass cap, guard) the remaining
    grid rows repeat the state at the stopping time.
    """

    params: ModelParams
    kernel: SiteKernel
    sample_times: np.ndarray
    densities: np.ndarray
    event_count: int
    termination: str
    first_passage: FirstPassage
    initial_counts: np.ndarray
    final_counts: np.ndarray
    events: EventLog | None = None
    stats: TrajectoryStats | None = None

    @property
    def site_count(self) -> int:
        return self.densities.shape[1]


@dataclass
class EnsembleStats:
    """Per-replica terminal states and martingale bookkeeping.

    Replica r was driven by RngStream(seed, r); arrays are indexed by
    replica, so reductions are scheduler-invariant.
    """

    params: ModelParams
    kernel: SiteKernel
    zeta0: np.ndarray
    seed: int
    terminal_counts: np.ndarray   # (R, V) int
    event_counts: np.ndarray      # (R,)
    terminations: np.ndarray      # (R,) int8 codes
    tau_zero: np.ndarray          # (R,) NaN if not hit
    tau_mass_cap: np.ndarray
    mass_max: np.ndarray          # (R,) peak integer mass
    int_b: np.ndarray             # (R, V)
    int_a: np.ndarray             # (R, V)
    qv: np.ndarray                # (R, V)
    int_pair: np.ndarray          # (R, V, V)

    @property
    def replicas(self) -> int:
        return self.terminal_counts.shape[0]

    @property
    def terminal_densities(self) -> np.ndarray:
        return self.terminal_counts / self.params.n

    def martingale_terminal(self, x: int) -> np.ndarray:
        """M_T per replica for the coordinate observable at site x."""
        zt = self.terminal_counts[:, x] / self.params.n
        return zt - self.zeta0[x] - self.int_b[:, x]

    def pair_martingale_terminal(self, x: int, y: int) -> np.ndarray:
        """M_T per replica for the product observable at sites (x, y)."""
        n = self.params.n
        zx = self.terminal_counts[:, x] / n
        zy = self.terminal_counts[:, y] / n
        return zx * zy - self.zeta0[x] * self.zeta0[y] - self.int_pair[:, x, y]

    def guard_count(self) -> int:
        return int(np.sum(self.terminations == _k.TERM_EVENT_GUARD))


def as_configuration(counts, site_count: int | None = None) -> np.ndarray:
    """Validate and return an integer configuration vector."""
    eta = np.asarray(counts)
    if not np.issubdtype(eta.dtype, np.integer):
        if not np.all(eta == np.floor(eta)):
            raise ValueError("configuration entries must be integers")
    eta = eta.astype(np.int64)
    if eta.ndim != 1:
        raise ValueError(f"configuration must be a vector, got shape {eta.shape}")
    if site_count is not None and eta.shape[0] != site_count:
        raise ValueError(f"expected {site_count} sites, got {eta.shape[0]}")
    if np.any(eta < 0):
        raise ValueError("particle counts must be nonnegative")
    return eta


def initial_configuration(rho0, n: int) -> np.ndarray:
    """Discretize a target density: count(x) = floor(n * rho0(x))."""
    rho = as_density(rho0)
    return np.floor(n * rho).astype(np.int64)


def sample_grid(horizon: float, sample_dt: float) -> np.ndarray:
    """Grid 0, dt, 2dt, ... capped at the horizon (appended if not a multiple)."""
    if horizon <= 0 or sample_dt <= 0:
        raise ValueError("horizon and sample_dt must be positive")
    count = int(math.floor(horizon / sample_dt + 1e-9)) + 1
    grid = np.arange(count, dtype=np.float64) * sample_dt
    if grid[-1] < horizon - 1e-12 * max(1.0, horizon):
        grid = np.append(grid, horizon)
    return grid


def event_rates(
    p: ModelParams, kernel: SiteKernel, eta
) -> list[tuple[Event, float]]:
    """Enumerate (event, rate) in canonical order: per site birth, death,
    then jumps to destinations in index order (structural-zero jump entries
    where rate(x,y) == 0 are omitted)."""
    eta = as_configuration(eta, kernel.site_count)
    out: list[tuple[Event, float]] = []
    for x in range(kernel.site_count):
        cx = int(eta[x])
        out.append((Event("birth", x), birth_rate(p, cx)))
        out.append((Event("death", x), death_rate(p, cx)))
        for y in range(kernel.site_count):
            if y != x and kernel.rates[x, y] > 0.0:
                out.append((Event("jump", x, y), cx * float(kernel.rates[x, y])))
    return out


def step(
    p: ModelParams,
    kernel: SiteKernel,
    eta,
    rng: RngState,
    t0: float = 0.0,
) -> tuple[Event, np.ndarray]:
    """Advance one event; returns the event (time = t0 + waiting time) and
    the new configuration.  Consumes the stream exactly like the fused loop,
    so repeated stepping reproduces a simulate() path draw for draw."""
    eta = as_configuration(eta, kernel.site_count)
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
        raise AbsorbedStateError("total event rate is zero (absorbing state)")
    out_xy = np.empty(2, dtype=np.int64)
    dt, kind = _k.ctmc_draw(eta, kernel.rates, rowsum, tb, td, total, rng.raw, out_xy)
    x, y = int(out_xy[0]), int(out_xy[1])
    nxt = eta.copy()
    if kind == _k.EV_BIRTH:
        nxt[x] += 1
    elif kind == _k.EV_DEATH:
        nxt[x] -= 1
    else:
        nxt[x] -= 1
        nxt[y] += 1
    return Event(_KIND_NAMES[kind], x, y, t0 + float(dt)), nxt


def simulate(
    p: ModelParams,
    kernel: SiteKernel,
    eta0,
    horizon: float,
    sample_dt: float,
    *,
    mass_cap: float | None = None,
    max_events: int = DEFAULT_MAX_EVENTS,
    rng: RngStream | None = None,
    record_events: bool = False,
    track_stats: bool = False,
) -> Trajectory:
    """Run one exact trajectory and sample it on the grid.

    mass_cap stops the run the first time total mass exceeds the cap; the
    event guard stops runaway runs and is reported via ``termination``
    (hitting it signals misconfiguration, not a silent truncation).
    """
    eta0 = as_configuration(eta0, kernel.site_count)
    if max_events <= 0:
        raise ValueError("max_events must be positive")
    grid = sample_grid(horizon, sample_dt)
    stream = rng if rng is not None else RngStream(0)
    state = stream.state()
    nsites = kernel.site_count
    cap_count = int(math.floor(mass_cap * p.n)) if mass_cap is not None else -1

    counts = eta0.copy()
    grid_counts = np.empty((len(grid), nsites), dtype=np.int64)
    int_b = np.zeros(nsites)
    int_a = np.zeros(nsites)
    qv = np.zeros(nsites)
    int_pair = np.zeros((nsites, nsites))
    ev, term, _t, tau0, tauK, _mm, lt, lk, ls, ld = _k.ctmc_run(
        counts, kernel.rates, kernel.row_sums, float(horizon), grid,
        cap_count, int(max_events),
        _k.RATES_POWER, p.alpha, p.beta, p.k, p.ell, float(p.n),
        _k.EMPTY_COEFFS, _k.EMPTY_COEFFS,
        track_stats, record_events, state,
        grid_counts, int_b, int_a, qv, int_pair,
    )
    return Trajectory(
        params=p,
        kernel=kernel,
        sample_times=grid,
        densities=grid_counts / p.n,
        event_count=int(ev),
        termination=TERMINATION_NAMES[int(term)],
        first_passage=FirstPassage(
            tau_zero=None if math.isnan(tau0) else float(tau0),
            tau_mass_cap=None if math.isnan(tauK) else float(tauK),
        ),
        initial_counts=eta0,
        final_counts=counts,
        events=EventLog(lt.copy(), lk.copy(), ls.copy(), ld.copy())
        if record_events
        else None,
        stats=TrajectoryStats(int_b, int_a, qv, int_pair) if track_stats else None,
    )


def simulate_ensemble(
    p: ModelParams,
    kernel: SiteKernel,
    eta0,
    horizon: float,
    *,
    replicas: int,
    seed: int,
    mass_cap: float | None = None,
    max_events: int = DEFAULT_MAX_EVENTS,
    track_stats: bool = True,
) -> EnsembleStats:
    """Independent replicas (replica r uses RngStream(seed, r)); terminal
    states plus per-replica compensator integrals for the diagnostics."""
    eta0 = as_configuration(eta0, kernel.site_count)
    if replicas <= 0:
        raise ValueError("replicas must be positive")
    cap_count = int(math.floor(mass_cap * p.n)) if mass_cap is not None else -1
    terminal, events, terms, tau0, tauK, mass_max, int_b, int_a, qv, int_pair = (
        _k.ctmc_batch(
            replicas, seed, eta0, kernel.rates, kernel.row_sums, float(horizon),
            cap_count, int(max_events),
            _k.RATES_POWER, p.alpha, p.beta, p.k, p.ell, float(p.n),
            _k.EMPTY_COEFFS, _k.EMPTY_COEFFS, track_stats,
        )
    )
    return EnsembleStats(
        params=p,
        kernel=kernel,
        zeta0=eta0 / p.n,
        seed=seed,
        terminal_counts=terminal,
        event_counts=events,
        terminations=terms,
        tau_zero=tau0,
        tau_mass_cap=tauK,
        mass_max=mass_max,
        int_b=int_b,
        int_a=int_a,
        qv=qv,
        int_pair=int_pair,
    )


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """RFC-4180 CSV: header t,site_0,... and densities at 12 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"site_{x}" for x in range(traj.site_count)])
        for i, t in enumerate(traj.sample_times):
            w.writerow([f"{t:.12g}"] + [f"{v:.12g}" for v in traj.densities[i]])


def write_events_jsonl(traj: Trajectory, path) -> None:
    """One JSON object per event: {"t", "kind", "site"[, "dest"]}."""
    if traj.events is None:
        raise ValueError("trajectory carries no event log (record_events=False)")
    with open(path, "w") as fh:
        for ev in traj.events:
            rec = {"t": ev.time, "kind": ev.kind, "site": ev.site}
            if ev.kind == "jump":
                rec["dest"] = ev.dest
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
