"""Statistical diagnostics: martingale residuals, quadratic variation,
moment and distribution comparisons between the particle system and the
reference diffusion.

The compensated coordinate process

    M_t = z_t(x) - z_0(x) - integral of b_x(z_s) ds

is a mean-zero martingale, its expected squared terminal value equals the
expected integral of a_xx(z_s), and the sum of its squared jumps estimates
the same quantity.  Each identity becomes a Monte Carlo z-test; the default
acceptance threshold is 4 standard errors so a suite of dozens of tests
stays quiet unless something is actually wrong.  Compensators are
integrated exactly over inter-event holding intervals, never off the
sampling grid.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import _engine_kernels as _k
from .ctmc_engine import EnsembleStats, Trajectory, initial_configuration
from .graph_kernel import SiteKernel, as_density
from .rate_synthesis import ModelParams
from .sde_reference import SDESpec, moment_oracle_linear, simulate_paths

DEFAULT_Z_THRESHOLD = 4.0


@dataclass
class MartingaleSeries:
    """Compensated observable along one trajectory, on the sampling grid."""

    times: np.ndarray
    values: np.ndarray
    site: int
    pair_site: int | None = None


@dataclass
class TestReport:
    name: str
    statistic: float
    std_err: float
    z_score: float
    passed: bool
    replicas: int
    runtime: float = 0.0
    threshold: float = DEFAULT_Z_THRESHOLD
    extras: dict = field(default_factory=dict)

    def to_dict(self, include_runtime: bool = True) -> dict:
        out = {
            "name": self.name,
            "statistic": self.statistic,
            "std_err": self.std_err,
            "z_score": self.z_score,
            "passed": bool(self.passed),
            "replicas": self.replicas,
            "threshold": self.threshold,
        }
        if include_runtime:
            out["runtime_seconds"] = self.runtime
        out.update(self.extras)
        return out


def _z_report(name: str, diffs: np.ndarray, threshold: float, **extras) -> TestReport:
    """z-test that a per-replica statistic has mean zero."""
    reps = len(diffs)
    mean = float(np.mean(diffs))
    se = float(np.std(diffs, ddof=1) / np.sqrt(reps)) if reps > 1 else 0.0
    if se == 0.0:
        z = 0.0 if mean == 0.0 else np.inf
    else:
        z = mean / se
    return TestReport(
        name=name,
        statistic=mean,
        std_err=se,
        z_score=z,
        passed=abs(z) <= threshold,
        replicas=reps,
        threshold=threshold,
        extras=extras,
    )


# ---------------------------------------------------------------------------
# per-trajectory residual series (event-log route)
# ---------------------------------------------------------------------------


def _event_deltas(traj: Trajectory) -> np.ndarray:
    """(E, V) integer state increments from the event log."""
    log = traj.events
    nsites = traj.site_count
    deltas = np.zeros((len(log), nsites), dtype=np.int64)
    kinds = log.kinds
    src = log.src
    dst = log.dst
    births = kinds == _k.EV_BIRTH
    deaths = kinds == _k.EV_DEATH
    jumps = kinds == _k.EV_JUMP
    idx = np.arange(len(log))
    deltas[idx[births], src[births]] = 1
    deltas[idx[deaths], src[deaths]] = -1
    deltas[idx[jumps], src[jumps]] = -1
    deltas[idx[jumps], dst[jumps]] += 1
    return deltas


def _states_and_segments(traj: Trajectory):
    """States between events and holding intervals, from the event log.

    Returns (zeta_seg, seg_start, seg_dur): zeta_seg[j] is the density on
    [seg_start[j], seg_start[j] + seg_dur[j]), covering [0, t_stop].
    """
    if traj.events is None:
        raise ValueError("trajectory carries no event log (record_events=False)")
    n = traj.params.n
    counts = np.concatenate(
        [traj.initial_counts[None, :], traj.initial_counts + np.cumsum(_event_deltas(traj), axis=0)]
    )
    t_events = traj.events.times
    t_stop = float(t_events[-1]) if len(t_events) else 0.0
    if traj.termination == "horizon":
        t_stop = float(traj.sample_times[-1])
    starts = np.concatenate([[0.0], t_events])
    ends = np.concatenate([t_events, [t_stop]])
    return counts / n, starts, np.maximum(ends - starts, 0.0)


def _series_on_grid(
    grid: np.ndarray,
    seg_starts: np.ndarray,
    seg_durations: np.ndarray,
    observable: np.ndarray,
    integrand: np.ndarray,
) -> np.ndarray:
    """M(t) = f(t) - f(0) - I(t) with I integrated exactly per segment."""
    cum = np.concatenate([[0.0], np.cumsum(integrand * seg_durations)])
    seg_idx = np.searchsorted(seg_starts, grid, side="right") - 1
    seg_idx = np.clip(seg_idx, 0, len(seg_starts) - 1)
    # clamp within the covered range: beyond the last segment the state is
    # constant and the integrand keeps its final value
    t_in_seg = np.minimum(grid - seg_starts[seg_idx], seg_durations[seg_idx])
    integral = cum[seg_idx] + integrand[seg_idx] * np.maximum(t_in_seg, 0.0)
    tail = grid > seg_starts[-1] + seg_durations[-1]
    if np.any(tail):
        total = cum[-1]
        integral[tail] = total + integrand[-1] * (
            grid[tail] - (seg_starts[-1] + seg_durations[-1])
        )
    return observable[seg_idx] - observable[0] - integral


def _drift_vec(p: ModelParams, zeta: np.ndarray) -> np.ndarray:
    """(birth - death)/n at each density, vectorized."""
    n = p.n
    noise = n * n * p.alpha * zeta**p.ell
    react = n * p.beta * zeta**p.k
    return (np.maximum(noise - react, 0.0) - noise) / n


def _coeffs_along(
    p: ModelParams, kernel: SiteKernel, zeta_seg: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """b and diagonal a along a (J, V) density path, vectorized over J."""
    lap = zeta_seg @ kernel.rates - zeta_seg * kernel.row_sums[None, :]
    b = lap + _drift_vec(p, zeta_seg)
    flux = zeta_seg @ kernel.rates + zeta_seg * kernel.row_sums[None, :]
    a_diag = flux / p.n + p.alpha * zeta_seg**p.ell
    return b, a_diag


def dynkin_residual(
    traj: Trajectory, p: ModelParams, kernel: SiteKernel, site: int
) -> MartingaleSeries:
    """Compensated coordinate observable at ``site`` on the sampling grid.

    Requires the event log; the compensator is accumulated exactly between
    events, where the path is constant.
    """
    zeta_seg, starts, durations = _states_and_segments(traj)
    b, _ = _coeffs_along(p, kernel, zeta_seg)
    values = _series_on_grid(
        traj.sample_times, starts, durations, zeta_seg[:, site], b[:, site]
    )
    return MartingaleSeries(times=traj.sample_times, values=values, site=site)


def pair_residual(
    traj: Trajectory, p: ModelParams, kernel: SiteKernel, x: int, y: int
) -> MartingaleSeries:
    """Compensated product observable z(x) z(y); for x == y the compensator
    integrand reduces to 2 z(x) b_x + a_xx."""
    zeta_seg, starts, durations = _states_and_segments(traj)
    b, a_diag = _coeffs_along(p, kernel, zeta_seg)
    zx = zeta_seg[:, x]
    zy = zeta_seg[:, y]
    if x == y:
        integrand = 2.0 * zx * b[:, x] + a_diag[:, x]
    else:
        a_xy = -(
            kernel.rates[x, y] * zx + kernel.rates[y, x] * zy
        ) / p.n
        integrand = b[:, x] * zy + b[:, y] * zx + a_xy
    values = _series_on_grid(traj.sample_times, starts, durations, zx * zy, integrand)
    return MartingaleSeries(times=traj.sample_times, values=values, site=x, pair_site=y)


# ---------------------------------------------------------------------------
# ensemble-level tests
# ---------------------------------------------------------------------------


def martingale_mean_test(
    ens: EnsembleStats, site: int, threshold: float = DEFAULT_Z_THRESHOLD
) -> TestReport:
    """|mean M_T| <= threshold * SE for the coordinate martingale."""
    return _z_report(
        f"dynkin_mean_site{site}", ens.martingale_terminal(site), threshold,
        site=site, guard_terminations=ens.guard_count(),
    )


def pair_mean_test(
    ens: EnsembleStats, x: int, y: int, threshold: float = DEFAULT_Z_THRESHOLD
) -> TestReport:
    """|mean M_T| <= threshold * SE for the product-coordinate martingale."""
    return _z_report(
        f"pair_mean_site{x}_{y}", ens.pair_martingale_terminal(x, y), threshold,
        site=x, pair_site=y,
    )


def qv_test(
    ens: EnsembleStats, site: int, threshold: float = DEFAULT_Z_THRESHOLD
) -> TestReport:
    """Paired z-test: sum of squared M-jumps vs the integrated a_xx.

    Both per-replica quantities estimate the martingale's variance budget;
    their difference has mean zero under the model.
    """
    diffs = ens.qv[:, site] - ens.int_a[:, site]
    return _z_report(
        f"qv_site{site}", diffs, threshold,
        site=site,
        mean_bracket=float(np.mean(ens.qv[:, site])),
        mean_compensator=float(np.mean(ens.int_a[:, site])),
    )


def moment_compare(
    samples: np.ndarray,
    oracle_mean: float,
    oracle_second_moment: float | None = None,
    threshold: float = DEFAULT_Z_THRESHOLD,
    name: str = "moment",
) -> TestReport:
    """z-scores of the sample mean (and optionally second moment) against
    an oracle value.  Degenerate zero-variance samples compare exactly."""
    samples = np.asarray(samples, dtype=np.float64)
    if len(samples) < 100:
        raise ValueError("need at least 100 samples for a meaningful z-test")
    reps = len(samples)
    mean = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / np.sqrt(reps))
    if se == 0.0:
        z = 0.0 if mean == oracle_mean else np.inf
    else:
        z = (mean - oracle_mean) / se
    extras: dict = {"oracle_mean": oracle_mean, "sample_mean": mean}
    passed = abs(z) <= threshold
    if oracle_second_moment is not None:
        sq = samples**2
        m2 = float(np.mean(sq))
        se2 = float(np.std(sq, ddof=1) / np.sqrt(reps))
        z2 = 0.0 if se2 == 0.0 and m2 == oracle_second_moment else (
            np.inf if se2 == 0.0 else (m2 - oracle_second_moment) / se2
        )
        extras.update(
            {"oracle_second_moment": oracle_second_moment, "sample_second_moment": m2,
             "z_second_moment": float(z2)}
        )
        passed = passed and abs(z2) <= threshold
    return TestReport(
        name=name, statistic=mean - oracle_mean, std_err=se, z_score=float(z),
        passed=passed, replicas=reps, threshold=threshold, extras=extras,
    )


def ks_distance(samples_a, samples_b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic (no p-value attached)."""
    a = np.sort(np.asarray(samples_a, dtype=np.float64))
    b = np.sort(np.asarray(samples_b, dtype=np.float64))
    if len(a) == 0 or len(b) == 0:
        raise ValueError("samples must be nonempty")
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / len(a)
    cdf_b = np.searchsorted(b, pooled, side="right") / len(b)
    return float(np.max(np.abs(cdf_a - cdf_b)))


# ---------------------------------------------------------------------------
# convergence sweep
# ---------------------------------------------------------------------------


@dataclass
class SweepRow:
    n: int
    ks: float
    moment_z: float
    max_error_term: float
    max_density_visited: float
    guard_terminations: int
    runtime: float

    def to_dict(self, include_runtime: bool = True) -> dict:
        out = {
            "n": self.n,
            "ks": self.ks,
            "moment_z": self.moment_z,
            "max_error_term": self.max_error_term,
            "max_density_visited": self.max_density_visited,
            "guard_terminations": self.guard_terminations,
        }
        if include_runtime:
            out["runtime_seconds"] = self.runtime
        return out


@dataclass
class SweepResult:
    rows: list[SweepRow]
    sde_replicas: int
    replicas: int
    horizon: float
    site: int

    def ks_values(self) -> list[float]:
        return [r.ks for r in self.rows]

    def to_dict(self, include_runtime: bool = True) -> dict:
        return {
            "rows": [r.to_dict(include_runtime) for r in self.rows],
            "sde_replicas": self.sde_replicas,
            "replicas": self.replicas,
            "horizon": self.horizon,
            "site": self.site,
        }


def _max_error_on_range(
    alpha: float, beta: float, k: int, ell: int, n: int, z_max: float
) -> float:
    """max truncation error of the drift over densities [0, z_max]."""
    z = np.linspace(0.0, max(z_max, 1e-12), 1025)
    noise = float(n) ** 2 * alpha * z**ell
    react = float(n) * beta * z**k
    return float(np.max(np.maximum(react - noise, 0.0))) / n


def convergence_sweep(
    alpha: float,
    beta: float,
    k: int,
    ell: int,
    kernel: SiteKernel,
    rho0,
    n_list,
    *,
    horizon: float,
    replicas: int,
    seed: int,
    sde_dt: float,
    sde_replicas: int | None = None,
    site: int = 0,
    max_events: int = 10**8,
) -> SweepResult:
    """Compare the particle system against the diffusion across scales.

    For each n: simulate ``replicas`` exact trajectories to the horizon,
    then report the KS distance between terminal coordinate samples and the
    diffusion's, the moment z-score (exact linear oracle when k = ell = 1,
    otherwise two-sample vs the diffusion ensemble), and the largest drift
    truncation error on the visited density range.
    """
    rho = as_density(rho0, kernel.site_count)
    sde_replicas = sde_replicas if sde_replicas is not None else replicas
    spec = SDESpec(
        alpha=alpha, beta=beta, k=k, ell=ell, kernel=kernel, rho0=rho,
        dt=sde_dt, horizon=horizon,
    )
    sde_ens = simulate_paths(spec, sde_replicas, seed)
    sde_samples = sde_ens.terminal[:, site]

    oracle_mean = None
    if k == 1 and ell == 1:
        oracle_mean = float(moment_oracle_linear(spec, horizon)[0][site])

    rows: list[SweepRow] = []
    for n in n_list:
        t0 = time.perf_counter()
        p = ModelParams(alpha=alpha, beta=beta, k=k, ell=ell, n=int(n))
        eta0 = initial_configuration(rho, p.n)
        if kernel.site_count == 1:
            c0 = int(eta0[0])
            counts, _ev, terms, _t, _tau0, _tauK, cmax = _k.bd_terminal_batch(
                replicas, seed, c0, float(horizon), -1, int(max_events),
                _k.RATES_POWER, alpha, beta, k, ell, float(p.n),
                _k.EMPTY_COEFFS, _k.EMPTY_COEFFS, max(2 * (c0 + 1), 256),
            )
            samples = counts / p.n
            z_max = float(cmax.max()) / p.n
        else:
            out = _k.ctmc_batch(
                replicas, seed, eta0, kernel.rates, kernel.row_sums,
                float(horizon), -1, int(max_events),
                _k.RATES_POWER, alpha, beta, k, ell, float(p.n),
                _k.EMPTY_COEFFS, _k.EMPTY_COEFFS, False,
            )
            terms = out[2]
            samples = out[0][:, site] / p.n
            z_max = float(out[5].max()) / p.n
        guard = int(np.sum(terms == _k.TERM_EVENT_GUARD))

        if oracle_mean is not None:
            rep = moment_compare(samples, oracle_mean, name=f"moment_n{n}")
            moment_z = rep.z_score
        else:
            diff = float(np.mean(samples) - np.mean(sde_samples))
            se = float(
                np.sqrt(
                    np.var(samples, ddof=1) / len(samples)
                    + np.var(sde_samples, ddof=1) / len(sde_samples)
                )
            )
            moment_z = diff / se if se > 0 else 0.0
        rows.append(
            SweepRow(
                n=int(n),
                ks=ks_distance(samples, sde_samples),
                moment_z=float(moment_z),
                max_error_term=_max_error_on_range(alpha, beta, k, ell, p.n, z_max),
                max_density_visited=z_max,
                guard_terminations=guard,
                runtime=time.perf_counter() - t0,
            )
        )
    return SweepResult(
        rows=rows, sde_replicas=sde_replicas, replicas=replicas,
        horizon=horizon, site=site,
    )
