"""Compiled event loops for the particle-system and SDE simulators.

Everything here is numba-jitted and shared by the single-event API and the
fused trajectory/ensemble drivers, so stepping a chain one event at a time
consumes the random stream exactly like the batch loops do.

Conventions fixed across all loops:
  * per event, draw order is (waiting-time uniform, selection uniform);
  * waiting time dt = -log(1 - u) / total_rate (inverse CDF, u in (0,1));
  * selection walks sites in index order, within a site: birth, death,
    then jumps to destinations in index order;
  * reaction-rate tables are memoized per particle count in per-replica
    growable arrays.

For a single site the cumulative walk degenerates to "birth iff
u * total < birth_rate", so the minimal single-site loop reproduces the
general loop's event sequence bit for bit on the same stream.

Termination codes: 0 horizon, 1 absorbed at zero mass, 2 mass cap,
3 event guard.  RNG substreams: 0 main event stream, 1 coupling's shared
uniforms, 16+x the SDE noise stream of site x.
"""

from __future__ import annotations

import numba
import numpy as np
from numba import njit, prange

from ._rng import next_double, next_gaussian_pair, next_positive_double, seed_state

numba.config.THREADING_LAYER = "workqueue"

TERM_HORIZON = 0
TERM_ABSORBED = 1
TERM_MASS_CAP = 2
TERM_EVENT_GUARD = 3

EV_BIRTH = 0
EV_DEATH = 1
EV_JUMP = 2

RATES_POWER = 0
RATES_POLY = 1

SDE_SUBSTREAM_BASE = 16

EMPTY_COEFFS = np.zeros(0, dtype=np.float64)


@njit(cache=True, inline="always")
def _ipow(x, e):
    r = 1.0
    for _ in range(e):
        r *= x
    return r


@njit(cache=True, inline="always")
def _horner(coeffs, x):
    r = 0.0
    for i in range(len(coeffs) - 1, -1, -1):
        r = r * x + coeffs[i]
    return r


@njit(cache=True)
def fill_rate_tables(tb, td, start, mode, alpha, beta, k, ell, scale, cp, cm):
    """Memoize birth/death rates for counts start..len-1.

    mode 0: birth = max(n^2 a z^l - n b z^k, 0)/2, death = n^2 a z^l - birth
            with z = count/n, n = scale.
    mode 1: birth = m*Fplus(count/m), death = m*Fminus(count/m), m = scale.
    """
    for c in range(start, tb.shape[0]):
        z = c / scale
        if mode == RATES_POWER:
            noise = scale * scale * alpha * _ipow(z, ell)
            react = scale * beta * _ipow(z, k)
            birth = max(noise - react, 0.0) / 2.0
            death = noise - birth
        else:
            birth = scale * _horner(cp, z)
            death = scale * _horner(cm, z)
        if not (np.isfinite(birth) and np.isfinite(death)):
            raise OverflowError("reaction rate overflowed double precision")
        if birth < 0.0 or death < 0.0:
            raise ValueError("reaction rates must be nonnegative on visited counts")
        tb[c] = birth
        td[c] = death


@njit(cache=True)
def make_tables(mode, alpha, beta, k, ell, scale, cp, cm, cap):
    tb = np.empty(cap, dtype=np.float64)
    td = np.empty(cap, dtype=np.float64)
    fill_rate_tables(tb, td, 0, mode, alpha, beta, k, ell, scale, cp, cm)
    return tb, td


@njit(cache=True)
def _grow_tables(tb, td, needed, mode, alpha, beta, k, ell, scale, cp, cm):
    cap = tb.shape[0]
    new_cap = cap
    while new_cap <= needed:
        new_cap *= 2
    nb = np.empty(new_cap, dtype=np.float64)
    nd = np.empty(new_cap, dtype=np.float64)
    nb[:cap] = tb
    nd[:cap] = td
    fill_rate_tables(nb, nd, cap, mode, alpha, beta, k, ell, scale, cp, cm)
    return nb, nd


# ---------------------------------------------------------------------------
# minimal single-site loop (the large-n workhorse)
# ---------------------------------------------------------------------------


@njit(cache=True)
def bd_terminal(
    c0, horizon, cap_count, max_events,
    mode, alpha, beta, k, ell, scale, cp, cm, cap0, state,
):
    """Single-site run without grid or bookkeeping.

    Returns (count, events, termination, t_stop, tau_zero, tau_cap,
    count_max); stopping-time slots hold NaN when the passage never fired.

    The rate tables are loop-invariant inside the inner loop (growth exits
    to the outer loop first) so the compiler keeps their pointers hoisted;
    this kernel runs tens of billions of events in the scaling sweeps.
    """
    tb, td = make_tables(mode, alpha, beta, k, ell, scale, cp, cm, max(cap0, c0 + 2))
    c = c0
    cmax = c0
    t = 0.0
    ev = 0
    tau0 = np.nan
    tauK = np.nan
    term = TERM_HORIZON
    if c == 0:
        return c, ev, TERM_ABSORBED, 0.0, 0.0, tauK, cmax
    done = False
    while not done:
        limit = tb.shape[0] - 2
        grow = False
        while True:
            tbc = tb[c]
            total = tbc + td[c]
            if total <= 0.0:
                term = TERM_ABSORBED
                if c == 0:
                    tau0 = t
                done = True
                break
            u1 = next_positive_double(state)
            dt = -np.log(1.0 - u1) / total
            if t + dt > horizon:
                t = horizon
                term = TERM_HORIZON
                done = True
                break
            t += dt
            ev += 1
            u2 = next_double(state)
            if u2 * total < tbc:
                c += 1
                if c > cmax:
                    cmax = c
                    # a first crossing of the cap is always a fresh maximum
                    if cap_count >= 0 and c > cap_count:
                        tauK = t
                        term = TERM_MASS_CAP
                        done = True
                        break
                    if c > limit:
                        grow = True
                        break
            else:
                c -= 1
                if c == 0:
                    tau0 = t
                    term = TERM_ABSORBED
                    done = True
                    break
            if ev >= max_events:
                term = TERM_EVENT_GUARD
                done = True
                break
        if grow:
            tb, td = _grow_tables(tb, td, c + 1, mode, alpha, beta, k, ell, scale, cp, cm)
            if ev >= max_events:
                term = TERM_EVENT_GUARD
                done = True
    return c, ev, term, t, tau0, tauK, cmax


@njit(cache=True, parallel=True)
def bd_terminal_batch(
    reps, seed, c0, horizon, cap_count, max_events,
    mode, alpha, beta, k, ell, scale, cp, cm, cap0,
):
    counts = np.empty(reps, dtype=np.int64)
    events = np.empty(reps, dtype=np.int64)
    terms = np.empty(reps, dtype=np.int8)
    t_stop = np.empty(reps, dtype=np.float64)
    tau0 = np.empty(reps, dtype=np.float64)
    tauK = np.empty(reps, dtype=np.float64)
    cmax = np.empty(reps, dtype=np.int64)
    for r in prange(reps):
        st = np.empty(4, dtype=np.uint64)
        seed_state(seed, r, 0, st)
        c, ev, term, t, t0, tK, cm_ = bd_terminal(
            c0, horizon, cap_count, max_events,
            mode, alpha, beta, k, ell, scale, cp, cm, cap0, st,
        )
        counts[r] = c
        events[r] = ev
        terms[r] = term
        t_stop[r] = t
        tau0[r] = t0
        tauK[r] = tK
        cmax[r] = cm_
    return counts, events, terms, t_stop, tau0, tauK, cmax


# ---------------------------------------------------------------------------
# general multi-site loop
# ---------------------------------------------------------------------------


@njit(cache=True)
def ctmc_draw(counts, rates, rowsum, tb, td, total, state, out_xy):
    """One event for the general model: returns (dt, kind)."""
    nsites = counts.shape[0]
    u1 = next_positive_double(state)
    dt = -np.log(1.0 - u1) / total
    u2 = next_double(state)
    target = u2 * total
    for x in range(nsites):
        cx = counts[x]
        rb = tb[cx]
        if target < rb:
            out_xy[0] = x
            out_xy[1] = -1
            return dt, EV_BIRTH
        target -= rb
        rd = td[cx]
        if target < rd:
            out_xy[0] = x
            out_xy[1] = -1
            return dt, EV_DEATH
        target -= rd
        if cx > 0 and rowsum[x] > 0.0:
            for y in range(nsites):
                if y == x:
                    continue
                rj = cx * rates[x, y]
                if target < rj:
                    out_xy[0] = x
                    out_xy[1] = y
                    return dt, EV_JUMP
                target -= rj
    # float roundoff pushed the target past the last block: take the last
    # positive-rate event, scanning in reverse canonical order
    for x in range(nsites - 1, -1, -1):
        cx = counts[x]
        if cx > 0 and rowsum[x] > 0.0:
            for y in range(nsites - 1, -1, -1):
                if y != x and rates[x, y] > 0.0:
                    out_xy[0] = x
                    out_xy[1] = y
                    return dt, EV_JUMP
        if td[cx] > 0.0:
            out_xy[0] = x
            out_xy[1] = -1
            return dt, EV_DEATH
        if tb[cx] > 0.0:
            out_xy[0] = x
            out_xy[1] = -1
            return dt, EV_BIRTH
    out_xy[0] = -1
    out_xy[1] = -1
    return dt, -1  # unreachable when total > 0


@njit(cache=True)
def ctmc_run(
    counts, rates, rowsum, horizon, grid, cap_count, max_events,
    mode, alpha, beta, k, ell, scale, cp, cm,
    do_stats, do_log, state,
    grid_counts, int_b, int_a, qv, int_pair,
):
    """General trajectory loop; mutates ``counts`` in place.

    grid_counts must be (len(grid), V); the stats arrays must be
    zero-filled with shapes (V,), (V,), (V,), (V, V).  Stats accumulate the
    drift/covariation compensators of the scaled coordinate observables
    exactly over holding intervals (power mode only).  Returns (events,
    termination, t_stop, tau_zero, tau_cap, mass_max, log_times, log_kinds,
    log_src, log_dst); log arrays are trimmed to the event count and empty
    unless do_log.
    """
    nsites = counts.shape[0]
    cap0 = max(2 * (int(np.max(counts)) + 1), 256)
    if cap_count >= 0:
        cap0 = max(cap0, cap_count + 3)
    tb, td = make_tables(mode, alpha, beta, k, ell, scale, cp, cm, cap0)

    contrib = np.empty(nsites, dtype=np.float64)
    for x in range(nsites):
        cx = counts[x]
        contrib[x] = cx * rowsum[x] + tb[cx] + td[cx]
    zeta = np.empty(nsites, dtype=np.float64)
    bvec = np.empty(nsites, dtype=np.float64)
    avec = np.empty(nsites, dtype=np.float64)
    out_xy = np.empty(2, dtype=np.int64)

    log_cap = 1024 if do_log else 0
    log_t = np.empty(log_cap, dtype=np.float64)
    log_kind = np.empty(log_cap, dtype=np.int8)
    log_src = np.empty(log_cap, dtype=np.int32)
    log_dst = np.empty(log_cap, dtype=np.int32)

    mass = 0
    for x in range(nsites):
        mass += counts[x]
    mass_max = mass
    inv_n = 1.0 / scale
    inv_n2 = inv_n * inv_n

    t = 0.0
    ev = 0
    g = 0
    ngrid = grid.shape[0]
    tau0 = np.nan
    tauK = np.nan
    term = TERM_HORIZON
    running = True
    if mass == 0:
        tau0 = 0.0
        term = TERM_ABSORBED
        running = False

    while running:
        total = 0.0
        for x in range(nsites):
            total += contrib[x]
        if total <= 0.0:
            term = TERM_ABSORBED
            if mass == 0 and np.isnan(tau0):
                tau0 = t
            break
        dt, kind = ctmc_draw(counts, rates, rowsum, tb, td, total, state, out_xy)
        t_next = t + dt
        hit_horizon = t_next > horizon
        seg = (horizon - t) if hit_horizon else dt

        if do_stats:
            for x in range(nsites):
                zeta[x] = counts[x] * inv_n
            for x in range(nsites):
                cx = counts[x]
                lap = -zeta[x] * rowsum[x]
                flux = 0.0
                for y in range(nsites):
                    lap += rates[y, x] * zeta[y]
                    flux += rates[x, y] * zeta[x] + rates[y, x] * zeta[y]
                bx = lap + (tb[cx] - td[cx]) * inv_n
                ax = flux * inv_n + (tb[cx] + td[cx]) * inv_n2
                bvec[x] = bx
                avec[x] = ax
                int_b[x] += bx * seg
                int_a[x] += ax * seg
            for x in range(nsites):
                for y in range(nsites):
                    if x == y:
                        int_pair[x, x] += (2.0 * zeta[x] * bvec[x] + avec[x]) * seg
                    else:
                        axy = -(rates[x, y] * zeta[x] + rates[y, x] * zeta[y]) * inv_n
                        int_pair[x, y] += (
                            bvec[x] * zeta[y] + bvec[y] * zeta[x] + axy
                        ) * seg

        if hit_horizon:
            t = horizon
            break

        while g < ngrid and grid[g] < t_next:
            for x in range(nsites):
                grid_counts[g, x] = counts[x]
            g += 1

        t = t_next
        ev += 1
        x = out_xy[0]
        y = out_xy[1]
        if do_log:
            if ev > log_cap:
                new_cap = log_cap * 2
                nt = np.empty(new_cap, dtype=np.float64)
                nk = np.empty(new_cap, dtype=np.int8)
                ns = np.empty(new_cap, dtype=np.int32)
                nd_ = np.empty(new_cap, dtype=np.int32)
                nt[:log_cap] = log_t
                nk[:log_cap] = log_kind
                ns[:log_cap] = log_src
                nd_[:log_cap] = log_dst
                log_t, log_kind, log_src, log_dst = nt, nk, ns, nd_
                log_cap = new_cap
            log_t[ev - 1] = t
            log_kind[ev - 1] = kind
            log_src[ev - 1] = x
            log_dst[ev - 1] = y

        if kind == EV_BIRTH:
            counts[x] += 1
            mass += 1
            qv[x] += inv_n2
        elif kind == EV_DEATH:
            counts[x] -= 1
            mass -= 1
            qv[x] += inv_n2
        else:
            counts[x] -= 1
            counts[y] += 1
            qv[x] += inv_n2
            qv[y] += inv_n2
            cy = counts[y]
            if cy + 1 >= tb.shape[0]:
                tb, td = _grow_tables(tb, td, cy + 1, mode, alpha, beta, k, ell, scale, cp, cm)
            contrib[y] = cy * rowsum[y] + tb[cy] + td[cy]
        cx = counts[x]
        if cx + 1 >= tb.shape[0]:
            tb, td = _grow_tables(tb, td, cx + 1, mode, alpha, beta, k, ell, scale, cp, cm)
        contrib[x] = cx * rowsum[x] + tb[cx] + td[cx]

        if mass > mass_max:
            mass_max = mass
        if mass == 0:
            tau0 = t
            term = TERM_ABSORBED
            break
        if cap_count >= 0 and mass > cap_count:
            tauK = t
            term = TERM_MASS_CAP
            break
        if ev >= max_events:
            term = TERM_EVENT_GUARD
            break

    while g < ngrid:
        for x in range(nsites):
            grid_counts[g, x] = counts[x]
        g += 1
    return (
        ev, term, t, tau0, tauK, mass_max,
        log_t[:ev] if do_log else log_t[:0],
        log_kind[:ev] if do_log else log_kind[:0],
        log_src[:ev] if do_log else log_src[:0],
        log_dst[:ev] if do_log else log_dst[:0],
    )


@njit(cache=True, parallel=True)
def ctmc_batch(
    reps, seed, counts0, rates, rowsum, horizon, cap_count, max_events,
    mode, alpha, beta, k, ell, scale, cp, cm, do_stats,
):
    """Replica ensemble: terminal states plus per-replica compensator
    integrals (when do_stats)."""
    nsites = counts0.shape[0]
    empty_grid = np.empty(0, dtype=np.float64)
    terminal = np.empty((reps, nsites), dtype=np.int64)
    events = np.empty(reps, dtype=np.int64)
    terms = np.empty(reps, dtype=np.int8)
    tau0 = np.empty(reps, dtype=np.float64)
    tauK = np.empty(reps, dtype=np.float64)
    mass_max = np.empty(reps, dtype=np.int64)
    int_b = np.zeros((reps, nsites), dtype=np.float64)
    int_a = np.zeros((reps, nsites), dtype=np.float64)
    qv = np.zeros((reps, nsites), dtype=np.float64)
    int_pair = np.zeros((reps, nsites, nsites), dtype=np.float64)
    for r in prange(reps):
        st = np.empty(4, dtype=np.uint64)
        seed_state(seed, r, 0, st)
        counts = counts0.copy()
        gc = np.empty((0, nsites), dtype=np.int64)
        ev, term, _t, t0, tK, mm, _lt, _lk, _ls, _ld = ctmc_run(
            counts, rates, rowsum, horizon, empty_grid, cap_count, max_events,
            mode, alpha, beta, k, ell, scale, cp, cm,
            do_stats, False, st,
            gc, int_b[r], int_a[r], qv[r], int_pair[r],
        )
        terminal[r] = counts
        events[r] = ev
        terms[r] = term
        tau0[r] = t0
        tauK[r] = tK
        mass_max[r] = mm
    return terminal, events, terms, tau0, tauK, mass_max, int_b, int_a, qv, int_pair


# ---------------------------------------------------------------------------
# domination coupling
# ---------------------------------------------------------------------------


@njit(cache=True)
def coupled_run(
    eta, xi, rates, rowsum, horizon, max_events,
    alpha, beta, k, ell, n, state, shared_state,
):
    """Run the (eta, xi) coupling to the horizon.

    eta evolves by its own law; every eta event is mirrored on xi: births
    and jumps are replicated, and on a death at site x one shared uniform U
    decides xi's move: annihilate at x when
    U > (death - birth) / (2 (death + birth)) at eta's pre-event count,
    otherwise create at x.  One shared uniform is consumed per eta event
    regardless of its kind, so the uniform index equals the transition
    counter.  xi never feeds back into eta's rates.

    Returns (events, termination, t_stop, violations, min_margin,
    diff_decreases, final_xi_mass, final_eta_mass): min_margin is the
    smallest xi-eta entry seen, diff_decreases counts events where the total
    slack sum(xi - eta) shrank; both certify pathwise domination when 0.
    """
    nsites = eta.shape[0]
    cap0 = max(2 * (int(np.max(xi)) + 1), 256)
    tb, td = make_tables(
        RATES_POWER, alpha, beta, k, ell, n, EMPTY_COEFFS, EMPTY_COEFFS, cap0
    )
    contrib = np.empty(nsites, dtype=np.float64)
    for x in range(nsites):
        cx = eta[x]
        contrib[x] = cx * rowsum[x] + tb[cx] + td[cx]
    out_xy = np.empty(2, dtype=np.int64)

    t = 0.0
    ev = 0
    term = TERM_HORIZON
    violations = 0
    min_margin = np.int64(2**62)
    diff_decreases = 0
    diff = 0
    mass = 0
    for x in range(nsites):
        diff += xi[x] - eta[x]
        mass += eta[x]
        if xi[x] - eta[x] < min_margin:
            min_margin = xi[x] - eta[x]
    if mass == 0:
        w0 = 0
        for x in range(nsites):
            w0 += xi[x]
        return 0, TERM_ABSORBED, 0.0, violations, min_margin, diff_decreases, w0, 0

    while True:
        total = 0.0
        for x in range(nsites):
            total += contrib[x]
        if total <= 0.0:
            term = TERM_ABSORBED
            break
        dt, kind = ctmc_draw(eta, rates, rowsum, tb, td, total, state, out_xy)
        if t + dt > horizon:
            t = horizon
            term = TERM_HORIZON
            break
        t += dt
        ev += 1
        x = out_xy[0]
        y = out_xy[1]
        u_shared = next_double(shared_state)
        old_diff = diff

        if kind == EV_BIRTH:
            eta[x] += 1
            xi[x] += 1
            mass += 1
        elif kind == EV_DEATH:
            cx = eta[x]  # pre-event count sets the threshold
            thr = (td[cx] - tb[cx]) / (2.0 * (td[cx] + tb[cx]))
            eta[x] -= 1
            mass -= 1
            if u_shared > thr:
                xi[x] -= 1
            else:
                xi[x] += 1
                diff += 2
        else:
            eta[x] -= 1
            eta[y] += 1
            xi[x] -= 1
            xi[y] += 1
            cy = eta[y]
            if cy + 1 >= tb.shape[0]:
                tb, td = _grow_tables(
                    tb, td, cy + 1, RATES_POWER, alpha, beta, k, ell, n,
                    EMPTY_COEFFS, EMPTY_COEFFS,
                )
            contrib[y] = cy * rowsum[y] + tb[cy] + td[cy]
            if xi[y] - eta[y] < min_margin:
                min_margin = xi[y] - eta[y]
            if xi[y] < eta[y]:
                violations += 1
        cx = eta[x]
        if cx + 1 >= tb.shape[0]:
            tb, td = _grow_tables(
                tb, td, cx + 1, RATES_POWER, alpha, beta, k, ell, n,
                EMPTY_COEFFS, EMPTY_COEFFS,
            )
        contrib[x] = cx * rowsum[x] + tb[cx] + td[cx]
        if xi[x] - eta[x] < min_margin:
            min_margin = xi[x] - eta[x]
        if xi[x] < eta[x]:
            violations += 1
        if diff < old_diff:
            diff_decreases += 1

        if mass == 0:
            term = TERM_ABSORBED
            break
        if ev >= max_events:
            term = TERM_EVENT_GUARD
            break
    w = 0
    for x in range(nsites):
        w += xi[x]
    return ev, term, t, violations, min_margin, diff_decreases, w, mass


@njit(cache=True, parallel=True)
def coupled_batch(
    reps, seed, counts0, rates, rowsum, horizon, max_events,
    alpha, beta, k, ell, n,
):
    events = np.empty(reps, dtype=np.int64)
    terms = np.empty(reps, dtype=np.int8)
    violations = np.empty(reps, dtype=np.int64)
    margins = np.empty(reps, dtype=np.int64)
    decreases = np.empty(reps, dtype=np.int64)
    w_final = np.empty(reps, dtype=np.int64)
    s_final = np.empty(reps, dtype=np.int64)
    for r in prange(reps):
        st = np.empty(4, dtype=np.uint64)
        seed_state(seed, r, 0, st)
        sh = np.empty(4, dtype=np.uint64)
        seed_state(seed, r, 1, sh)
        eta = counts0.copy()
        xi = counts0.copy()
        ev, term, _t, v, m, d, w, s = coupled_run(
            eta, xi, rates, rowsum, horizon, max_events,
            alpha, beta, k, ell, n, st, sh,
        )
        events[r] = ev
        terms[r] = term
        violations[r] = v
        margins[r] = m
        decreases[r] = d
        w_final[r] = w
        s_final[r] = s
    return events, terms, violations, margins, decreases, w_final, s_final


@njit(cache=True, parallel=True)
def symmetric_walk_batch(reps, seed, start, upper, max_steps):
    """Plain +-1 walk absorbed at 0 and upper: outcome 1 = hit upper first,
    0 = hit zero first, 2 = step guard."""
    outcomes = np.empty(reps, dtype=np.int8)
    for r in prange(reps):
        st = np.empty(4, dtype=np.uint64)
        seed_state(seed, r, 0, st)
        pos = start
        out = np.int8(2)
        for _ in range(max_steps):
            if next_double(st) < 0.5:
                pos += 1
            else:
                pos -= 1
            if pos == 0:
                out = np.int8(0)
                break
            if pos >= upper:
                out = np.int8(1)
                break
        outcomes[r] = out
    return outcomes


# ---------------------------------------------------------------------------
# Euler-Maruyama reference solver (full truncation)
# ---------------------------------------------------------------------------


@njit(cache=True)
def em_path(
    z, rates, rowsum, alpha, beta, k, ell, dt, nsteps,
    mass_guard, states, spare, have_spare, path_out, record_stride,
):
    """March one path in place; returns (ok, exceeded_guard).

    Coefficients are evaluated at the positive part of the state; the state
    itself is never clamped.  path_out rows receive the state every
    record_stride steps (the caller seeds row 0) when record_stride > 0.
    """
    nsites = z.shape[0]
    zp = np.empty(nsites, dtype=np.float64)
    sqdt = np.sqrt(dt)
    exceeded = False
    row = 1
    for step in range(nsteps):
        for x in range(nsites):
            zp[x] = z[x] if z[x] > 0.0 else 0.0
        for x in range(nsites):
            lap = -zp[x] * rowsum[x]
            for y in range(nsites):
                lap += rates[y, x] * zp[y]
            drift = lap - beta * _ipow(zp[x], k)
            if have_spare[x]:
                g = spare[x]
                have_spare[x] = False
            else:
                g, g2 = next_gaussian_pair(states[x])
                spare[x] = g2
                have_spare[x] = True
            z[x] = z[x] + drift * dt + np.sqrt(alpha * _ipow(zp[x], ell)) * sqdt * g
            if not np.isfinite(z[x]):
                return False, exceeded
            if z[x] > mass_guard:
                exceeded = True
        if record_stride > 0 and (step + 1) % record_stride == 0:
            for x in range(nsites):
                path_out[row, x] = z[x]
            row += 1
    return True, exceeded


@njit(cache=True, parallel=True)
def sde_terminal_batch(
    reps, seed, rho0, rates, rowsum, alpha, beta, k, ell, dt, nsteps, mass_guard,
):
    nsites = rho0.shape[0]
    terminal = np.empty((reps, nsites), dtype=np.float64)
    ok = np.empty(reps, dtype=np.bool_)
    exceeded = np.empty(reps, dtype=np.bool_)
    dummy = np.empty((1, nsites), dtype=np.float64)
    for r in prange(reps):
        states = np.empty((nsites, 4), dtype=np.uint64)
        for x in range(nsites):
            seed_state(seed, r, SDE_SUBSTREAM_BASE + x, states[x])
        spare = np.zeros(nsites, dtype=np.float64)
        have = np.zeros(nsites, dtype=np.bool_)
        z = rho0.copy()
        good, exc = em_path(
            z, rates, rowsum, alpha, beta, k, ell, dt, nsteps,
            mass_guard, states, spare, have, dummy, 0,
        )
        terminal[r] = z
        ok[r] = good
        exceeded[r] = exc
    return terminal, ok, exceeded


@njit(cache=True, parallel=True)
def sde_coupled_pair_batch(
    reps, seed, rho0, rates, rowsum, alpha, beta, k, ell, dt_fine, nsteps_fine, mass_guard,
):
    """Terminal values of coupled fine/coarse paths (coarse dt doubled).

    The coarse path consumes the same Brownian increments aggregated in
    pairs, giving strongly correlated bias estimates at the two step sizes.
    nsteps_fine must be even.
    """
    nsites = rho0.shape[0]
    fine = np.empty((reps, nsites), dtype=np.float64)
    coarse = np.empty((reps, nsites), dtype=np.float64)
    ok = np.empty(reps, dtype=np.bool_)
    sq_half = np.sqrt(0.5)
    for r in prange(reps):
        states = np.empty((nsites, 4), dtype=np.uint64)
        for x in range(nsites):
            seed_state(seed, r, SDE_SUBSTREAM_BASE + x, states[x])
        spare = np.zeros(nsites, dtype=np.float64)
        have = np.zeros(nsites, dtype=np.bool_)
        zf = rho0.copy()
        zc = rho0.copy()
        zp = np.empty(nsites, dtype=np.float64)
        gsum = np.zeros(nsites, dtype=np.float64)
        good = True
        dt_c = 2.0 * dt_fine
        sq_f = np.sqrt(dt_fine)
        sq_c = np.sqrt(dt_c)
        for step in range(nsteps_fine):
            for x in range(nsites):
                zp[x] = zf[x] if zf[x] > 0.0 else 0.0
            for x in range(nsites):
                lap = -zp[x] * rowsum[x]
                for y in range(nsites):
                    lap += rates[y, x] * zp[y]
                drift = lap - beta * _ipow(zp[x], k)
                if have[x]:
                    g = spare[x]
                    have[x] = False
                else:
                    g, g2 = next_gaussian_pair(states[x])
                    spare[x] = g2
                    have[x] = True
                gsum[x] += g
                zf[x] = zf[x] + drift * dt_fine + np.sqrt(alpha * _ipow(zp[x], ell)) * sq_f * g
                if not np.isfinite(zf[x]):
                    good = False
            if (step + 1) % 2 == 0:
                for x in range(nsites):
                    zp[x] = zc[x] if zc[x] > 0.0 else 0.0
                for x in range(nsites):
                    lap = -zp[x] * rowsum[x]
                    for y in range(nsites):
                        lap += rates[y, x] * zp[y]
                    drift = lap - beta * _ipow(zp[x], k)
                    g = gsum[x] * sq_half
                    zc[x] = zc[x] + drift * dt_c + np.sqrt(alpha * _ipow(zp[x], ell)) * sq_c * g
                    gsum[x] = 0.0
                    if not np.isfinite(zc[x]):
                        good = False
            if not good:
                break
        fine[r] = zf
        coarse[r] = zc
        ok[r] = good
    return fine, coarse, ok
