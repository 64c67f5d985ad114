"""Fluctuation scalings for one-dimensional birth-death chains.

A chain on the nonnegative integers with creation rate m*Fplus(i/m) and
annihilation rate m*Fminus(i/m) has net drift F = Fplus - Fminus and
activity G = Fplus + Fminus.  Near a stable zero of F at the origin, the
lowest nonvanishing orders k of F and ell of G determine the space/time
window a, b in which eta(t * m^b) / m^a has a nontrivial diffusive limit:

    b + 1 - a - k (1 - a) = 0
    b + 1 - 2a - ell (1 - a) = 0

solved exactly by a = (k - ell)/(1 + k - ell), b = (k - 1)/(1 + k - ell).
Reaction functions are polynomials here: derivative orders reduce to
coefficient inspection and the two residuals are exact rationals.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import _engine_kernels as _k
from ._rng import RngStream
from .ctmc_engine import TERMINATION_NAMES, sample_grid


class ZeroReactionError(ValueError):
    """F or G is identically zero; there is nothing to scale."""


class OrderViolationError(ValueError):
    """Orders inconsistent with nondecreasing reaction parts (k < ell), or
    the origin is not a fixed point (nonzero constant term)."""


class NonAttractingError(ValueError):
    """Leading drift coefficient has the wrong sign: 0 is not attracting."""


def poly_eval(coeffs, x: float) -> float:
    """Horner evaluation; coeffs[i] multiplies x**i."""
    r = 0.0
    for c in reversed(coeffs):
        r = r * x + c
    return r


def _poly_degree(coeffs) -> int:
    deg = -1
    for i, c in enumerate(coeffs):
        if c != 0.0:
            deg = i
    return deg


@dataclass(frozen=True)
class ReactionPair:
    """Polynomial creation/annihilation rate densities Fplus, Fminus.

    Both must be nondecreasing on [0, inf); nonnegative coefficients are
    accepted outright, anything else is screened on a derivative grid.
    The linear-growth flag on Fplus gates simulation (no explosion), not
    the pure analysis calls.
    """

    f_plus: tuple[float, ...]
    f_minus: tuple[float, ...]

    def __init__(self, f_plus, f_minus):
        object.__setattr__(self, "f_plus", tuple(float(c) for c in f_plus))
        object.__setattr__(self, "f_minus", tuple(float(c) for c in f_minus))
        for name, coeffs in (("f_plus", self.f_plus), ("f_minus", self.f_minus)):
            if not all(math.isfinite(c) for c in coeffs):
                raise ValueError(f"{name} coefficients must be finite")
            if not coeffs:
                raise ValueError(f"{name} needs at least one coefficient")
            if any(c < 0.0 for c in coeffs) and not _nondecreasing_on_grid(coeffs):
                raise ValueError(f"{name} must be nondecreasing on [0, inf)")

    @property
    def growth_bounded(self) -> bool:
        """True when Fplus grows at most linearly (degree <= 1)."""
        return _poly_degree(self.f_plus) <= 1

    def drift_coeffs(self) -> tuple[float, ...]:
        """Coefficients of F = Fplus - Fminus."""
        size = max(len(self.f_plus), len(self.f_minus))
        return tuple(
            (self.f_plus[i] if i < len(self.f_plus) else 0.0)
            - (self.f_minus[i] if i < len(self.f_minus) else 0.0)
            for i in range(size)
        )

    def activity_coeffs(self) -> tuple[float, ...]:
        """Coefficients of G = Fplus + Fminus."""
        size = max(len(self.f_plus), len(self.f_minus))
        return tuple(
            (self.f_plus[i] if i < len(self.f_plus) else 0.0)
            + (self.f_minus[i] if i < len(self.f_minus) else 0.0)
            for i in range(size)
        )


def _nondecreasing_on_grid(coeffs, upper: float = 10.0, points: int = 2001) -> bool:
    deriv = [i * c for i, c in enumerate(coeffs)][1:]
    if not deriv:
        return True
    grid = np.linspace(0.0, upper, points)
    return all(poly_eval(deriv, float(x)) >= -1e-12 for x in grid)


@dataclass(frozen=True)
class ScalingExponents:
    """Space exponent a in [0,1), time exponent b >= 0, both exact."""

    a: Fraction
    b: Fraction
    k: int
    ell: int
    beta: float | None = None
    alpha: float | None = None

    def __post_init__(self):
        if not (0 <= self.a < 1):
            raise ValueError(f"a must lie in [0, 1), got {self.a}")
        if self.b < 0:
            raise ValueError(f"b must be nonnegative, got {self.b}")

    def residuals(self) -> tuple[Fraction, Fraction]:
        """Exact residuals of the two defining linear equations."""
        one = Fraction(1)
        r1 = self.b + one - self.a - self.k * (one - self.a)
        r2 = self.b + one - 2 * self.a - self.ell * (one - self.a)
        return r1, r2


def detect_orders(r: ReactionPair) -> tuple[int, float, int, float]:
    """Lowest nonvanishing orders and constants: (k, beta, ell, alpha) with
    F(z) ~ -beta z^k and G(z) ~ alpha z^ell near 0."""
    fc = r.drift_coeffs()
    gc = r.activity_coeffs()
    if all(c == 0.0 for c in fc):
        raise ZeroReactionError("Fplus - Fminus is identically zero")
    if all(c == 0.0 for c in gc):
        raise ZeroReactionError("Fplus + Fminus is identically zero")
    if fc[0] != 0.0 or gc[0] != 0.0:
        raise OrderViolationError(
            "nonzero constant term: the origin is not a fixed point"
        )
    k = next(i for i, c in enumerate(fc) if c != 0.0)
    ell = next(i for i, c in enumerate(gc) if c != 0.0)
    beta = -fc[k]
    alpha = gc[ell]
    if beta <= 0.0:
        raise NonAttractingError(
            f"leading drift coefficient {fc[k]} > 0: the origin repels"
        )
    if alpha <= 0.0:
        raise OrderViolationError(f"leading activity coefficient {alpha} <= 0")
    if k < ell:
        raise OrderViolationError(
            f"k={k} < ell={ell} contradicts nondecreasing reaction parts"
        )
    return k, beta, ell, alpha


def solve_exponents(k: int, ell: int) -> ScalingExponents:
    """Solve the two scaling equations exactly in rational arithmetic."""
    if not (1 <= ell <= k):
        raise OrderViolationError(f"need k >= ell >= 1, got k={k}, ell={ell}")
    a = Fraction(k - ell, 1 + k - ell)
    b = Fraction(k - 1, 1 + k - ell)
    exps = ScalingExponents(a=a, b=b, k=int(k), ell=int(ell))
    assert exps.residuals() == (Fraction(0), Fraction(0))
    return exps


def analyze(r: ReactionPair) -> ScalingExponents:
    """detect_orders + solve_exponents, carrying the constants along."""
    k, beta, ell, alpha = detect_orders(r)
    base = solve_exponents(k, ell)
    return ScalingExponents(a=base.a, b=base.b, k=k, ell=ell, beta=beta, alpha=alpha)


def rescaled_operators(r: ReactionPair, m: float, zeta: float) -> tuple[float, float]:
    """Generator drift and activity of the rescaled observable at zeta:

        L_m = m^(b+1-a) F(m^(a-1) zeta),   Q_m = m^(b+1-2a) G(m^(a-1) zeta)

    converging to (-beta zeta^k, alpha zeta^ell) on bounded density grids.
    """
    exps = analyze(r)
    a = float(exps.a)
    b = float(exps.b)
    arg = m ** (a - 1.0) * zeta
    lm = m ** (b + 1.0 - a) * poly_eval(r.drift_coeffs(), arg)
    qm = m ** (b + 1.0 - 2.0 * a) * poly_eval(r.activity_coeffs(), arg)
    if not (math.isfinite(lm) and math.isfinite(qm)):
        raise OverflowError("rescaled operator overflowed double precision")
    return lm, qm


@dataclass
class RescaledTrajectory:
    """One-dimensional path observed in the rescaled window."""

    reaction: ReactionPair
    exponents: ScalingExponents
    m: int
    sample_times: np.ndarray   # rescaled time grid
    values: np.ndarray         # eta(t m^b) / m^a on the grid
    event_count: int
    termination: str


def simulate_rescaled(
    r: ReactionPair,
    m: int,
    zeta0: float,
    horizon: float,
    sample_dt: float,
    *,
    seed: int = 0,
    stream_id: int = 0,
    max_events: int = 10**8,
    allow_unbounded_growth: bool = False,
) -> RescaledTrajectory:
    """Exact simulation of the chain, observed as eta(t m^b) / m^a.

    Requires Fminus(0) = 0 (annihilation must vanish on the empty state) and
    at-most-linear Fplus unless explicitly overridden.
    """
    if r.f_minus[0] != 0.0:
        raise ValueError("Fminus(0) must be 0 to simulate on the integers")
    if not r.growth_bounded:
        if not allow_unbounded_growth:
            raise ValueError(
                "Fplus grows faster than linearly; explosion is possible "
                "(pass allow_unbounded_growth=True to override)"
            )
        warnings.warn("simulating with super-linear creation rate", stacklevel=2)
    exps = analyze(r)
    a = float(exps.a)
    b = float(exps.b)
    time_factor = float(m) ** b
    space_factor = float(m) ** a
    grid = sample_grid(horizon, sample_dt)
    physical_grid = grid * time_factor
    c0 = int(math.floor(space_factor * zeta0))

    cp = np.asarray(r.f_plus, dtype=np.float64)
    cm = np.asarray(r.f_minus, dtype=np.float64)
    counts = np.array([c0], dtype=np.int64)
    rates = np.zeros((1, 1))
    rowsum = np.zeros(1)
    grid_counts = np.empty((len(grid), 1), dtype=np.int64)
    zero = np.zeros(1)
    zero_pair = np.zeros((1, 1))
    state = RngStream(seed, stream_id).state()
    ev, term, _t, _tau0, _tauK, _mm, _lt, _lk, _ls, _ld = _k.ctmc_run(
        counts, rates, rowsum, float(horizon) * time_factor, physical_grid,
        -1, int(max_events),
        _k.RATES_POLY, 0.0, 0.0, 1, 1, float(m), cp, cm,
        False, False, state,
        grid_counts, zero, zero, zero, zero_pair,
    )
    return RescaledTrajectory(
        reaction=r,
        exponents=exps,
        m=int(m),
        sample_times=grid,
        values=grid_counts[:, 0] / space_factor,
        event_count=int(ev),
        termination=TERMINATION_NAMES[int(term)],
    )
