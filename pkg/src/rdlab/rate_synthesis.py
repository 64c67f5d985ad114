"""Birth/death rate construction and generator coefficients.

For scale parameter n the reaction rates at a site holding ``count``
particles (density z = count/n) are

    birth(count) = max(n^2 a z^l - n b z^k, 0) / 2
    death(count) = n^2 a z^l - birth(count)

with a = alpha, b = beta.  By construction birth + death = n^2 alpha z^ell
exactly, the scaled drift (birth - death)/n equals -beta z^k up to a
truncation error that vanishes as n grows, and both rates are nonnegative
and vanish at z = 0.

The module also derives the drift/covariation coefficients of the process
generator via coordinate functions, together with brute-force generator
evaluators that serve as the independent oracle for those closed forms.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .graph_kernel import SiteKernel, as_density, discrete_laplacian


@dataclass(frozen=True)
class ModelParams:
    """Parameters (alpha, beta, k, ell, n) of one discrete model.

    beta = 0 is accepted (critical-branching style presets) although the
    diffusion-limit guarantee assumes beta > 0; such runs are flagged by
    :meth:`advisories` rather than rejected.
    """

    alpha: float
    beta: float
    k: int
    ell: int
    n: int

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not (np.isfinite(self.beta) and self.beta >= 0):
            raise ValueError(f"beta must be nonnegative, got {self.beta}")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k}")
        if int(self.ell) != self.ell or self.ell < 1:
            raise ValueError(f"ell must be a positive integer, got {self.ell}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "ell", int(self.ell))
        object.__setattr__(self, "n", int(self.n))

    def advisories(self) -> list[str]:
        notes = []
        if self.beta == 0.0:
            notes.append(
                "beta = 0: the diffusion-limit guarantee assumes beta > 0 "
                "(rates reduce to birth = death = n^2 alpha z^ell / 2)"
            )
        if self.k == self.ell and self.n * self.alpha <= self.beta:
            notes.append(
                "k = ell with n <= beta/alpha: the birth-rate truncation is "
                "active at every density, so the drift never matches "
                "-beta z^k at this n"
            )
        return notes

    def warn_advisories(self) -> None:
        for note in self.advisories():
            warnings.warn(note, stacklevel=2)


def _check_finite(value: float, what: str) -> float:
    if not np.isfinite(value):
        raise OverflowError(f"{what} overflowed double precision")
    return value


def _raw_pair(p: ModelParams, zeta: float) -> tuple[float, float]:
    """(birth, death) evaluated at density zeta = count/n."""
    if zeta < 0.0:
        raise ValueError(f"density must be nonnegative, got {zeta}")
    noise = _check_finite(p.n * p.n * p.alpha * zeta**p.ell, "n^2 alpha z^ell")
    react = _check_finite(p.n * p.beta * zeta**p.k, "n beta z^k")
    birth = max(noise - react, 0.0) / 2.0
    return birth, noise - birth


def birth_rate(p: ModelParams, count: int) -> float:
    """Particle creation rate at a site holding ``count`` particles."""
    if count < 0:
        raise ValueError(f"count must be nonnegative, got {count}")
    return _raw_pair(p, count / p.n)[0]


def death_rate(p: ModelParams, count: int) -> float:
    """Particle annihilation rate; zero at zero, so counts stay nonnegative."""
    if count < 0:
        raise ValueError(f"count must be nonnegative, got {count}")
    return _raw_pair(p, count / p.n)[1]


def drift_fn(p: ModelParams, zeta: float) -> float:
    """Scaled net reaction drift (birth - death)/n at density zeta."""
    birth, death = _raw_pair(p, zeta)
    return (birth - death) / p.n


def variance_gn(p: ModelParams, zeta: float) -> float:
    """Scaled reaction variance (birth + death)/n^2 = alpha zeta^ell."""
    if zeta < 0.0:
        raise ValueError(f"density must be nonnegative, got {zeta}")
    return _check_finite(p.alpha * zeta**p.ell, "alpha z^ell")


def error_term(p: ModelParams, zeta: float) -> float:
    """Deviation of the drift from -beta zeta^k caused by rate truncation.

    Algebraically drift + beta zeta^k collapses to the truncated shortfall
    max(n beta z^k - n^2 alpha z^ell, 0)/n, which evaluates without
    cancellation: exactly zero whenever n^2 alpha z^ell >= n beta z^k, and on
    any bounded density range the supremum vanishes as n grows.
    """
    if zeta < 0.0:
        raise ValueError(f"density must be nonnegative, got {zeta}")
    noise = _check_finite(p.n * p.n * p.alpha * zeta**p.ell, "n^2 alpha z^ell")
    react = _check_finite(p.n * p.beta * zeta**p.k, "n beta z^k")
    return max(react - noise, 0.0) / p.n


def discrete_coefficients(
    p: ModelParams, kernel: SiteKernel, zeta
) -> tuple[np.ndarray, np.ndarray]:
    """Drift vector b and covariation matrix a of the generator at zeta.

    b_x  = lap(z)(x) + (birth - death)/n at z(x)
    a_xy = -[rate(x,y) z(x) + rate(y,x) z(y)] / n          (x != y)
    a_xx = sum_y [rate(x,y) z(x) + rate(y,x) z(y)] / n + alpha z(x)^ell
    """
    z = as_density(zeta, kernel.site_count)
    nsites = kernel.site_count
    b = discrete_laplacian(kernel, z)
    for x in range(nsites):
        b[x] += drift_fn(p, z[x])

    flux = kernel.rates * z[:, None] + kernel.rates.T * z[None, :]
    a = -flux / p.n
    np.fill_diagonal(a, 0.0)
    for x in range(nsites):
        a[x, x] = flux[x].sum() / p.n + variance_gn(p, z[x])
    return b, a


def limit_coefficients(
    alpha: float, beta: float, k: int, ell: int, kernel: SiteKernel, zeta
) -> tuple[np.ndarray, np.ndarray]:
    """n -> infinity coefficients: b* = lap(z) - beta z^k, a* = diag(alpha z^ell)."""
    z = as_density(zeta, kernel.site_count)
    b = discrete_laplacian(kernel, z) - beta * z**k
    a = np.diag(alpha * z**ell)
    return b, a


def _transitions(p: ModelParams, kernel: SiteKernel, eta: np.ndarray):
    """All one-step transitions from eta as (rate, successor) pairs."""
    nsites = kernel.site_count
    for x in range(nsites):
        cx = int(eta[x])
        for y in range(nsites):
            rate = cx * kernel.rates[x, y]
            if rate > 0.0:
                nxt = eta.copy()
                nxt[x] -= 1
                nxt[y] += 1
                yield rate, nxt
        rb = birth_rate(p, cx)
        if rb > 0.0:
            nxt = eta.copy()
            nxt[x] += 1
            yield rb, nxt
        rd = death_rate(p, cx)
        if rd > 0.0:
            nxt = eta.copy()
            nxt[x] -= 1
            yield rd, nxt


def apply_generator_bruteforce(
    p: ModelParams,
    kernel: SiteKernel,
    eta: Sequence[int] | np.ndarray,
    f: Callable[[np.ndarray], float],
) -> float:
    """Exact sum of rate * [f(successor) - f(eta)] over every transition."""
    eta = np.asarray(eta, dtype=np.int64)
    base = f(eta)
    return float(sum(rate * (f(nxt) - base) for rate, nxt in _transitions(p, kernel, eta)))


def apply_carre_du_champ_bruteforce(
    p: ModelParams,
    kernel: SiteKernel,
    eta: Sequence[int] | np.ndarray,
    f: Callable[[np.ndarray], float],
) -> float:
    """Exact sum of rate * [f(successor) - f(eta)]^2 over every transition."""
    eta = np.asarray(eta, dtype=np.int64)
    base = f(eta)
    return float(
        sum(rate * (f(nxt) - base) ** 2 for rate, nxt in _transitions(p, kernel, eta))
    )


def coordinate_fn(x: int, n: int) -> Callable[[np.ndarray], float]:
    """The scaled coordinate observable eta -> eta[x]/n."""
    return lambda eta: eta[x] / n


def product_coordinate_fn(x: int, y: int, n: int) -> Callable[[np.ndarray], float]:
    """The product observable eta -> (eta[x]/n) (eta[y]/n)."""
    return lambda eta: (eta[x] / n) * (eta[y] / n)
