"""Finite site set, jump kernel and the graph diffusion operator.

Sites are indexed 0..V-1.  The kernel entry rate[x, y] is the per-particle
jump intensity from x to y; no stochasticity or symmetry is assumed.  The
diffusion operator is

    lap(z)(x) = sum_y [rate(y, x) z(y) - rate(x, y) z(x)]

whose output always sums to zero (jumps move mass, they never create it).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SiteKernel:
    """Dense jump-rate matrix over a finite site set.

    The diagonal is forced to zero at construction: a self-jump changes
    nothing, so keeping it would only inflate the total event rate.
    """

    rates: np.ndarray
    names: tuple[str, ...] | None = None
    _row_sums: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        r = np.asarray(self.rates, dtype=np.float64)
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise ValueError(f"kernel must be a square matrix, got shape {r.shape}")
        if r.shape[0] < 1:
            raise ValueError("kernel needs at least one site")
        if not np.all(np.isfinite(r)):
            raise ValueError("kernel entries must be finite")
        if np.any(r < 0.0):
            raise ValueError("kernel entries must be nonnegative")
        r = r.copy()
        np.fill_diagonal(r, 0.0)
        r.setflags(write=False)
        object.__setattr__(self, "rates", r)
        row_sums = r.sum(axis=1)
        row_sums.setflags(write=False)
        object.__setattr__(self, "_row_sums", row_sums)
        if self.names is not None and len(self.names) != r.shape[0]:
            raise ValueError("name table length must match site count")

    @property
    def site_count(self) -> int:
        return self.rates.shape[0]

    @property
    def row_sums(self) -> np.ndarray:
        """Total outgoing rate per site, sum_y rate(x, y)."""
        return self._row_sums

    @classmethod
    def single_site(cls) -> "SiteKernel":
        return cls(np.zeros((1, 1)))

    @classmethod
    def complete(cls, site_count: int, rate: float = 1.0) -> "SiteKernel":
        """All-ones kernel scaled by ``rate``: the unweighted graph case."""
        m = np.full((site_count, site_count), float(rate))
        return cls(m)


def as_density(values, site_count: int | None = None) -> np.ndarray:
    """Validate and return a density vector (finite, nonnegative floats)."""
    z = np.asarray(values, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError(f"density must be a vector, got shape {z.shape}")
    if site_count is not None and z.shape[0] != site_count:
        raise ValueError(f"expected {site_count} sites, got {z.shape[0]}")
    if not np.all(np.isfinite(z)):
        raise ValueError("density entries must be finite")
    if np.any(z < 0.0):
        raise ValueError("density entries must be nonnegative")
    return z


def discrete_laplacian(kernel: SiteKernel, zeta: np.ndarray) -> np.ndarray:
    """Graph diffusion of a density: incoming mass minus outgoing mass."""
    z = as_density(zeta, kernel.site_count)
    return kernel.rates.T @ z - kernel.row_sums * z


def total_mass(zeta) -> float:
    """Sum of the density over all sites."""
    return float(np.sum(as_density(zeta)))
