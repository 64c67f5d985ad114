import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdlab import SiteKernel, as_density, discrete_laplacian, total_mass


def test_directed_two_site_example():
    kern = SiteKernel(np.array([[0.0, 2.0], [0.0, 0.0]]))
    out = discrete_laplacian(kern, np.array([1.0, 0.0]))
    assert out == pytest.approx([-2.0, 2.0], abs=1e-15)


def test_zero_density_maps_to_zero():
    kern = SiteKernel(np.array([[0.0, 1.5, 0.3], [0.2, 0.0, 0.1], [1.0, 0.0, 0.0]]))
    out = discrete_laplacian(kern, np.zeros(3))
    assert np.all(out == 0.0)


def test_balanced_kernel_kills_constants():
    # in-rate equals out-rate at every site, so constants are harmonic
    kern = SiteKernel(np.array([[0.0, 1.0, 2.0], [2.0, 0.0, 1.0], [1.0, 2.0, 0.0]]))
    out = discrete_laplacian(kern, np.full(3, 0.7))
    assert out == pytest.approx([0.0, 0.0, 0.0], abs=1e-12)


def test_complete_kernel_is_unweighted_graph_case():
    kern = SiteKernel.complete(3)
    assert np.all(np.diag(kern.rates) == 0.0)
    assert kern.row_sums == pytest.approx([2.0, 2.0, 2.0])
    # lap(z)(x) = sum_{y != x} (z(y) - z(x))
    z = np.array([1.0, 2.0, 4.0])
    out = discrete_laplacian(kern, z)
    expect = np.array([(2 - 1) + (4 - 1), (1 - 2) + (4 - 2), (1 - 4) + (2 - 4)])
    assert out == pytest.approx(expect, rel=1e-14)


@st.composite
def kernel_and_density(draw):
    nsites = draw(st.integers(1, 6))
    mat = draw(
        st.lists(
            st.lists(st.floats(0.0, 10.0), min_size=nsites, max_size=nsites),
            min_size=nsites,
            max_size=nsites,
        )
    )
    dens = draw(st.lists(st.floats(0.0, 10.0), min_size=nsites, max_size=nsites))
    return SiteKernel(np.array(mat)), np.array(dens)


@settings(max_examples=60, deadline=None)
@given(kernel_and_density())
def test_laplacian_conserves_mass(kd):
    kern, z = kd
    assert abs(discrete_laplacian(kern, z).sum()) <= 1e-12 * max(1.0, z.sum())


@settings(max_examples=60, deadline=None)
@given(kernel_and_density(), st.floats(-3.0, 3.0), st.floats(-3.0, 3.0))
def test_laplacian_is_linear(kd, a, b):
    kern, z1 = kd
    rng = np.random.default_rng(0)
    z2 = rng.uniform(0.0, 5.0, kern.site_count)
    lhs = kern.rates.T @ (a * z1 + b * z2) - kern.row_sums * (a * z1 + b * z2)
    rhs = a * discrete_laplacian(kern, z1) + b * discrete_laplacian(kern, z2)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_diagonal_forced_to_zero():
    kern = SiteKernel(np.array([[5.0, 1.0], [2.0, 7.0]]))
    assert np.all(np.diag(kern.rates) == 0.0)
    assert kern.rates[0, 1] == 1.0 and kern.rates[1, 0] == 2.0


@pytest.mark.parametrize(
    "bad",
    [
        np.array([[0.0, -1.0], [0.0, 0.0]]),
        np.array([[0.0, np.inf], [0.0, 0.0]]),
        np.array([[0.0, np.nan], [0.0, 0.0]]),
        np.zeros((2, 3)),
        np.zeros((0, 0)),
    ],
)
def test_kernel_rejects_invalid_matrices(bad):
    with pytest.raises(ValueError):
        SiteKernel(bad)


def test_laplacian_rejects_dimension_mismatch():
    kern = SiteKernel.complete(2)
    with pytest.raises(ValueError):
        discrete_laplacian(kern, np.array([1.0, 2.0, 3.0]))
    with pytest.raises(ValueError):
        discrete_laplacian(kern, np.array([1.0, np.nan]))


def test_total_mass_examples():
    assert total_mass(np.array([1.0, 0.0])) == 1.0
    assert total_mass(np.zeros(4)) == 0.0
    assert total_mass(np.array([0.3, 0.7, 1.0])) == pytest.approx(2.0, rel=1e-15)


def test_density_validation():
    with pytest.raises(ValueError):
        as_density([-0.1])
    with pytest.raises(ValueError):
        as_density([np.inf])
    with pytest.raises(ValueError):
        as_density([[1.0, 2.0]])
