import numpy as np
import pytest

from _app.assembly.density import (DensityFields, build_filter, density_filter, simp_derivative,
                                   simp_modulus)
from _app.grid.grid import build_fine_mesh


@pytest.fixture(scope='module')
def mesh():
    return build_fine_mesh(10, 10)


def test_zero_radius_is_identity(mesh):
    rho = np.random.default_rng(0).uniform(size=mesh.n_elements)
    np.testing.assert_array_equal(density_filter(rho, build_filter(mesh, 0.0)), rho)


def test_filter_preserves_constants_and_stencil(mesh):
    filt = build_filter(mesh, 1.5 * mesh.h)
    np.testing.assert_allclose(filt.apply(np.full(mesh.n_elements, 0.3)), 0.3)
    interior = 5 * mesh.nx + 5
    assert filt.H[interior].nnz == 9
    assert filt.H[0].nnz == 4


def test_backpropagate_is_the_transpose(mesh):
    filt = build_filter(mesh, 2.5 * mesh.h)
    rng = np.random.default_rng(1)
    a, b = rng.uniform(size=mesh.n_elements), rng.standard_normal(mesh.n_elements)
    assert b @ filt.apply(a) == pytest.approx(filt.backpropagate(b) @ a, rel=1e-12)


def test_negative_radius_rejected(mesh):
    with pytest.raises(ValueError):
        build_filter(mesh, -0.1)


def test_simp_interpolation_and_derivative():
    rho = np.array([0.0, 0.5, 1.0])
    np.testing.assert_allclose(simp_modulus(rho, 3.0, 1e-6, 1.0), [1e-6, 1e-6 + 0.125 * (1 - 1e-6), 1.0])
    delta = 1e-7
    fd = (simp_modulus(0.5 + delta, 3.0, 1e-3, 2.0) - simp_modulus(0.5 - delta, 3.0, 1e-3, 2.0)) / (2 * delta)
    assert simp_derivative(0.5, 3.0, 1e-3, 2.0) == pytest.approx(fd, rel=1e-7)
    with pytest.raises(ValueError):
        simp_modulus(np.array([1.2]), 3.0, 1e-6, 1.0)
    with pytest.raises(ValueError):
        simp_modulus(rho, 0.5, 1e-6, 1.0)


def test_density_fields_volume():
    fields = DensityFields(np.full(4, 0.5), np.full(4, 0.25), np.full(4, 0.5), volume_bound=1.0)
    assert fields.volume == pytest.approx(0.5)
    with pytest.raises(ValueError):
        DensityFields(np.full(4, 1.5), np.full(4, 0.25), np.full(4, 0.5), volume_bound=1.0)


def test_density_filter_stays_in_unit_interval(mesh):
    filt = build_filter(mesh, 1.5 * mesh.h)
    rho = np.random.default_rng(2).uniform(size=mesh.n_elements)
    rho_f = density_filter(rho, filt)
    assert rho_f.min() >= 0.0 and rho_f.max() <= 1.0
    np.testing.assert_allclose(rho_f, filt.apply(rho), rtol=1e-15)
    fields = DensityFields(rho, rho_f, np.full(mesh.n_elements, mesh.h ** 2), volume_bound=0.5)
    np.testing.assert_allclose(fields.modulus(1e-3, 1.0), simp_modulus(rho_f, 3.0, 1e-3, 1.0))
