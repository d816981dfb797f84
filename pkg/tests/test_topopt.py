import csv
import os

import numpy as np
import pytest
from scipy.sparse.linalg import spsolve

from _app.assembly.assembly import CoefficientField, assemble_elasticity, load_vector, opposing_forces
from _app.assembly.density import build_filter, simp_modulus
from _app.grid.grid import boundary_dofs, build_fine_mesh
from _app.spectral.spectral import EigenOptions
from _app.topopt.topopt import (OptimizationConfig, OptimizationError, ReusePolicy, compliance_and_sensitivity,
                                oc_update, optimize)
from utils.pgm import read_field_image

PENAL, E_MIN, E_MAX = 3.0, 1e-3, 1.0


def _compliance(mesh, rho):
    coeff = CoefficientField(simp_modulus(rho, PENAL, E_MIN, E_MAX), E_min=E_MIN, E_max=E_MAX)
    op = assemble_elasticity(mesh, coeff, boundary_dofs(mesh))
    f = load_vector(mesh, opposing_forces(mesh), op)
    u = spsolve(op.matrix.tocsc(), f)
    return compliance_and_sensitivity(op.extend(u), rho, mesh, PENAL, E_MIN, E_MAX, f=op.extend(f))


def test_reuse_policy():
    every = ReusePolicy()
    assert every.needs_rebuild(1) and not every.needs_rebuild(0)
    periodic = ReusePolicy(period=5)
    assert not periodic.needs_rebuild(4, last_iterations=100)
    assert periodic.needs_rebuild(5)
    capped = ReusePolicy(period=10, threshold=40)
    assert capped.needs_rebuild(2, last_iterations=41)
    assert not capped.needs_rebuild(2, last_iterations=40)
    relative = ReusePolicy(period=10, threshold_factor=1.5)
    assert relative.limit(20) == 30
    assert relative.needs_rebuild(3, last_iterations=31, first_iterations=20)
    assert not relative.needs_rebuild(3, last_iterations=31)
    for bad in ({'period': 0}, {'threshold': 0}, {'threshold_factor': -1.0}):
        with pytest.raises(ValueError):
            ReusePolicy(**bad)


def test_sensitivities_match_finite_differences():
    mesh = build_fine_mesh(10, 10)
    rho = np.random.default_rng(0).uniform(0.3, 0.9, mesh.n_elements)
    c, dc = _compliance(mesh, rho)
    assert c > 0 and np.all(dc <= 0)
    delta = 1e-6
    for e in (11, 22, 55, 88):
        plus, minus = rho.copy(), rho.copy()
        plus[e] += delta
        minus[e] -= delta
        fd = (_compliance(mesh, plus)[0] - _compliance(mesh, minus)[0]) / (2 * delta)
        assert dc[e] == pytest.approx(fd, rel=1e-4)


def test_energy_form_equals_load_form():
    mesh = build_fine_mesh(8, 8)
    rho = np.full(mesh.n_elements, 0.5)
    coeff = CoefficientField(simp_modulus(rho, PENAL, E_MIN, E_MAX))
    op = assemble_elasticity(mesh, coeff, boundary_dofs(mesh))
    f = load_vector(mesh, opposing_forces(mesh), op)
    u = op.extend(spsolve(op.matrix.tocsc(), f))
    energy, _ = compliance_and_sensitivity(u, rho, mesh, PENAL, E_MIN, E_MAX)
    load, _ = compliance_and_sensitivity(u, rho, mesh, PENAL, E_MIN, E_MAX, f=op.extend(f))
    assert energy == pytest.approx(load, rel=1e-10)


def test_oc_update_uniform_sensitivity_keeps_uniform_design():
    n = 50
    rho = np.full(n, 0.4)
    new = oc_update(rho, -np.ones(n), np.ones(n), 0.4 * n)
    np.testing.assert_allclose(new, 0.4, rtol=1e-8)


def test_oc_update_respects_move_limit_and_volume():
    rng = np.random.default_rng(3)
    n = 200
    rho = rng.uniform(0.1, 0.9, n)
    dc = -rng.uniform(0.0, 10.0, n)
    volumes = np.full(n, 0.25)
    target = 0.3 * volumes.sum()
    new = oc_update(rho, dc, volumes, target, move=0.3)
    assert np.all(np.abs(new - rho) <= 0.3 + 1e-12)
    assert np.all((new >= 0) & (new <= 1))
    assert volumes @ new == pytest.approx(target, rel=1e-6)


def test_oc_update_with_filter_hits_filtered_volume():
    mesh = build_fine_mesh(12, 12)
    filt = build_filter(mesh, 1.5 * mesh.h)
    rng = np.random.default_rng(4)
    rho = rng.uniform(0.2, 0.6, mesh.n_elements)
    volumes = np.full(mesh.n_elements, mesh.h ** 2)
    target = 0.35 * volumes.sum()
    new = oc_update(rho, -rng.uniform(0.1, 1.0, mesh.n_elements), volumes, target, filt=filt)
    assert volumes @ filt.apply(new) == pytest.approx(target, rel=1e-6)


def test_oc_update_edge_cases():
    rho = np.full(10, 0.5)
    np.testing.assert_array_equal(oc_update(rho, np.zeros(10), np.ones(10), 5.0), rho)
    with pytest.raises(ValueError):
        oc_update(rho, -np.ones(10), np.ones(10), 11.0)
    # the move limit keeps the volume from dropping to the target
    with pytest.raises(OptimizationError):
        oc_update(np.ones(10), -np.ones(10), np.ones(10), 1.0, move=0.1)


def test_config_validation():
    for bad in ({'volume_fraction': 1.0}, {'iterations': 0}, {'move': 0.0}, {'variant': 'XX'}):
        with pytest.raises(ValueError):
            OptimizationConfig(**bad)


def _small_config(**kwargs):
    base = dict(nx=16, ny=16, Nx=4, Ny=4, iterations=4, E_min=1e-3, eigen=EigenOptions(n_max=3))
    base.update(kwargs)
    return OptimizationConfig(**base)


def test_optimize_writes_history_and_images(tmp_path):
    out = str(tmp_path / 'run')
    result = optimize(_small_config(variant='EH+Rot', out_dir=out, snapshot_every=2,
                                    reuse=ReusePolicy(period=2)), progress=False)
    assert len(result.history) == 4
    assert [rec.rebuilt for rec in result.history] == [True, False, True, False]
    assert result.rebuilds == 2
    for rec in result.history:
        assert rec.volume == pytest.approx(0.3, rel=1e-5)
        assert rec.pcg_iterations > 0
    assert result.history[-1].compliance < result.history[0].compliance

    with open(os.path.join(out, 'iterations.csv'), newline='') as f:
        rows = list(csv.DictReader(f))
    assert [int(r['iteration']) for r in rows] == [0, 1, 2, 3]
    assert sorted(os.listdir(out)) == ['density_0000.pgm', 'density_0002.pgm', 'design.pgm', 'design.txt',
                                       'iterations.csv']
    assert read_field_image(os.path.join(out, 'design.pgm')).size == 16 * 16
    np.testing.assert_allclose(np.loadtxt(os.path.join(out, 'design.txt')).ravel(), result.rho_f, rtol=1e-15)


def test_iterative_and_direct_designs_agree():
    iterative = optimize(_small_config(variant='EE', tol=1e-10), progress=False)
    direct = optimize(_small_config(variant='direct'), progress=False)
    assert all(rec.pcg_iterations == 0 for rec in direct.history)
    np.testing.assert_allclose(iterative.rho, direct.rho, atol=1e-6)
    assert iterative.history[-1].compliance == pytest.approx(direct.history[-1].compliance, rel=1e-6)


@pytest.mark.slow
def test_reference_problem_with_reuse():
    base = dict(nx=60, ny=60, Nx=3, Ny=3, iterations=100)
    fresh = optimize(OptimizationConfig(**base), progress=False)
    reused = optimize(OptimizationConfig(reuse=ReusePolicy(period=10), **base), progress=False)
    target = OptimizationConfig().volume_fraction
    for result in (fresh, reused):
        assert all(abs(rec.volume - target) <= 1e-6 * target for rec in result.history)
        assert result.history[-1].compliance <= 0.7 * result.history[0].compliance
    assert fresh.rebuilds == 100 and reused.rebuilds < 20
    assert reused.build_time < fresh.build_time
    assert reused.history[-1].compliance == pytest.approx(fresh.history[-1].compliance, rel=1e-2)
