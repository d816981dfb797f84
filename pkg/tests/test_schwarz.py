import numpy as np
import pytest
from scipy.sparse.linalg import spsolve

from _app.assembly.assembly import assemble_elasticity, load_vector, opposing_forces
from _app.bench.coefficients import generate_coefficient, solid_mask
from _app.grid.grid import boundary_dofs, build_coarse_partition, build_fine_mesh
from _app.krylov.pcg import pcg_solve
from _app.schwarz.schwarz import (TWO_LEVEL_TAGS, VARIANTS, block_split_condition_bound, build_preconditioner,
                                  parse_variant)
from _app.spectral.spectral import EigenOptions

LAYOUT = 'channels-and-inclusions'


def _problem(n, N, eta, layout=LAYOUT, nu=0.3):
    mesh = build_fine_mesh(n, n)
    part = build_coarse_partition(mesh, N, N)
    coeff = generate_coefficient(layout, mesh, eta, nu=nu)
    op = assemble_elasticity(mesh, coeff, boundary_dofs(mesh))
    f = load_vector(mesh, opposing_forces(mesh, solid_mask(layout, mesh)), op)
    return mesh, part, coeff, op, f


@pytest.fixture(scope='module')
def small():
    return _problem(16, 4, 1e4)


def test_parse_variant():
    assert parse_variant('M_EE').tag == 'EE'
    assert parse_variant('none').tag == 'None'
    assert parse_variant(VARIANTS['Split']) is VARIANTS['Split']
    rand = parse_variant('EH+Rot;Rand')
    assert (rand.level1, rand.eigen_kind, rand.eigensolver, rand.enriched) == \
        ('elasticity', 'diffusion', 'randomized', True)
    assert not VARIANTS['Split'].has_coarse
    with pytest.raises(ValueError):
        parse_variant('EE+Rot')


def test_block_split_bound():
    assert block_split_condition_bound(0.0) == pytest.approx(2.0)
    assert block_split_condition_bound(0.3) == pytest.approx(3.5)
    assert block_split_condition_bound(1.0 / 3.0) == pytest.approx(4.0)
    with pytest.raises(ValueError):
        block_split_condition_bound(0.5)


@pytest.mark.parametrize('tag', TWO_LEVEL_TAGS + ('Split',))
def test_preconditioner_is_symmetric_positive(small, tag):
    mesh, part, coeff, op, _ = small
    M = build_preconditioner(tag, op, mesh, part, coeff, EigenOptions(n_max=4))
    rng = np.random.default_rng(0)
    for _ in range(10):
        v, w = rng.standard_normal((2, op.dim))
        Mv, Mw = M.apply(v), M.apply(w)
        assert abs(v @ Mw - w @ Mv) <= 1e-10 * np.linalg.norm(v) * np.linalg.norm(Mw)
        assert v @ Mv > 0
    np.testing.assert_array_equal(M.apply(np.zeros(op.dim)), 0.0)
    with pytest.raises(ValueError):
        M.apply(np.ones(op.dim + 1))


def test_coarse_dimensions_follow_selection(small):
    mesh, part, coeff, op, _ = small
    ee = build_preconditioner('EE', op, mesh, part, coeff, EigenOptions(n_max=4))
    assert ee.coarse_dim == 4 * part.n_interior
    assert ee.selection_summary().startswith('fixed')
    eh = build_preconditioner('EH', op, mesh, part, coeff, EigenOptions(n_max=4))
    ehr = build_preconditioner('EH+Rot', op, mesh, part, coeff, EigenOptions(n_max=4))
    assert eh.coarse_dim == 2 * eh.selection_counts.sum()
    assert ehr.coarse_dim == eh.coarse_dim + part.n_interior
    assert set(ee.timings) == {'level1', 'coarse'}


def test_none_is_the_identity(small):
    mesh, part, coeff, op, f = small
    M = build_preconditioner('None', op, mesh, part, coeff)
    np.testing.assert_array_equal(M.apply(f), f)
    assert M.coarse_dim == 0 and M.selection_summary() == ''


def test_single_subdomain_is_an_exact_solve():
    mesh, part, coeff, op, f = _problem(8, 1, 1.0, layout='homogeneous')
    assert part.n_interior == 0
    M = build_preconditioner('EE', op, mesh, part, coeff)
    assert M.coarse_dim == 0
    _, report = pcg_solve(op, f, M)
    assert report.iterations == 1


def test_rejects_operator_from_another_mesh(small):
    mesh, part, coeff, op, _ = small
    other = build_fine_mesh(8, 8)
    with pytest.raises(ValueError):
        build_preconditioner('EE', op, other, build_coarse_partition(other, 2, 2), coeff)


@pytest.mark.parametrize('nu, bound', [(0.3, 3.5), (0.0, 2.0)])
def test_split_condition_stays_below_bound(nu, bound):
    mesh, part, coeff, op, f = _problem(20, 4, 1.0, layout='homogeneous', nu=nu)
    M = build_preconditioner('Split', op, mesh, part, coeff)
    _, report = pcg_solve(op, f, M, tol=1e-10)
    assert report.converged
    assert 1.0 <= report.condition <= 1.15 * bound


@pytest.mark.parametrize('eta', [1.0, 1e4, 1e6])
@pytest.mark.parametrize('tag', TWO_LEVEL_TAGS)
def test_preconditioned_solution_matches_direct(tag, eta):
    mesh, part, coeff, op, f = _problem(20, 4, eta)
    M = build_preconditioner(tag, op, mesh, part, coeff)
    x, report = pcg_solve(op, f, M, tol=1e-8)
    exact = spsolve(op.matrix.tocsc(), f)
    assert report.converged
    assert np.linalg.norm(x - exact) <= 1e-5 * np.linalg.norm(exact)


@pytest.mark.parametrize('tag', ['EE', 'EE;Rand', 'EH+Rot', 'EH+Rot;Rand'])
def test_iterations_are_robust_in_the_contrast(tag):
    counts = {}
    for eta in (1.0, 1e4, 1e6):
        mesh, part, coeff, op, f = _problem(50, 10, eta)
        M = build_preconditioner(tag, op, mesh, part, coeff)
        _, report = pcg_solve(op, f, M)
        assert report.converged
        counts[eta] = report.iterations
    assert max(counts.values()) <= 5 * counts[1.0]


@pytest.mark.parametrize('eta', [1.0, 1e4, 1e6])
@pytest.mark.parametrize('tag', ['EE;Rand', 'EH+Rot;Rand'])
def test_snapshot_count_barely_changes_iterations(tag, eta):
    mesh, part, coeff, op, f = _problem(50, 10, eta)
    iterations = []
    for snapshots in (10, 15):
        M = build_preconditioner(tag, op, mesh, part, coeff, EigenOptions(snapshots=snapshots))
        _, report = pcg_solve(op, f, M)
        assert report.converged
        iterations.append(report.iterations)
    assert abs(iterations[0] - iterations[1]) <= 2


@pytest.mark.slow
def test_full_scale_sweep():
    conditions, iterations = {}, {}
    robust = ('EE', 'EH+Rot', 'EH+Rot;Rand', 'EE;Rand')
    for eta in (1.0, 1e2, 1e4, 1e6):
        mesh, part, coeff, op, f = _problem(100, 10, eta)
        for tag in robust + ('HH',):
            M = build_preconditioner(tag, op, mesh, part, coeff)
            _, report = pcg_solve(op, f, M)
            conditions[(tag, eta)] = report.condition
            iterations[(tag, eta)] = report.iterations
            if tag != 'HH':
                assert report.converged and report.iterations <= 150
        if eta >= 1e4:
            _, plain = pcg_solve(op, f)
            assert not plain.converged
    for tag in robust:
        worst = max(iterations[(tag, eta)] for eta in (1.0, 1e2, 1e4, 1e6))
        assert worst <= 5 * iterations[(tag, 1.0)]
    assert conditions[('HH', 1e4)] >= 5 * conditions[('EH+Rot', 1e4)]


@pytest.mark.slow
def test_coarse_construction_cost_ordering():
    mesh, part, coeff, op, _ = _problem(100, 10, 1e4)
    cost = {tag: build_preconditioner(tag, op, mesh, part, coeff).timings['coarse']
            for tag in ('EE', 'EE;Rand', 'EH+Rot', 'EH+Rot;Rand')}
    assert cost['EH+Rot'] < cost['EE']
    assert cost['EH+Rot;Rand'] < cost['EE;Rand']
    assert cost['EE;Rand'] < cost['EE']
    assert cost['EH+Rot;Rand'] < cost['EH+Rot']
