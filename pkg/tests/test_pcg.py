import csv

import numpy as np
import pytest
import scipy.sparse as sp

from _app.krylov.pcg import (PreconditionerError, condition_history, estimate_condition,
                             export_residual_history, pcg_solve, ritz_values)


def _laplacian_2d(n):
    T = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1])
    I = sp.identity(n)
    return (sp.kron(I, T) + sp.kron(T, I)).tocsr()


def test_diagonal_system_terminates():
    n = 10
    A = sp.diags(np.arange(1.0, n + 1)).tocsr()
    b = np.ones(n)
    x, report = pcg_solve(A, b, tol=1e-10)
    assert report.converged and report.iterations <= n
    np.testing.assert_allclose(x, 1.0 / np.arange(1.0, n + 1), rtol=1e-8)


def test_two_by_two_condition_is_exact():
    A = np.diag([1.0, 4.0])
    _, report = pcg_solve(A, np.ones(2), tol=1e-12)
    assert report.iterations == 2
    assert report.condition == pytest.approx(4.0, rel=1e-6)
    assert report.ritz_min == pytest.approx(1.0, rel=1e-6)
    assert report.ritz_max == pytest.approx(4.0, rel=1e-6)


def test_exact_preconditioner_needs_one_iteration():
    A = _laplacian_2d(6).toarray()
    inverse = np.linalg.inv(A)
    b = np.random.default_rng(0).standard_normal(A.shape[0])
    x, report = pcg_solve(A, b, M=lambda r: inverse @ r)
    assert report.iterations == 1 and report.converged
    assert report.condition == pytest.approx(1.0, abs=1e-8)
    np.testing.assert_allclose(x, np.linalg.solve(A, b), rtol=1e-8)


def test_reported_residual_is_the_true_residual():
    A = _laplacian_2d(12)
    b = np.random.default_rng(2).standard_normal(A.shape[0])
    for tol in (1e-6, 1e-12):
        x, report = pcg_solve(A, b, tol=tol)
        true = np.linalg.norm(b - A @ x) / np.linalg.norm(b)
        assert report.converged and true <= tol
        assert report.final_residual == pytest.approx(true, rel=1e-12)


def test_condition_estimate_is_scale_invariant():
    A = _laplacian_2d(8)
    b = np.random.default_rng(1).standard_normal(A.shape[0])
    _, one = pcg_solve(A, b)
    _, two = pcg_solve(A, 2 * b)
    assert one.iterations == two.iterations
    assert two.condition == pytest.approx(one.condition, rel=1e-6)
    assert estimate_condition(one) == one.condition


def test_condition_history_grows():
    A = _laplacian_2d(10)
    _, report = pcg_solve(A, np.ones(A.shape[0]), tol=1e-8)
    history = condition_history(report)
    assert history.size == report.iterations
    assert history[0] == 1.0
    assert np.all(np.diff(history) >= -1e-8 * history[1:])
    assert history[-1] == pytest.approx(report.condition)


def test_ritz_values_lie_inside_the_spectrum():
    A = _laplacian_2d(7)
    _, report = pcg_solve(A, np.ones(A.shape[0]), tol=1e-10)
    lam = np.linalg.eigvalsh(A.toarray())
    theta = ritz_values(report.alphas, report.betas)
    assert theta.min() >= lam.min() * (1 - 1e-8)
    assert theta.max() <= lam.max() * (1 + 1e-8)


def test_iteration_cap_and_undefined_condition():
    A = sp.diags(np.arange(1.0, 11.0)).tocsr()
    _, capped = pcg_solve(A, np.ones(10), maxit=1)
    assert not capped.converged and capped.iterations == 1
    assert capped.condition is None
    _, short = pcg_solve(A, np.ones(10), maxit=4)
    assert short.iterations == 4 and short.condition is not None


def test_zero_right_hand_side():
    x, report = pcg_solve(np.eye(3), np.zeros(3))
    np.testing.assert_array_equal(x, 0.0)
    assert report.iterations == 0 and report.converged and report.condition is None


@pytest.mark.parametrize('tol, maxit', [(0.0, 10), (1.0, 10), (1e-6, 0)])
def test_invalid_settings(tol, maxit):
    with pytest.raises(ValueError):
        pcg_solve(np.eye(2), np.ones(2), tol=tol, maxit=maxit)


def test_asymmetric_preconditioner_is_detected():
    B = np.triu(np.ones((5, 5)))
    with pytest.raises(PreconditionerError):
        pcg_solve(np.eye(5), np.ones(5), M=lambda r: B @ r, check_symmetry=True)


def test_residual_history_export(tmp_path):
    A = _laplacian_2d(5)
    _, report = pcg_solve(A, np.ones(A.shape[0]))
    path = tmp_path / 'residuals.csv'
    export_residual_history(report, path)
    with open(path, newline='') as f:
        rows = list(csv.reader(f))
    assert rows[0] == ['iteration', 'relative_residual']
    assert len(rows) == report.iterations + 2
    assert float(rows[1][1]) == 1.0
    assert float(rows[-1][1]) <= 1e-6
