"""Preconditioned conjugate gradients with the Lanczos connection: the PCG
step lengths alpha_k and beta_k define a symmetric tridiagonal matrix whose
eigenvalues are Ritz values of M^{-1}A, which gives a condition estimate
for free.
"""
from dataclasses import dataclass, field
from typing import Dict, Optional
import csv
import logging
import time

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal

logger = logging.getLogger(__name__)


class PreconditionerError(RuntimeError):
    pass


@dataclass
class SolveReport:
    iterations: int
    converged: bool
    residuals: np.ndarray = field(repr=False)   # ||r_k|| / ||b||, k = 0..iterations; the last is b - Ax
    alphas: np.ndarray = field(repr=False)
    betas: np.ndarray = field(repr=False)
    condition: Optional[float] = None
    ritz_min: Optional[float] = None
    ritz_max: Optional[float] = None
    coarse_dim: int = 0
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def final_residual(self):
        return float(self.residuals[-1])


def _as_operator(A):
    if callable(A) and not hasattr(A, 'shape') and not hasattr(A, 'matrix'):
        return A
    matrix = getattr(A, 'matrix', A)
    return lambda v: matrix @ v


def _as_preconditioner(M):
    if M is None:
        return lambda r: r.copy()
    if hasattr(M, 'apply'):
        return M.apply
    return M


def _check_symmetry(apply_M, n, rtol=1e-10, seed=0):
    rng = np.random.default_rng(seed)
    v, w = rng.standard_normal(n), rng.standard_normal(n)
    vMw, wMv = v @ apply_M(w), w @ apply_M(v)
    if abs(vMw - wMv) > rtol * max(abs(vMw), abs(wMv), np.finfo(float).tiny):
        raise PreconditionerError(f"Preconditioner is not symmetric: v.Mw={vMw:.12e}, w.Mv={wMv:.12e}")


def lanczos_tridiagonal(alphas, betas):
    """Diagonal and off-diagonal of T_m from m step lengths and m-1 betas."""
    alphas = np.asarray(alphas, dtype=float)
    betas = np.asarray(betas, dtype=float)
    m = alphas.size
    d = 1.0 / alphas
    d[1:] += betas[:m - 1] / alphas[:-1]
    e = np.sqrt(betas[:m - 1]) / alphas[:-1]
    return d, e


def ritz_values(alphas, betas):
    if len(alphas) == 0:
        return np.empty(0)
    d, e = lanczos_tridiagonal(alphas, betas)
    if d.size == 1:
        return d
    return eigvalsh_tridiagonal(d, e)


def _condition_from(alphas, betas, converged):
    m = len(alphas)
    if m == 0 or (m == 1 and not converged):
        return None, None, None
    theta = ritz_values(alphas, betas)
    if m == 1:
        # a one-step solve means M^{-1}A acts as a multiple of the identity on b
        return 1.0, float(theta[0]), float(theta[0])
    lo, hi = float(theta[0]), float(theta[-1])
    return hi / lo, lo, hi


def estimate_condition(report):
    return _condition_from(report.alphas, report.betas, report.converged)[0]


def condition_history(report):
    """κ̂ after each iteration; the first entry is 1 (a single Ritz value)."""
    values = [1.0]
    for k in range(2, report.iterations + 1):
        theta = ritz_values(report.alphas[:k], report.betas[:k - 1])
        values.append(theta[-1] / theta[0])
    return np.array(values[:report.iterations])


def pcg_solve(A, b, M=None, tol=1e-6, maxit=2000, check_symmetry=False):
    """Solve A x = b from x0 = 0 until ||b - Ax|| <= tol ||b||.

    A: sparse matrix, assembled operator or callable. M: None, callable or an
    object with ``apply``. Returns (x, SolveReport)."""
    if not 0 < tol < 1:
        raise ValueError(f"Relative tolerance must lie in (0, 1), got {tol}")
    if maxit < 1:
        raise ValueError(f"maxit must be positive, got {maxit}")
    apply_A = _as_operator(A)
    apply_M = _as_preconditioner(M)
    b = np.asarray(b, dtype=float)
    n = b.size
    if check_symmetry:
        _check_symmetry(apply_M, n)

    start = time.perf_counter()
    x = np.zeros(n)
    norm_b = np.linalg.norm(b)
    timings = dict(getattr(M, 'timings', {}) or {})
    coarse_dim = int(getattr(M, 'coarse_dim', 0) or 0)
    if norm_b == 0:
        timings['solve'] = time.perf_counter() - start
        return x, SolveReport(0, True, np.array([0.0]), np.empty(0), np.empty(0),
                              coarse_dim=coarse_dim, timings=timings)

    r = b.copy()
    z = apply_M(r)
    p = z.copy()
    gamma = r @ z
    residuals = [1.0]
    alphas, betas = [], []
    converged = False
    for _ in range(maxit):
        Ap = apply_A(p)
        pAp = p @ Ap
        if pAp <= 0 or gamma <= 0:
            logger.warning(f"PCG breakdown after {len(alphas)} iterations (p.Ap={pAp:.3e}, r.z={gamma:.3e})")
            break
        alpha = gamma / pAp
        alphas.append(alpha)
        x += alpha * p
        r -= alpha * Ap
        residuals.append(np.linalg.norm(r) / norm_b)
        if residuals[-1] <= tol:
            # the recursive residual drifts from b - Ax; stop only on the true one
            r = b - apply_A(x)
            residuals[-1] = np.linalg.norm(r) / norm_b
            if residuals[-1] <= tol:
                converged = True
                break
            logger.debug(f"Recursive residual met the tolerance at iteration {len(alphas)}, "
                         f"true residual {residuals[-1]:.3e} did not")
        z = apply_M(r)
        gamma_new = r @ z
        beta = gamma_new / gamma
        betas.append(beta)
        gamma = gamma_new
        p = z + beta * p

    timings['solve'] = time.perf_counter() - start
    alphas, betas = np.array(alphas), np.array(betas)
    condition, lo, hi = _condition_from(alphas, betas, converged)
    report = SolveReport(len(alphas), converged, np.array(residuals), alphas, betas,
                         condition, lo, hi, coarse_dim, timings)
    if converged:
        estimate = 'n/a' if condition is None else f"{condition:.4g}"
        logger.info(f"PCG converged in {report.iterations} iterations, condition estimate {estimate}")
    else:
        logger.warning(f"PCG stopped after {report.iterations} iterations, relative residual "
                       f"{report.final_residual:.3e}")
    return x, report


def export_residual_history(report, path):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['iteration', 'relative_residual'])
        for k, res in enumerate(report.residuals):
            writer.writerow([k, f"{res:.12e}"])
