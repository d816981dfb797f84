"""Minimum-compliance SIMP loop driven by the two-level Schwarz PCG solver.

Each iteration: filter -> SIMP -> assemble -> state solve -> sensitivities ->
OC update. The preconditioner is rebuilt according to a ReusePolicy, so the
local eigenproblems are only recomputed when the design has drifted enough
to slow the inner solver down.
"""
from dataclasses import dataclass, field, asdict
from typing import List, Optional
import csv
import logging
import os

import numpy as np
from scipy.sparse.linalg import spsolve
from tqdm import tqdm

from _app.assembly.assembly import (CoefficientField, assemble_elasticity, element_stiffness_elasticity,
                                    load_vector, opposing_forces)
from _app.assembly.density import DensityFields, build_filter, density_filter, simp_derivative, simp_modulus
from _app.grid.grid import boundary_dofs, build_coarse_partition, build_fine_mesh, \
    build_partition_of_unity
from _app.krylov.pcg import pcg_solve
from _app.schwarz.schwarz import build_preconditioner, parse_variant
from _app.spectral.spectral import EigenOptions
from utils.pgm import export_field_image

logger = logging.getLogger(__name__)


class OptimizationError(RuntimeError):
    pass


@dataclass
class ReusePolicy:
    period: int = 1                            # rebuild after this many state solves
    threshold: Optional[int] = None            # ... or once a solve needs more PCG iterations than this
    threshold_factor: Optional[float] = None   # threshold as a multiple of the first solve's count

    def __post_init__(self):
        if self.period < 1:
            raise ValueError(f"Reuse period must be at least 1, got {self.period}")
        if self.threshold is not None and self.threshold < 1:
            raise ValueError(f"Iteration threshold must be at least 1, got {self.threshold}")
        if self.threshold_factor is not None and self.threshold_factor <= 0:
            raise ValueError(f"Threshold factor must be positive, got {self.threshold_factor}")

    def limit(self, first_iterations=None):
        if self.threshold is not None:
            return self.threshold
        if self.threshold_factor is not None and first_iterations:
            return self.threshold_factor * first_iterations
        return None

    def needs_rebuild(self, age, last_iterations=None, first_iterations=None):
        if age >= self.period:
            return True
        limit = self.limit(first_iterations)
        return limit is not None and last_iterations is not None and last_iterations > limit


@dataclass
class OptimizationConfig:
    nx: int = 60
    ny: int = 60
    Nx: int = 3
    Ny: int = 3
    volume_fraction: float = 0.3
    penal: float = 3.0
    filter_radius: float = 1.5      # in element widths
    E_max: float = 1.0
    E_min: float = 1e-6
    nu: float = 0.3
    move: float = 0.2
    damping: float = 0.5
    iterations: int = 100
    variant: str = 'EH+Rot;Rand'    # any preconditioner tag, or 'direct'
    tol: float = 1e-6
    maxit: int = 2000
    force: float = 1.0
    snapshot_every: int = 0
    out_dir: Optional[str] = None
    eigen: EigenOptions = field(default_factory=EigenOptions)
    reuse: ReusePolicy = field(default_factory=ReusePolicy)

    def __post_init__(self):
        if not 0 < self.volume_fraction < 1:
            raise ValueError(f"Volume fraction must lie in (0, 1), got {self.volume_fraction}")
        if self.iterations < 1:
            raise ValueError(f"Iteration budget must be positive, got {self.iterations}")
        if not 0 < self.move <= 1:
            raise ValueError(f"Move limit must lie in (0, 1], got {self.move}")
        if self.variant != 'direct':
            parse_variant(self.variant)


@dataclass
class IterationRecord:
    iteration: int
    compliance: float
    volume: float
    pcg_iterations: int
    rebuilt: bool
    condition: Optional[float]
    build_time: float


@dataclass
class OptimizationResult:
    rho: np.ndarray = field(repr=False)
    rho_f: np.ndarray = field(repr=False)
    history: List[IterationRecord] = field(default_factory=list, repr=False)

    @property
    def build_time(self):
        return sum(rec.build_time for rec in self.history)

    @property
    def rebuilds(self):
        return sum(rec.rebuilt for rec in self.history)


def compliance_and_sensitivity(u, rho_f, mesh, penal, E_min, E_max, nu=0.3, f=None,
                               filt=None):
    """g0 and dg0/drho per element; u and f are full-length dof vectors.

    Without f, g0 = u^T K u (equal to f^T u at a converged state). With a
    filter the sensitivities are taken back to the design variables."""
    u = np.asarray(u, dtype=float)
    rho_f = np.asarray(rho_f, dtype=float)
    ue = u[mesh.element_dofs()]
    k0 = element_stiffness_elasticity(1.0, nu, mesh.h)
    ce = np.einsum('ij,jk,ik->i', ue, k0, ue)
    E = simp_modulus(rho_f, penal, E_min, E_max)
    g0 = float(np.dot(f, u)) if f is not None else float(E @ ce)
    dc = -simp_derivative(rho_f, penal, E_min, E_max) * ce
    if filt is not None:
        dc = filt.backpropagate(dc)
    return g0, dc


def oc_update(rho, dc, volumes, target, move=0.2, damping=0.5, filt=None,
              rtol=1e-9, max_doublings=64):
    """Optimality-criteria step with a log-space bisection on the multiplier so
    that volumes . filter(rho_new) hits the target."""
    rho = np.asarray(rho, dtype=float)
    dc = np.asarray(dc, dtype=float)
    volumes = np.asarray(volumes, dtype=float)
    if target <= 0 or target > volumes.sum():
        raise ValueError(f"Target volume {target} outside (0, {volumes.sum()}]")
    drive = np.maximum(-dc, 0.0)
    if not np.any(drive > 0):
        return rho.copy()
    lower, upper = np.maximum(rho - move, 0.0), np.minimum(rho + move, 1.0)
    apply_filter = filt.apply if filt is not None else (lambda x: x)

    def candidate(lam):
        return np.clip(rho * (drive / (lam * volumes)) ** damping, lower, upper)

    def volume(lam):
        return float(volumes @ apply_filter(candidate(lam)))

    lo = hi = float(drive.sum() / volumes.sum())
    doublings = 0
    while volume(lo) < target:
        lo *= 0.5
        doublings += 1
        if doublings > max_doublings:
            raise OptimizationError(f"Cannot reach target volume {target:.6g} within the move limit")
    while volume(hi) > target:
        hi *= 2.0
        doublings += 1
        if doublings > max_doublings:
            raise OptimizationError(f"Cannot reduce volume to {target:.6g} within the move limit")

    lam = np.sqrt(lo * hi)
    for _ in range(200):
        lam = np.sqrt(lo * hi)
        v = volume(lam)
        if abs(v - target) <= rtol * target or hi / lo - 1.0 < 1e-15:
            break
        if v > target:
            lo = lam
        else:
            hi = lam
    rho_new = candidate(lam)
    achieved = volume(lam)
    if abs(achieved - target) > 1e-6 * target:
        logger.warning(f"OC volume {achieved:.9g} misses target {target:.9g}")
    return rho_new


def _write_history(history, path):
    with open(path, 'w', newline='') as f:
        fieldnames = ['iteration', 'compliance', 'volume', 'pcg_iterations', 'rebuilt', 'condition',
                      'build_time']
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        for rec in history:
            row = asdict(rec)
            row['rebuilt'] = int(rec.rebuilt)
            row['condition'] = '' if rec.condition is None else f"{rec.condition:.6g}"
            row['compliance'] = f"{rec.compliance:.12e}"
            row['volume'] = f"{rec.volume:.12e}"
            row['build_time'] = f"{rec.build_time:.6f}"
            writer.writerow(row)


def _fresh_preconditioner(config, op, mesh, part, coeff, pou):
    precond = build_preconditioner(config.variant, op, mesh, part, coeff, config.eigen, pou)
    return precond, sum(precond.timings.values())


def optimize(config, progress=True):
    # Fixed geometry: meshes, partition of unity, filter, supports and load
    mesh = build_fine_mesh(config.nx, config.ny)
    part = build_coarse_partition(mesh, config.Nx, config.Ny)
    pou = build_partition_of_unity(part)
    filt = build_filter(mesh, config.filter_radius * mesh.h)
    bc = boundary_dofs(mesh)
    load = opposing_forces(mesh, magnitude=config.force)
    volumes = np.full(mesh.n_elements, mesh.h * mesh.h)
    target = config.volume_fraction * volumes.sum()
    direct = config.variant == 'direct'
    if config.out_dir:
        os.makedirs(config.out_dir, exist_ok=True)

    # Uniform start at the volume bound
    rho = np.full(mesh.n_elements, target / volumes.sum())
    precond, age, last_iters, first_iters = None, 0, None, None
    history = []

    for it in tqdm(range(config.iterations), desc='Optimizing', disable=not progress):
        # Filter, interpolate and assemble the state problem
        fields = DensityFields(rho, density_filter(rho, filt), volumes, target, config.penal)
        coeff = CoefficientField(fields.modulus(config.E_min, config.E_max), nu=config.nu,
                                 E_min=config.E_min, E_max=config.E_max)
        op = assemble_elasticity(mesh, coeff, bc)
        f = load_vector(mesh, load, op)

        # State solve, rebuilding the preconditioner when the policy asks for it
        rebuilt, build_time, pcg_iters, condition = False, 0.0, 0, None
        if direct:
            x = spsolve(op.matrix.tocsc(), f)
        else:
            if precond is None or config.reuse.needs_rebuild(age, last_iters, first_iters):
                precond, build_time = _fresh_preconditioner(config, op, mesh, part, coeff, pou)
                age, rebuilt = 0, True
            x, report = pcg_solve(op, f, precond, config.tol, config.maxit)
            if not report.converged:
                if rebuilt:
                    raise OptimizationError(f"State solve at iteration {it} did not converge in "
                                            f"{config.maxit} PCG iterations with a fresh preconditioner")
                logger.warning(f"Iteration {it}: stale preconditioner failed, rebuilding")
                precond, extra = _fresh_preconditioner(config, op, mesh, part, coeff, pou)
                age, rebuilt, build_time = 0, True, build_time + extra
                x, report = pcg_solve(op, f, precond, config.tol, config.maxit)
                if not report.converged:
                    raise OptimizationError(f"State solve at iteration {it} did not converge after "
                                            f"a forced preconditioner rebuild")
            age += 1
            pcg_iters, condition = report.iterations, report.condition
            last_iters = pcg_iters
            if first_iters is None:
                first_iters = pcg_iters

        # Compliance and filtered sensitivities
        g0, dc = compliance_and_sensitivity(op.extend(x), fields.rho_f, mesh, config.penal, config.E_min,
                                            config.E_max, config.nu, op.extend(f), filt)
        record = IterationRecord(it, g0, fields.volume, pcg_iters, rebuilt, condition, build_time)
        history.append(record)
        logger.debug(f"Iteration {it}: compliance {g0:.6e}, volume {record.volume:.6f}, "
                     f"PCG {pcg_iters}{' (rebuilt)' if rebuilt else ''}")

        if config.out_dir and config.snapshot_every and it % config.snapshot_every == 0:
            export_field_image(fields.rho_f, mesh.nx, mesh.ny,
                               os.path.join(config.out_dir, f'density_{it:04d}.pgm'))

        # Design update
        rho = oc_update(rho, dc, volumes, target, config.move, config.damping, filt)

    rho_f = density_filter(rho, filt)
    result = OptimizationResult(rho, rho_f, history)
    logger.info(f"Optimization finished: compliance {history[0].compliance:.6e} -> {history[-1].compliance:.6e}, "
                f"{result.rebuilds} preconditioner builds, {result.build_time:.2f}s building")

    # Outputs: history table, final design image and matrix
    if config.out_dir:
        _write_history(history, os.path.join(config.out_dir, 'iterations.csv'))
        export_field_image(rho_f, mesh.nx, mesh.ny, os.path.join(config.out_dir, 'design.pgm'))
        np.savetxt(os.path.join(config.out_dir, 'design.txt'), rho_f.reshape(mesh.ny, mesh.nx), fmt='%.17g')
    return result
