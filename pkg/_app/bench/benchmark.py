"""Contrast sweeps: every preconditioner against every contrast on one frozen
layout, reported as per-contrast tables plus iteration and condition
summaries.

The tables hold only deterministic quantities. Wall-clock timings and the
direct-solver error check go to diagnostics.csv.
"""
from dataclasses import dataclass, field, asdict, replace
from multiprocessing import Pool
from typing import Dict, Optional, Tuple
import csv
import json
import logging
import os

import numpy as np
from scipy.sparse.linalg import spsolve
from tqdm import tqdm

from _app.assembly.assembly import assemble_elasticity, load_vector, opposing_forces
from _app.bench.coefficients import LAYOUTS, LAYOUT_VERSION, generate_coefficient, solid_mask
from _app.grid.grid import boundary_dofs, build_coarse_partition, build_fine_mesh, build_partition_of_unity
from _app.krylov.pcg import pcg_solve
from _app.schwarz.schwarz import TWO_LEVEL_TAGS, build_preconditioner, parse_variant
from _app.spectral.spectral import EigenOptions

logger = logging.getLogger(__name__)


@dataclass
class BenchmarkConfig:
    nx: int = 100
    ny: int = 100
    Nx: int = 10
    Ny: int = 10
    nu: float = 0.3
    layout: str = 'channels-and-inclusions'
    contrasts: Tuple[float, ...] = (1.0, 1e2, 1e4, 1e6)
    variants: Tuple[str, ...] = TWO_LEVEL_TAGS
    tol: float = 1e-6
    maxit: int = 2000
    force: float = 1.0
    check_direct: bool = False
    workers: int = 1
    out_dir: Optional[str] = None
    eigen: EigenOptions = field(default_factory=EigenOptions)

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ValueError(f"Unsupported layout: {self.layout}. Use one of {list(LAYOUTS)}")
        self.variants = tuple(parse_variant(v).tag for v in self.variants)
        self.contrasts = tuple(float(eta) for eta in self.contrasts)
        if any(eta < 1 for eta in self.contrasts):
            raise ValueError(f"Contrasts must be at least 1, got {self.contrasts}")

    @property
    def rows(self):
        return ('None',) + tuple(v for v in self.variants if v != 'None')


@dataclass
class CellResult:
    contrast: float
    variant: str
    iterations: int
    converged: bool
    condition: Optional[float]
    coarse_dim: int
    selection: str = ''
    error: Optional[float] = None
    timings: Dict[str, float] = field(default_factory=dict)


def contrast_label(eta):
    return f"{eta:g}"


def row_label(tag):
    return 'None' if tag == 'None' else f"M_{tag}"


def format_iterations(cell, maxit):
    return str(cell.iterations) if cell.converged else f">{maxit}"


def format_condition(cell):
    return '' if cell.condition is None else f"{cell.condition:.4g}"


def _setup(config, eta):
    mesh = build_fine_mesh(config.nx, config.ny)
    part = build_coarse_partition(mesh, config.Nx, config.Ny)
    coeff = generate_coefficient(config.layout, mesh, eta, nu=config.nu)
    op = assemble_elasticity(mesh, coeff, boundary_dofs(mesh))
    load = opposing_forces(mesh, solid_mask(config.layout, mesh), config.force)
    return mesh, part, coeff, op, load_vector(mesh, load, op)


def run_cell(config, eta, tag):
    # Rebuild the problem in this process
    mesh, part, coeff, op, f = _setup(config, eta)

    # Preconditioner and PCG solve
    precond = build_preconditioner(tag, op, mesh, part, coeff, config.eigen, build_partition_of_unity(part))
    x, report = pcg_solve(op, f, precond, config.tol, config.maxit)

    # Optional comparison with a sparse direct solve
    error = None
    if config.check_direct and report.converged:
        x_direct = spsolve(op.matrix.tocsc(), f)
        error = float(np.linalg.norm(x - x_direct) / np.linalg.norm(x_direct))
        if error > 1e-5:
            logger.warning(f"{row_label(tag)} at contrast {contrast_label(eta)}: error {error:.2e} "
                           f"against the direct solve")
    return CellResult(eta, tag, report.iterations, report.converged, report.condition, precond.coarse_dim,
                      precond.selection_summary(), error, dict(report.timings))


def _run_job(args):
    config, eta, tag = args
    return run_cell(config, eta, tag)


def write_contrast_table(cells, path, maxit):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['Preconditioner', 'Iterations', 'Condition', 'Coarse dim.', 'Selection'])
        for cell in cells:
            writer.writerow([row_label(cell.variant), format_iterations(cell, maxit), format_condition(cell),
                             cell.coarse_dim, cell.selection])


def write_summary(cells, config, path, value):
    lookup = {(c.variant, c.contrast): c for c in cells}
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['Preconditioner'] + [f"eta={contrast_label(eta)}" for eta in config.contrasts])
        for tag in config.rows:
            writer.writerow([row_label(tag)] + [value(lookup[(tag, eta)]) for eta in config.contrasts])


def write_diagnostics(cells, path):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['contrast', 'preconditioner', 'level1_s', 'coarse_s', 'solve_s', 'direct_error'])
        for c in cells:
            writer.writerow([contrast_label(c.contrast), row_label(c.variant),
                             f"{c.timings.get('level1', 0.0):.4f}", f"{c.timings.get('coarse', 0.0):.4f}",
                             f"{c.timings.get('solve', 0.0):.4f}", '' if c.error is None else f"{c.error:.3e}"])


def write_outputs(cells, config, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    for eta in config.contrasts:
        rows = [c for c in cells if c.contrast == eta]
        write_contrast_table(rows, os.path.join(out_dir, f"contrast_{contrast_label(eta)}.csv"), config.maxit)
    write_summary(cells, config, os.path.join(out_dir, 'summary_iterations.csv'),
                  lambda c: format_iterations(c, config.maxit))
    write_summary(cells, config, os.path.join(out_dir, 'summary_condition.csv'), format_condition)
    write_diagnostics(cells, os.path.join(out_dir, 'diagnostics.csv'))
    meta = asdict(config)
    meta['layout_version'] = LAYOUT_VERSION
    with open(os.path.join(out_dir, 'config.json'), 'w') as f:
        json.dump(meta, f, indent=4)
    logger.info(f"Benchmark tables written to {out_dir}")


def run_benchmark(config, progress=True):
    """All (contrast, preconditioner) cells in row-major order: contrasts outer."""
    jobs = [(config, eta, tag) for eta in config.contrasts for tag in config.rows]
    if config.workers > 1:
        # cells already run in parallel; keep the eigenproblems inside each cell serial
        inner = replace(config, eigen=replace(config.eigen, workers=1))
        jobs = [(inner, eta, tag) for _, eta, tag in jobs]
        with Pool(config.workers) as pool:
            cells = list(tqdm(pool.imap(_run_job, jobs), total=len(jobs), desc='Benchmark cells',
                              disable=not progress))
    else:
        cells = [_run_job(job) for job in tqdm(jobs, desc='Benchmark cells', disable=not progress)]
    if config.out_dir:
        write_outputs(cells, config, config.out_dir)
    return cells
