"""Command-line front end.

    python app.py gen-coeff --layout channels-and-inclusions --contrast 1e6 --out coeff.txt
    python app.py solve --variant EH+Rot --contrast 1e4 --out-dir output/solve
    python app.py bench --contrasts 1,1e2,1e4,1e6 --workers 4 --out-dir output/bench
    python app.py optimize --iterations 100 --reuse-period 10 --out-dir output/topopt

Settings come from the dataclass defaults, then the --config INI file, then
the flags given on the command line.
"""
import argparse
import json
import logging
import os
import sys

import numpy as np

from _app.assembly.assembly import (assemble_elasticity, load_coefficient, load_vector, opposing_forces,
                                    save_coefficient)
from _app.bench.benchmark import BenchmarkConfig, run_benchmark
from _app.bench.coefficients import LAYOUTS, generate_coefficient, solid_mask
from _app.coarse.coarse import CoarseSpaceError
from _app.grid.grid import boundary_dofs, build_coarse_partition, build_fine_mesh
from _app.krylov.pcg import PreconditionerError, export_residual_history, pcg_solve
from _app.schwarz.schwarz import VARIANTS, build_preconditioner
from _app.spectral.spectral import EigenOptions
from _app.topopt.topopt import OptimizationConfig, OptimizationError, ReusePolicy, optimize
from utils.config import dataclass_defaults, merge_options, read_config, section_values
from utils.logging_config import setup_logging
from utils.pgm import export_field_image

logger = logging.getLogger(__name__)

BENCH = dataclass_defaults(BenchmarkConfig)
EIGEN = dataclass_defaults(EigenOptions)
OPT = dataclass_defaults(OptimizationConfig)
REUSE = dataclass_defaults(ReusePolicy)

SOLVE_DEFAULTS = dict(nx=BENCH['nx'], ny=BENCH['ny'], Nx=BENCH['Nx'], Ny=BENCH['Ny'], nu=BENCH['nu'],
                      layout=BENCH['layout'], contrast=1e4, coefficient=None, variant='EH+Rot',
                      tol=BENCH['tol'], maxit=BENCH['maxit'], force=BENCH['force'], out_dir=None)
GEN_DEFAULTS = dict(nx=BENCH['nx'], ny=BENCH['ny'], nu=BENCH['nu'], layout=BENCH['layout'], contrast=1e6)
OPT_DEFAULTS = dict({k: v for k, v in OPT.items() if k not in ('eigen', 'reuse')},
                    reuse_period=REUSE['period'], reuse_threshold=REUSE['threshold'],
                    reuse_factor=REUSE['threshold_factor'])


def _csv_list(cast):
    def parse(text):
        return tuple(cast(item.strip()) for item in text.split(',') if item.strip())
    return parse


def _add_mesh_args(parser, defaults, coarse=True):
    parser.add_argument('--nx', type=int, help=f"Fine elements along x (default: {defaults['nx']})")
    parser.add_argument('--ny', type=int, help=f"Fine elements along y (default: {defaults['ny']})")
    if coarse:
        parser.add_argument('--Nx', type=int, help=f"Coarse blocks along x (default: {defaults['Nx']})")
        parser.add_argument('--Ny', type=int, help=f"Coarse blocks along y (default: {defaults['Ny']})")
    parser.add_argument('--nu', type=float, help=f"Poisson's ratio (default: {defaults['nu']})")


def _add_eigen_args(parser):
    parser.add_argument('--n-max', dest='n_max', type=int,
                        help=f"Modes per neighborhood (default: {EIGEN['n_max']})")
    parser.add_argument('--rule', choices=('gap', 'fixed'),
                        help=f"Mode selection for heat eigenproblems (default: {EIGEN['rule']})")
    parser.add_argument('--snapshots', type=int, help="Randomized snapshots (default: requested modes + 5)")
    parser.add_argument('--seed', type=int, help=f"Random seed (default: {EIGEN['seed']})")
    parser.add_argument('--power-iterations', dest='power_iterations', type=int,
                        help=f"Power iterations of the randomized solver (default: {EIGEN['power_iterations']})")
    parser.add_argument('--kappa-mode', dest='kappa_mode', choices=('modulus', 'trace'),
                        help=f"Diffusion weight of heat problems (default: {EIGEN['kappa_mode']})")


def _add_solver_args(parser, variant_default):
    parser.add_argument('--variant', help=f"Preconditioner, one of {list(VARIANTS)} (default: {variant_default})")
    parser.add_argument('--tol', type=float, help=f"Relative residual tolerance (default: {BENCH['tol']})")
    parser.add_argument('--maxit', type=int, help=f"PCG iteration cap (default: {BENCH['maxit']})")


def build_parser():
    parser = argparse.ArgumentParser(description='Two-level Schwarz solvers for high-contrast elasticity.')
    parser.add_argument('--config', type=str, help='INI file with [mesh], [eigen], [solver], [bench], '
                                                   '[optimize] and [output] sections')
    parser.add_argument('--log-level', type=str, default='INFO', help='Logging level (default: INFO)')
    parser.add_argument('--log-file', type=str, help='Also write the log to this file')
    parser.add_argument('--workers', type=int, default=1, help='Worker processes (default: 1)')
    sub = parser.add_subparsers(dest='command', required=True)

    gen = sub.add_parser('gen-coeff', help='Write a synthetic coefficient field')
    _add_mesh_args(gen, GEN_DEFAULTS, coarse=False)
    gen.add_argument('--layout', choices=LAYOUTS, help=f"Layout (default: {GEN_DEFAULTS['layout']})")
    gen.add_argument('--contrast', type=float, help=f"E_max / E_min (default: {GEN_DEFAULTS['contrast']:g})")
    gen.add_argument('--out', type=str, required=True, help='Plain-text output matrix')
    gen.add_argument('--image', type=str, help='Optional PGM preview')

    solve = sub.add_parser('solve', help='One preconditioned solve')
    _add_mesh_args(solve, SOLVE_DEFAULTS)
    _add_eigen_args(solve)
    _add_solver_args(solve, SOLVE_DEFAULTS['variant'])
    solve.add_argument('--layout', choices=LAYOUTS, help=f"Layout (default: {SOLVE_DEFAULTS['layout']})")
    solve.add_argument('--contrast', type=float, help=f"E_max / E_min (default: {SOLVE_DEFAULTS['contrast']:g})")
    solve.add_argument('--coefficient', type=str, help='Read E from a plain-text matrix instead of a layout')
    solve.add_argument('--out-dir', dest='out_dir', type=str, help='Residual history and summary directory')
    solve.add_argument('--export-basis', action='store_true', help='Also write the coarse basis R_0^T')

    bench = sub.add_parser('bench', help='Contrast sweep over preconditioners')
    _add_mesh_args(bench, BENCH)
    _add_eigen_args(bench)
    bench.add_argument('--tol', type=float, help=f"Relative residual tolerance (default: {BENCH['tol']})")
    bench.add_argument('--maxit', type=int, help=f"PCG iteration cap (default: {BENCH['maxit']})")
    bench.add_argument('--layout', choices=LAYOUTS, help=f"Layout (default: {BENCH['layout']})")
    bench.add_argument('--contrasts', type=_csv_list(float),
                       help=f"Comma-separated contrasts (default: {','.join(f'{c:g}' for c in BENCH['contrasts'])})")
    bench.add_argument('--variants', type=_csv_list(str),
                       help=f"Comma-separated variants (default: {','.join(BENCH['variants'])})")
    bench.add_argument('--check-direct', dest='check_direct', action='store_true', default=None,
                       help='Compare every converged solve with a direct factorization')
    bench.add_argument('--out-dir', dest='out_dir', type=str, help='Output directory (default: output/bench)')

    opt = sub.add_parser('optimize', help='SIMP compliance minimization')
    _add_mesh_args(opt, OPT_DEFAULTS)
    _add_eigen_args(opt)
    _add_solver_args(opt, OPT['variant'])
    opt.add_argument('--iterations', type=int, help=f"Optimization iterations (default: {OPT['iterations']})")
    opt.add_argument('--volume-fraction', dest='volume_fraction', type=float,
                     help=f"Volume fraction (default: {OPT['volume_fraction']})")
    opt.add_argument('--penal', type=float, help=f"SIMP exponent (default: {OPT['penal']})")
    opt.add_argument('--filter-radius', dest='filter_radius', type=float,
                     help=f"Filter radius in element widths (default: {OPT['filter_radius']})")
    opt.add_argument('--E-min', dest='E_min', type=float, help=f"Void modulus (default: {OPT['E_min']:g})")
    opt.add_argument('--move', type=float, help=f"OC move limit (default: {OPT['move']})")
    opt.add_argument('--damping', type=float, help=f"OC damping (default: {OPT['damping']})")
    opt.add_argument('--reuse-period', dest='reuse_period', type=int,
                     help=f"Rebuild the preconditioner every s iterations (default: {REUSE['period']})")
    opt.add_argument('--reuse-threshold', dest='reuse_threshold', type=int,
                     help='Rebuild once a solve needs more PCG iterations than this')
    opt.add_argument('--reuse-factor', dest='reuse_factor', type=float,
                     help="Threshold as a multiple of the first solve's PCG iterations")
    opt.add_argument('--snapshot-every', dest='snapshot_every', type=int,
                     help='Density PGM every k iterations (default: off)')
    opt.add_argument('--out-dir', dest='out_dir', type=str, help='Output directory (default: output/topopt)')
    return parser


def _resolve(args, cfg, sections, defaults):
    file_values = {}
    for section in sections:
        file_values.update(section_values(cfg, section, defaults))
    cli_values = {k: v for k, v in vars(args).items() if k in defaults}
    return merge_options(defaults, file_values, cli_values)


def _eigen_options(args, cfg):
    values = _resolve(args, cfg, ('eigen',), EIGEN)
    values['snapshots'] = values.get('snapshots')
    return EigenOptions(**values)


def run_gen_coeff(args, cfg):
    values = _resolve(args, cfg, ('mesh', 'bench'), GEN_DEFAULTS)
    mesh = build_fine_mesh(values['nx'], values['ny'])
    coeff = generate_coefficient(values['layout'], mesh, values['contrast'], nu=values['nu'])
    folder = os.path.dirname(args.out)
    if folder:
        os.makedirs(folder, exist_ok=True)
    save_coefficient(coeff, mesh, args.out)
    if args.image:
        export_field_image(np.log10(coeff.E), mesh.nx, mesh.ny, args.image)
    logger.info(f"Coefficient {values['layout']} ({mesh.nx}x{mesh.ny}, contrast {coeff.contrast:g}) saved to {args.out}")


def run_solve(args, cfg):
    values = _resolve(args, cfg, ('mesh', 'solver', 'bench', 'output'), SOLVE_DEFAULTS)

    # Mesh, coefficient, operator and load
    mesh = build_fine_mesh(values['nx'], values['ny'])
    part = build_coarse_partition(mesh, values['Nx'], values['Ny'])
    if values['coefficient']:
        coeff = load_coefficient(values['coefficient'], nu=values['nu'])
        if coeff.E.size != mesh.n_elements:
            raise ValueError(f"Coefficient file has {coeff.E.size} values for a {mesh.nx}x{mesh.ny} mesh")
        solid = coeff.E >= coeff.E_max
    else:
        coeff = generate_coefficient(values['layout'], mesh, values['contrast'], nu=values['nu'])
        solid = solid_mask(values['layout'], mesh)
    op = assemble_elasticity(mesh, coeff, boundary_dofs(mesh))
    f = load_vector(mesh, opposing_forces(mesh, solid, values['force']), op)

    # Preconditioned solve
    precond = build_preconditioner(values['variant'], op, mesh, part, coeff, _eigen_options(args, cfg))
    x, report = pcg_solve(op, f, precond, values['tol'], values['maxit'], check_symmetry=True)
    condition = 'n/a' if report.condition is None else f"{report.condition:.4g}"
    status = 'converged' if report.converged else 'not converged'
    logger.info(f"{precond.variant.tag}: {report.iterations} iterations ({status}), condition {condition}, "
                f"coarse dimension {precond.coarse_dim}")

    # Residual history, optional coarse basis and summary
    if values['out_dir']:
        out_dir = values['out_dir']
        os.makedirs(out_dir, exist_ok=True)
        export_residual_history(report, os.path.join(out_dir, 'residuals.csv'))
        if args.export_basis and precond.basis is not None:
            precond.basis.export(os.path.join(out_dir, 'coarse_basis.txt'))
        summary = {
            'variant': precond.variant.tag,
            'iterations': report.iterations,
            'converged': report.converged,
            'condition': report.condition,
            'ritz_min': report.ritz_min,
            'ritz_max': report.ritz_max,
            'coarse_dim': precond.coarse_dim,
            'overlap': part.overlap,
            'selection': precond.selection_summary(),
            'timings': report.timings,
        }
        with open(os.path.join(out_dir, 'summary.json'), 'w') as json_file:
            json.dump(summary, json_file, indent=4)
        logger.info(f"Solve results written to {out_dir}")
    return report


def run_bench(args, cfg):
    defaults = {k: v for k, v in BENCH.items() if k != 'eigen'}
    defaults['out_dir'] = 'output/bench'
    values = _resolve(args, cfg, ('mesh', 'solver', 'bench', 'output'), defaults)
    eigen = _eigen_options(args, cfg)
    config = BenchmarkConfig(eigen=eigen, **values)
    return run_benchmark(config)


def run_optimize(args, cfg):
    defaults = dict(OPT_DEFAULTS, out_dir='output/topopt')
    values = _resolve(args, cfg, ('mesh', 'solver', 'optimize', 'output'), defaults)
    reuse = ReusePolicy(values.pop('reuse_period'), values.pop('reuse_threshold'), values.pop('reuse_factor'))
    config = OptimizationConfig(eigen=_eigen_options(args, cfg), reuse=reuse, **values)
    return optimize(config)


COMMANDS = {
    'gen-coeff': run_gen_coeff,
    'solve': run_solve,
    'bench': run_bench,
    'optimize': run_optimize,
}


def main(argv=None):
    # Parse command-line arguments
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        # Set up logging
        setup_logging(args.log_level, args.log_file)
        if args.workers < 1:
            raise ValueError(f"--workers must be at least 1, got {args.workers}")

        # Load the run file, then dispatch the subcommand
        cfg = read_config(args.config)
        COMMANDS[args.command](args, cfg)
    except (ValueError, OSError, CoarseSpaceError, PreconditionerError, OptimizationError) as err:
        logger.error(f"{args.command} failed: {err}")
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
