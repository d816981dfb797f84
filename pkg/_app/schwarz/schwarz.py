"""Two-level additive Schwarz preconditioners for the elasticity operator.

    M^{-1} r = sum_i R_i^T K_i^{-1} R_i r  +  R_0^T K_0^{-1} R_0 r

Level 1 solves either elasticity blocks K_i = R_i K R_i^T or, for the heat
variants, one scalar diffusion matrix per subdomain applied to the x- and
y-displacements separately. Level 2 is a GMsFEM coarse space built from
elasticity or heat eigenproblems.
"""
from dataclasses import replace
import logging
import time

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from _app.assembly.assembly import assemble_diffusion, diffusion_weight, split_blocks
from _app.coarse.coarse import (assemble_coarse_operator, build_coarse_basis_elasticity, build_coarse_basis_heat,
                                enrich_rotations)
from _app.grid.grid import build_partition_of_unity
from _app.spectral.spectral import EigenOptions, solve_neighborhoods

logger = logging.getLogger(__name__)


class PreconditionerVariant:
    def __init__(self, tag, level1, eigen_kind, eigensolver='dense', enriched=False):
        self.tag = tag
        # 'elasticity', 'heat', 'split' or None
        self.level1 = level1
        # 'elasticity', 'diffusion' or None
        self.eigen_kind = eigen_kind
        self.eigensolver = eigensolver
        self.enriched = enriched

    def __repr__(self):
        return f"PreconditionerVariant({self.tag!r})"

    @property
    def has_coarse(self):
        return self.eigen_kind is not None


VARIANTS = {
    'None': PreconditionerVariant('None', None, None),
    'EE': PreconditionerVariant('EE', 'elasticity', 'elasticity'),
    'HH': PreconditionerVariant('HH', 'heat', 'diffusion'),
    'HH+Rot': PreconditionerVariant('HH+Rot', 'heat', 'diffusion', enriched=True),
    'EH': PreconditionerVariant('EH', 'elasticity', 'diffusion'),
    'EH+Rot': PreconditionerVariant('EH+Rot', 'elasticity', 'diffusion', enriched=True),
    'EH+Rot;Rand': PreconditionerVariant('EH+Rot;Rand', 'elasticity', 'diffusion', 'randomized', True),
    'EE;Rand': PreconditionerVariant('EE;Rand', 'elasticity', 'elasticity', 'randomized'),
    'Split': PreconditionerVariant('Split', 'split', None),
}

# the seven two-level methods, in table order
TWO_LEVEL_TAGS = ('EE', 'HH', 'HH+Rot', 'EH', 'EH+Rot', 'EH+Rot;Rand', 'EE;Rand')


def parse_variant(name):
    if isinstance(name, PreconditionerVariant):
        return name
    tag = str(name).strip()
    if tag.startswith('M_'):
        tag = tag[2:]
    if tag.lower() == 'none':
        tag = 'None'
    if tag not in VARIANTS:
        raise ValueError(f"Unsupported preconditioner: {name}. Use one of {list(VARIANTS)}")
    return VARIANTS[tag]


class LocalSolve:
    def __init__(self, index, lu):
        # free-dof positions of the subdomain unknowns
        self.index = index
        self.lu = lu

    @property
    def size(self):
        return self.index.size

    def apply(self, r, out):
        out[self.index] += self.lu.solve(r[self.index])


def _factorize(matrix, label):
    try:
        return splu(sp.csc_matrix(matrix))
    except RuntimeError as err:
        logger.warning(f"Skipping {label}: local matrix is singular ({err})")
        return None


def _fixed_nodes(op):
    """Nodes whose x- and y-dofs are both constrained."""
    index = op.free_index
    n = op.n_nodes
    return np.flatnonzero((index[:n] < 0) & (index[n:] < 0))


def _subdomain_nodes(part):
    if part.n_interior == 0:
        logger.info("No interior coarse nodes: using closed coarse blocks as subdomains")
        return [part.block_nodes(b) for b in range(part.Nx * part.Ny)]
    return [part.subdomain_interior_nodes(j) for j in range(part.n_interior)]


def _elasticity_level1(op, subdomains):
    index = op.free_index
    solves = []
    for i, nodes in enumerate(subdomains):
        idx = index[np.concatenate((nodes, nodes + op.n_nodes))]
        idx = idx[idx >= 0]
        if idx.size == 0:
            continue
        lu = _factorize(op.matrix[idx][:, idx], f"subdomain {i}")
        if lu is not None:
            solves.append(LocalSolve(idx, lu))
    return solves


def _heat_level1(op, mesh, coeff, subdomains, kappa_mode):
    A = assemble_diffusion(mesh, diffusion_weight(coeff, kappa_mode)).matrix
    index = op.free_index
    n = op.n_nodes
    solves = []
    for i, nodes in enumerate(subdomains):
        ix, iy = index[nodes], index[nodes + n]
        free_x, free_y = ix >= 0, iy >= 0
        lu_x = None
        if np.any(free_x):
            sub = nodes[free_x]
            lu_x = _factorize(A[sub][:, sub], f"subdomain {i} (x-block)")
            if lu_x is not None:
                solves.append(LocalSolve(ix[free_x], lu_x))
        if np.any(free_y):
            if lu_x is not None and np.array_equal(free_x, free_y):
                lu_y = lu_x
            else:
                sub = nodes[free_y]
                lu_y = _factorize(A[sub][:, sub], f"subdomain {i} (y-block)")
            if lu_y is not None:
                solves.append(LocalSolve(iy[free_y], lu_y))
    return solves


def _split_level1(op):
    Kxx, _, _, Kyy = split_blocks(op)
    nfx = Kxx.shape[0]
    solves = []
    for label, block, idx in (('x', Kxx, np.arange(nfx)), ('y', Kyy, np.arange(nfx, op.dim))):
        if idx.size:
            lu = _factorize(block, f"{label}-block")
            if lu is not None:
                solves.append(LocalSolve(idx, lu))
    return solves


class TwoLevelPreconditioner:
    def __init__(self, variant, dim, local_solves=None, coarse=None, basis=None, selections=None, timings=None):
        self.variant = variant
        self.dim = dim
        self.local_solves = local_solves or []
        self.coarse = coarse
        self.basis = basis
        self.selections = selections or []
        self.timings = timings or {}

    @property
    def coarse_dim(self):
        return 0 if self.basis is None else self.basis.n_coarse

    @property
    def selection_counts(self):
        return np.array([sel.n_sel for sel in self.selections], dtype=np.int64)

    def selection_summary(self):
        if not self.selections:
            return ''
        counts = self.selection_counts
        rule = self.selections[0].rule
        return f"{rule}: {counts.min()}-{counts.max()} (mean {counts.mean():.2f})"

    def apply(self, r):
        r = np.asarray(r, dtype=float)
        if r.shape != (self.dim,):
            raise ValueError(f"Residual has shape {r.shape}, expected ({self.dim},)")
        if self.variant.level1 is None:
            return r.copy()
        z = np.zeros(self.dim)
        for solve in self.local_solves:
            solve.apply(r, z)
        if self.coarse is not None:
            z += self.coarse.solve(r)
        return z

    def __call__(self, r):
        return self.apply(r)


def build_preconditioner(variant, op, mesh, part, coeff, options=None, pou=None):
    variant = parse_variant(variant)
    if op.ncomp != 2 or op.n_nodes != mesh.n_nodes:
        raise ValueError("The preconditioner expects an assembled elasticity operator on this mesh")
    if (part.mesh.nx, part.mesh.ny, part.mesh.h) != (mesh.nx, mesh.ny, mesh.h):
        raise ValueError("Coarse partition was built on a different mesh")
    options = EigenOptions() if options is None else options
    timings = {'level1': 0.0, 'coarse': 0.0}

    if variant.level1 is None:
        return TwoLevelPreconditioner(variant, op.dim, timings=timings)

    # Level 1: factorize one matrix per subdomain (or per displacement block)
    start = time.perf_counter()
    if variant.level1 == 'split':
        solves = _split_level1(op)
    else:
        subdomains = _subdomain_nodes(part)
        if variant.level1 == 'elasticity':
            solves = _elasticity_level1(op, subdomains)
        else:
            solves = _heat_level1(op, mesh, coeff, subdomains, options.kappa_mode)
    timings['level1'] = time.perf_counter() - start

    basis, coarse, selections = None, None, []
    if variant.has_coarse and part.n_interior > 0:
        start = time.perf_counter()
        options = replace(options, solver=variant.eigensolver)
        pou = build_partition_of_unity(part) if pou is None else pou

        # Level 2: local eigenproblems on every neighborhood
        problems, selections = solve_neighborhoods(mesh, part, coeff, variant.eigen_kind, options,
                                                   fixed_nodes=_fixed_nodes(op))

        # Multiply the selected modes by the partition of unity
        if variant.eigen_kind == 'elasticity':
            basis = build_coarse_basis_elasticity(part, pou, problems, selections, op)
        else:
            basis = build_coarse_basis_heat(part, pou, problems, selections, op)
            if variant.enriched:
                basis = enrich_rotations(basis, part, pou, op)

        # Galerkin coarse matrix and its Cholesky factor
        coarse = assemble_coarse_operator(op, basis)
        timings['coarse'] = time.perf_counter() - start

    logger.info(f"Preconditioner {variant.tag}: {len(solves)} local solves, coarse dimension "
                f"{0 if basis is None else basis.n_coarse}, level-1 {timings['level1']:.3f}s, "
                f"coarse {timings['coarse']:.3f}s")
    return TwoLevelPreconditioner(variant, op.dim, solves, coarse, basis, list(selections), timings)


def block_split_condition_bound(nu):
    """2 / (1 - ν/(1-ν)) for the block-diagonal displacement splitting."""
    if not 0 <= nu < 0.5:
        raise ValueError(f"Poisson's ratio must lie in [0, 0.5), got {nu}")
    return 2.0 / (1.0 - nu / (1.0 - nu))
