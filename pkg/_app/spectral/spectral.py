"""Local generalized eigenproblems K^l phi = lambda M^l phi on coarse
neighborhoods: dense reference solver, randomized snapshot solver and mode
selection.
"""
from dataclasses import dataclass
from multiprocessing import Pool
from typing import Optional
import logging

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from _app.assembly.assembly import assemble_local, diffusion_weight

logger = logging.getLogger(__name__)

KINDS = ('elasticity', 'diffusion')


class LocalEigProblem:
    def __init__(self, K, M, kind, dofs, dof_nodes, dof_comp, coords, center, index=-1):
        self.K = K
        self.M = M
        self.kind = kind
        # global dof ids of the local unknowns, their nodes, components and coordinates
        self.dofs = dofs
        self.dof_nodes = dof_nodes
        self.dof_comp = dof_comp
        self.coords = coords
        self.center = center
        self.index = index

    @property
    def dim(self):
        return self.K.shape[0]


class EigSelection:
    def __init__(self, eigenvalues, eigenvectors, n_sel, n_max, rule, kind):
        self.eigenvalues = eigenvalues
        self.eigenvectors = eigenvectors
        self.n_sel = n_sel
        self.n_max = n_max
        self.rule = rule
        self.kind = kind

    @property
    def selected_values(self):
        return self.eigenvalues[:self.n_sel]

    @property
    def selected_vectors(self):
        return self.eigenvectors[:, :self.n_sel]


def rigid_body_modes(coords, comp, center=(0.0, 0.0)):
    """Columns: x-translation, y-translation, rotation [-(x2 - c2), x1 - c1]."""
    coords = np.asarray(coords, dtype=float)
    comp = np.asarray(comp)
    dx = coords[:, 0] - center[0]
    dy = coords[:, 1] - center[1]
    R = np.zeros((comp.size, 3))
    R[:, 0] = comp == 0
    R[:, 1] = comp == 1
    R[:, 2] = np.where(comp == 0, -dy, dx)
    return R


def local_kernel(prob):
    if prob.kind == 'elasticity':
        return rigid_body_modes(prob.coords, prob.dof_comp, prob.center)
    return np.ones((prob.dim, 1))


def _make_problem(mesh, coeff, elements, kind, fixed_nodes, kappa_mode, center, index):
    if kind not in KINDS:
        raise ValueError(f"Unsupported eigenproblem kind: {kind}. Use one of {KINDS}")
    weights = coeff.E if kind == 'elasticity' else diffusion_weight(coeff, kappa_mode)
    loc = assemble_local(mesh, elements, weights[elements], kind, nu=coeff.nu, fixed_nodes=fixed_nodes)
    coords = mesh.node_coords()[loc.dof_nodes]
    return LocalEigProblem(loc.K, loc.M, kind, loc.dofs, loc.dof_nodes, loc.dof_comp, coords,
                           np.asarray(center, dtype=float), index)


def build_local_problem(mesh, part, coeff, j, kind, fixed_nodes=None, kappa_mode='modulus'):
    """Eigenproblem on ω_j: Neumann on ∂ω_j, Dirichlet where ω_j meets fixed nodes."""
    center = part.coarse_node_coords()[j]
    return _make_problem(mesh, coeff, part.neighborhoods[j], kind, fixed_nodes, kappa_mode, center, j)


def build_patch_problem(mesh, coeff, kind, fixed_nodes=None, kappa_mode='modulus'):
    """The whole mesh treated as one neighborhood (pure Neumann unless nodes are fixed)."""
    center = (0.5 * mesh.nx * mesh.h, 0.5 * mesh.ny * mesh.h)
    return _make_problem(mesh, coeff, np.arange(mesh.n_elements), kind, fixed_nodes, kappa_mode,
                         center, -1)


def solve_local_eig_dense(prob, k):
    n = prob.dim
    if not 1 <= k <= n:
        raise ValueError(f"Requested {k} eigenpairs of a {n}-dimensional problem")
    try:
        vals, vecs = la.eigh(prob.K.toarray(), prob.M.toarray(), subset_by_index=[0, k - 1])
    except la.LinAlgError as err:
        raise ValueError(f"Local mass matrix of neighborhood {prob.index} is singular") from err
    return EigSelection(vals, vecs, k, k, 'all', prob.kind)


def _orthonormal(W, rcond=1e-10):
    norms = np.linalg.norm(W, axis=0)
    W = W[:, norms > 0] / norms[norms > 0]
    return la.orth(W, rcond=rcond)


def solve_local_eig_randomized(prob, k, n_snapshots=None, seed=0,
                               power_iterations=2):
    """Rayleigh-Ritz on span{snapshots} ∪ kernel.

    Snapshots solve (K + σM) u = M f for uniform random f that is M-orthogonal
    to the local kernel (RBMs, or constants for diffusion)."""
    n = prob.dim
    m = k + 5 if n_snapshots is None else int(n_snapshots)
    if m < k:
        raise ValueError(f"Snapshot count {m} is below the requested {k} modes")
    if not 1 <= k <= n:
        raise ValueError(f"Requested {k} eigenpairs of a {n}-dimensional problem")

    K, M = prob.K, prob.M
    Z = local_kernel(prob)
    MZ = np.asarray(M @ Z)
    G = Z.T @ MZ

    def project(X):
        return X - Z @ la.solve(G, MZ.T @ X, assume_a='pos')

    rng = np.random.default_rng(seed)
    F = project(rng.uniform(-0.5, 0.5, size=(n, m)))

    sigma = 1e-8 * K.diagonal().sum() / n
    lu = splu(sp.csc_matrix(K + sigma * M))
    U = lu.solve(np.asarray(M @ F))
    for _ in range(power_iterations):
        U = project(_orthonormal(U))
        U = lu.solve(np.asarray(M @ U))

    W = _orthonormal(np.hstack((Z, U)))
    if W.shape[1] < Z.shape[1] + m:
        logger.warning(f"Neighborhood {prob.index}: snapshot basis shrank to {W.shape[1]} "
                       f"of {Z.shape[1] + m} vectors")

    Kr = W.T @ np.asarray(K @ W)
    Mr = W.T @ np.asarray(M @ W)
    Kr = 0.5 * (Kr + Kr.T)
    Mr = 0.5 * (Mr + Mr.T)
    kk = min(k, W.shape[1])
    vals, vecs = la.eigh(Kr, Mr, subset_by_index=[0, kk - 1])
    return EigSelection(vals, W @ vecs, kk, kk, 'all', prob.kind)


def select_modes(sel, n_max, rule='fixed'):
    if n_max < 1:
        raise ValueError(f"N_max must be at least 1, got {n_max}")
    available = sel.eigenvalues.size
    if rule == 'fixed':
        n_sel = min(n_max, available)
    elif rule == 'gap':
        if sel.kind == 'elasticity':
            raise ValueError("Gap selection is only defined for diffusion eigenproblems")
        m = min(n_max + 1, available)
        if m < 2:
            n_sel = 1
        else:
            lam = np.maximum(sel.eigenvalues[:m], 0.0)
            shift = 1e-2 * lam[-1] if lam[-1] > 0 else np.finfo(float).tiny
            lam = lam + shift
            n_sel = int(np.argmax(lam[1:] / lam[:-1])) + 1
    else:
        raise ValueError(f"Unsupported selection rule: {rule}")
    return EigSelection(sel.eigenvalues, sel.eigenvectors, max(1, n_sel), int(n_max), rule, sel.kind)


@dataclass
class EigenOptions:
    n_max: int = 6
    rule: str = 'gap'            # selection for diffusion eigenproblems; elasticity is always 'fixed'
    solver: str = 'dense'        # 'dense' | 'randomized'
    snapshots: Optional[int] = None
    seed: int = 0
    power_iterations: int = 2
    kappa_mode: str = 'modulus'
    workers: int = 1

    def __post_init__(self):
        if self.n_max < 1:
            raise ValueError(f"n_max must be at least 1, got {self.n_max}")
        if self.rule not in ('gap', 'fixed'):
            raise ValueError(f"Unsupported selection rule: {self.rule}")
        if self.solver not in ('dense', 'randomized'):
            raise ValueError(f"Unsupported eigensolver: {self.solver}")


def _solve_and_select(args):
    prob, options = args
    rule = 'fixed' if prob.kind == 'elasticity' else options.rule
    k = min(options.n_max + (1 if rule == 'gap' else 0), prob.dim)
    if options.solver == 'randomized':
        sel = solve_local_eig_randomized(prob, k, options.snapshots, seed=[options.seed, prob.index],
                                         power_iterations=options.power_iterations)
    else:
        sel = solve_local_eig_dense(prob, k)
    sel = select_modes(sel, options.n_max, rule)
    logger.debug(f"Neighborhood {prob.index} ({prob.kind}, {options.solver}): n_sel={sel.n_sel}, "
                 f"lambda={np.array2string(sel.eigenvalues[:sel.n_sel + 1], precision=3)}")
    return sel


def solve_neighborhoods(mesh, part, coeff, kind, options, fixed_nodes=None):
    problems = [build_local_problem(mesh, part, coeff, j, kind, fixed_nodes, options.kappa_mode)
                for j in range(part.n_interior)]
    jobs = [(prob, options) for prob in problems]
    if options.workers > 1 and len(jobs) > 1:
        with Pool(options.workers) as pool:
            selections = pool.map(_solve_and_select, jobs)
    else:
        selections = [_solve_and_select(job) for job in jobs]
    return problems, selections
