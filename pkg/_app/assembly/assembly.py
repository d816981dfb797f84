"""Q1 assembly of the plane-stress elasticity operator, the scalar diffusion
operator and the weighted mass matrices on a FineMesh.

Element matrices are computed once per (nu, h) for unit modulus and scaled by
the element coefficient, so the assembled operators are linear in E exactly.
Dirichlet conditions are imposed by eliminating dofs.
"""
from functools import lru_cache
import logging

import numpy as np
import scipy.sparse as sp

from _app.grid.grid import nearest_element

logger = logging.getLogger(__name__)

_GAUSS = np.array([-1.0, 1.0]) / np.sqrt(3.0)
_XI = np.array([-1.0, 1.0, 1.0, -1.0])
_ETA = np.array([-1.0, -1.0, 1.0, 1.0])


def _shape_gradients(xi, eta, h):
    dN_dxi = 0.25 * _XI * (1 + _ETA * eta)
    dN_deta = 0.25 * _ETA * (1 + _XI * xi)
    return dN_dxi * 2.0 / h, dN_deta * 2.0 / h


def _shape_values(xi, eta):
    return 0.25 * (1 + _XI * xi) * (1 + _ETA * eta)


def plane_stress_matrix(nu):
    return np.array([[1.0, nu, 0.0],
                     [nu, 1.0, 0.0],
                     [0.0, 0.0, 0.5 * (1.0 - nu)]]) / (1.0 - nu ** 2)


def _check_poisson(nu):
    if not 0.0 <= nu < 0.5:
        raise ValueError(f"Poisson ratio must lie in [0, 0.5), got {nu}")


@lru_cache(maxsize=None)
def _unit_elasticity(nu, h):
    D = plane_stress_matrix(nu)
    ke = np.zeros((8, 8))
    for xi in _GAUSS:
        for eta in _GAUSS:
            dNx, dNy = _shape_gradients(xi, eta, h)
            B = np.zeros((3, 8))
            B[0, 0::2] = dNx
            B[1, 1::2] = dNy
            B[2, 0::2] = dNy
            B[2, 1::2] = dNx
            ke += B.T @ D @ B * (h * h / 4.0)
    ke = 0.5 * (ke + ke.T)
    ke.setflags(write=False)
    return ke


@lru_cache(maxsize=None)
def _unit_diffusion(h):
    ke = np.zeros((4, 4))
    for xi in _GAUSS:
        for eta in _GAUSS:
            dNx, dNy = _shape_gradients(xi, eta, h)
            ke += (np.outer(dNx, dNx) + np.outer(dNy, dNy)) * (h * h / 4.0)
    ke = 0.5 * (ke + ke.T)
    ke.setflags(write=False)
    return ke


@lru_cache(maxsize=None)
def _unit_mass(h):
    me = np.zeros((4, 4))
    for xi in _GAUSS:
        for eta in _GAUSS:
            N = _shape_values(xi, eta)
            me += np.outer(N, N) * (h * h / 4.0)
    me = 0.5 * (me + me.T)
    me.setflags(write=False)
    return me


def element_stiffness_elasticity(E, nu, h):
    """8x8 plane-stress Q1 stiffness, dof order [u0x, u0y, u1x, u1y, ...]."""
    if E <= 0:
        raise ValueError(f"Element modulus must be positive, got {E}")
    _check_poisson(nu)
    return E * _unit_elasticity(float(nu), float(h))


def element_stiffness_diffusion(kappa, h):
    if kappa <= 0:
        raise ValueError(f"Diffusion coefficient must be positive, got {kappa}")
    return kappa * _unit_diffusion(float(h))


def element_mass(weight, h):
    return weight * _unit_mass(float(h))


class CoefficientField:
    def __init__(self, E, nu=0.3, E_min=None, E_max=None):
        E = np.asarray(E, dtype=float).ravel()
        self.E = E
        self.nu = nu
        self.E_min = float(E.min()) if E_min is None else E_min
        self.E_max = float(E.max()) if E_max is None else E_max
        _check_poisson(nu)
        if self.E_min <= 0:
            raise ValueError(f"E_min must be positive, got {self.E_min}")
        if E.min() < self.E_min * (1 - 1e-12) or E.max() > self.E_max * (1 + 1e-12):
            raise ValueError(f"Moduli outside [{self.E_min}, {self.E_max}]")

    @property
    def contrast(self):
        return self.E_max / self.E_min


def diffusion_weight(coeff, mode='modulus'):
    """κ per element for the heat operator: E itself, or E·tr(C_0)."""
    if mode == 'modulus':
        return coeff.E.copy()
    if mode == 'trace':
        return coeff.E * np.trace(plane_stress_matrix(coeff.nu))
    raise ValueError(f"Unsupported diffusion weight mode: {mode}")


class SymmetricSparseOperator:
    def __init__(self, matrix, free, n_total, n_nodes, ncomp=1):
        self.matrix = matrix
        self.free = free
        self.n_total = n_total
        self.n_nodes = n_nodes
        self.ncomp = ncomp

    @property
    def dim(self):
        return self.matrix.shape[0]

    @property
    def free_index(self):
        index = -np.ones(self.n_total, dtype=np.int64)
        index[self.free] = np.arange(self.free.size)
        return index

    def restrict(self, full):
        return np.asarray(full)[self.free]

    def extend(self, vec):
        full = np.zeros(self.n_total)
        full[self.free] = vec
        return full

    def __matmul__(self, v):
        return self.matrix @ v


def _scatter(edofs, ke, weights, n):
    k = edofs.shape[1]
    rows = np.repeat(edofs, k, axis=1).ravel()
    cols = np.tile(edofs, (1, k)).ravel()
    vals = (np.asarray(weights, dtype=float)[:, None, None] * ke[None]).ravel()
    K = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    # duplicate summation order differs between (i, j) and (j, i); mirror the upper triangle
    return (sp.triu(K) + sp.triu(K, 1).T).tocsr()


def _eliminate(full, n_nodes, ncomp, fixed):
    n = full.shape[0]
    fixed = np.unique(np.asarray(fixed if fixed is not None else [], dtype=np.int64))
    free = np.setdiff1d(np.arange(n), fixed)
    if free.size == 0:
        raise ValueError("All dofs are constrained; nothing to assemble")
    K = full[free][:, free].tocsr()
    K.sort_indices()
    return SymmetricSparseOperator(K, free, n, n_nodes, ncomp)


def assemble_elasticity(mesh, coeff, bc=None):
    if coeff.E.size != mesh.n_elements:
        raise ValueError(f"Coefficient has {coeff.E.size} values for {mesh.n_elements} elements")
    full = _scatter(mesh.element_dofs(), _unit_elasticity(float(coeff.nu), float(mesh.h)),
                    coeff.E, mesh.n_dofs)
    return _eliminate(full, mesh.n_nodes, 2, bc)


def assemble_diffusion(mesh, kappa, bc_nodes=None):
    kappa = np.asarray(kappa, dtype=float).ravel()
    if kappa.size != mesh.n_elements:
        raise ValueError(f"Diffusion weight has {kappa.size} values for {mesh.n_elements} elements")
    if np.any(kappa <= 0):
        raise ValueError("Diffusion coefficient must be positive everywhere")
    full = _scatter(mesh.element_nodes(), _unit_diffusion(float(mesh.h)), kappa, mesh.n_nodes)
    return _eliminate(full, mesh.n_nodes, 1, bc_nodes)


def assemble_weighted_mass(mesh, weight, kind='elasticity', bc=None):
    weight = np.asarray(weight, dtype=float).ravel()
    if np.any(weight <= 0):
        raise ValueError("Mass weight must be positive everywhere")
    me = _unit_mass(float(mesh.h))
    if kind == 'diffusion':
        full = _scatter(mesh.element_nodes(), me, weight, mesh.n_nodes)
        return _eliminate(full, mesh.n_nodes, 1, bc)
    if kind == 'elasticity':
        scalar = _scatter(mesh.element_nodes(), me, weight, mesh.n_nodes)
        full = sp.block_diag((scalar, scalar), format='csr')
        return _eliminate(full, mesh.n_nodes, 2, bc)
    raise ValueError(f"Unsupported mass kind: {kind}")


def split_blocks(op):
    """(K_xx, K_xy, K_yx, K_yy) of a component-grouped elasticity operator."""
    if op.ncomp != 2:
        raise ValueError("Block splitting needs a two-component operator")
    nfx = int(np.count_nonzero(op.free < op.n_nodes))
    K = op.matrix
    return K[:nfx, :nfx], K[:nfx, nfx:], K[nfx:, :nfx], K[nfx:, nfx:]


class LocalMatrices:
    def __init__(self, K, M, nodes, dofs, dof_nodes, dof_comp, kind='elasticity'):
        self.K = K
        self.M = M
        # every node of the element subset
        self.nodes = nodes
        # global dof ids of the kept local dofs, with their node and component
        self.dofs = dofs
        self.dof_nodes = dof_nodes
        self.dof_comp = dof_comp
        self.kind = kind


def assemble_local(mesh, elements, weights, kind='elasticity', nu=0.3,
                   fixed_nodes=None, mass_weights=None):
    """Stiffness and weighted mass on an element subset.

    Natural (Neumann) conditions on the subset boundary; nodes listed in
    fixed_nodes are eliminated. Local dofs are component-grouped."""
    elements = np.asarray(elements)
    weights = np.asarray(weights, dtype=float).ravel()
    mass_weights = weights if mass_weights is None else np.asarray(mass_weights, dtype=float).ravel()
    if weights.size != elements.size or mass_weights.size != elements.size:
        raise ValueError("One weight per element of the subset is required")
    enodes = mesh.element_nodes()[elements]
    nodes = np.unique(enodes)
    local = np.searchsorted(nodes, enodes)
    nloc = nodes.size
    me = _unit_mass(float(mesh.h))

    if kind == 'elasticity':
        ledofs = np.empty((elements.size, 8), dtype=np.int64)
        ledofs[:, 0::2] = local
        ledofs[:, 1::2] = local + nloc
        K = _scatter(ledofs, _unit_elasticity(float(nu), float(mesh.h)), weights, 2 * nloc)
        scalar = _scatter(local, me, mass_weights, nloc)
        M = sp.block_diag((scalar, scalar), format='csr')
        dof_nodes = np.concatenate((nodes, nodes))
        dof_comp = np.repeat([0, 1], nloc)
    elif kind == 'diffusion':
        K = _scatter(local, _unit_diffusion(float(mesh.h)), weights, nloc)
        M = _scatter(local, me, mass_weights, nloc)
        dof_nodes = nodes.copy()
        dof_comp = np.zeros(nloc, dtype=np.int64)
    else:
        raise ValueError(f"Unsupported local problem kind: {kind}")

    keep = ~np.isin(dof_nodes, np.asarray(fixed_nodes if fixed_nodes is not None else [], dtype=np.int64))
    if not np.any(keep):
        raise ValueError("Every local dof is constrained")
    idx = np.flatnonzero(keep)
    K = K[idx][:, idx].tocsr()
    M = M[idx][:, idx].tocsr()
    dofs = dof_nodes[idx] + dof_comp[idx] * mesh.n_nodes
    return LocalMatrices(K, M, nodes, dofs, dof_nodes[idx], dof_comp[idx], kind)


class LoadSpec:
    """Point loads as (node, component, magnitude) and an optional (n_elements, 2) body force."""

    def __init__(self, point_loads=None, body_force=None):
        self.point_loads = list(point_loads or [])
        self.body_force = body_force


def load_vector(mesh, load, op):
    f = np.zeros(mesh.n_dofs)
    index = op.free_index
    for node, comp, magnitude in load.point_loads:
        if comp not in (0, 1) or not 0 <= node < mesh.n_nodes:
            raise ValueError(f"Invalid point load at node {node}, component {comp}")
        dof = comp * mesh.n_nodes + node
        if index[dof] < 0:
            raise ValueError(f"Point load on constrained dof {dof} (node {node})")
        f[dof] += magnitude
    if load.body_force is not None:
        body = np.asarray(load.body_force, dtype=float).reshape(mesh.n_elements, 2)
        nodes = mesh.element_nodes()
        share = mesh.h * mesh.h / 4.0
        for comp in (0, 1):
            np.add.at(f, nodes + comp * mesh.n_nodes, (body[:, comp] * share)[:, None])
    return op.restrict(f)


def save_coefficient(coeff, mesh, path):
    """Plain-text E_e matrix, one row per mesh row (bottom row first)."""
    np.savetxt(path, coeff.E.reshape(mesh.ny, mesh.nx), fmt='%.17g')


def load_coefficient(path, nu=0.3):
    values = np.loadtxt(path, ndmin=2)
    return CoefficientField(values.ravel(), nu=nu)


def opposing_forces(mesh, solid=None, magnitude=1.0, points=((0.2, 0.2), (0.8, 0.8))):
    """+F and -F in x at the solid elements nearest to two points of the unit domain.

    Each force is split evenly over the four corners of its element."""
    candidates = np.arange(mesh.n_elements) if solid is None else np.flatnonzero(solid)
    extent = np.array([mesh.nx * mesh.h, mesh.ny * mesh.h])
    loads = []
    for sign, point in zip((1.0, -1.0), points):
        e = nearest_element(mesh, extent * np.asarray(point, dtype=float), candidates)
        for node in mesh.element_nodes()[e]:
            loads.append((int(node), 0, sign * magnitude / 4.0))
    return LoadSpec(point_loads=loads)
