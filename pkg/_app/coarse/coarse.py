"""GMsFEM coarse spaces and the Galerkin coarse operator K_0 = R_0 K R_0^T.

Basis vectors are local eigenvectors multiplied nodewise by the partition of
unity of their neighborhood and extended by zero. Heat-derived bases put each
scalar mode into the x- and y-slot separately and may be enriched with one
rotation per neighborhood.
"""
import logging

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

logger = logging.getLogger(__name__)


class CoarseSpaceError(RuntimeError):
    pass


class CoarseBasis:
    def __init__(self, R0T, kind, counts, enriched=False):
        # columns are the basis vectors over free dofs
        self.R0T = R0T
        # 'E', 'H', 'H+Rot' or 'custom'
        self.kind = kind
        # columns contributed by each coarse node
        self.counts = counts
        self.enriched = enriched

    @property
    def n_coarse(self):
        return self.R0T.shape[1]

    @classmethod
    def from_columns(cls, columns, kind='custom'):
        R0T = sp.csc_matrix(columns)
        return cls(R0T, kind, np.array([R0T.shape[1]]))

    def gram_rank(self, rtol=1e-10):
        if self.n_coarse == 0:
            return 0
        gram = (self.R0T.T @ self.R0T).toarray()
        s = np.linalg.svd(gram, compute_uv=False)
        return int(np.count_nonzero(s > rtol * s[0]))

    def export(self, path):
        np.savetxt(path, self.R0T.toarray(), fmt='%.17g')


def _assemble_columns(columns, n_free):
    if not columns:
        return sp.csc_matrix((n_free, 0))
    rows = np.concatenate([r for r, _ in columns])
    vals = np.concatenate([v for _, v in columns])
    cols = np.concatenate([np.full(r.size, c) for c, (r, _) in enumerate(columns)])
    return sp.csc_matrix((vals, (rows, cols)), shape=(n_free, len(columns)))


def _column(rows, values):
    keep = (rows >= 0) & (values != 0)
    return rows[keep], values[keep]


def _check_counts(part, problems, selections):
    if len(problems) != part.n_interior or len(selections) != part.n_interior:
        raise ValueError(f"Expected one selection per interior coarse node ({part.n_interior}), "
                         f"got {len(selections)} selections for {len(problems)} problems")


def build_coarse_basis_elasticity(part, pou, problems, selections, op):
    _check_counts(part, problems, selections)
    index = op.free_index
    columns, counts = [], []
    for j, (prob, sel) in enumerate(zip(problems, selections)):
        if sel.kind != 'elasticity':
            raise ValueError(f"Neighborhood {j}: expected an elasticity selection, got {sel.kind}")
        chi = pou.at(j, prob.dof_nodes)
        rows = index[prob.dofs]
        for psi in sel.selected_vectors.T:
            columns.append(_column(rows, chi * psi))
        counts.append(sel.n_sel)
    R0T = _assemble_columns(columns, op.dim)
    logger.info(f"Elasticity coarse space: dimension {R0T.shape[1]}")
    return CoarseBasis(R0T, 'E', np.array(counts))


def build_coarse_basis_heat(part, pou, problems, selections, op):
    _check_counts(part, problems, selections)
    index = op.free_index
    columns, counts = [], []
    for j, (prob, sel) in enumerate(zip(problems, selections)):
        if sel.kind != 'diffusion':
            raise ValueError(f"Neighborhood {j}: expected a diffusion selection, got {sel.kind}")
        chi = pou.at(j, prob.dof_nodes)
        rows_x = index[prob.dof_nodes]
        rows_y = index[prob.dof_nodes + op.n_nodes]
        for psi in sel.selected_vectors.T:
            columns.append(_column(rows_x, chi * psi))
            columns.append(_column(rows_y, chi * psi))
        counts.append(2 * sel.n_sel)
    R0T = _assemble_columns(columns, op.dim)
    logger.info(f"Heat coarse space: dimension {R0T.shape[1]}")
    return CoarseBasis(R0T, 'H', np.array(counts))


def enrich_rotations(basis, part, pou, op):
    """Append χ_j·[-(x2 - y_j2), x1 - y_j1] for every interior coarse node y_j."""
    if basis.enriched:
        raise ValueError("Coarse basis is already enriched with rotations")
    if basis.kind != 'H':
        raise ValueError(f"Rotation enrichment applies to heat bases, got kind {basis.kind}")
    index = op.free_index
    coords = part.mesh.node_coords()
    centers = part.coarse_node_coords()
    columns = []
    for j in range(part.n_interior):
        nodes = pou.nodes[j]
        chi = pou.values[j]
        dx = coords[nodes, 0] - centers[j, 0]
        dy = coords[nodes, 1] - centers[j, 1]
        rows = np.concatenate((index[nodes], index[nodes + op.n_nodes]))
        vals = np.concatenate((-chi * dy, chi * dx))
        columns.append(_column(rows, vals))
    extra = _assemble_columns(columns, op.dim)
    R0T = sp.hstack((basis.R0T, extra), format='csc')
    logger.info(f"Rotation enrichment: dimension {basis.n_coarse} -> {R0T.shape[1]}")
    return CoarseBasis(R0T, 'H+Rot', basis.counts + 1, enriched=True)


class CoarseOperator:
    def __init__(self, K0, factor, R0T):
        self.K0 = K0
        self.factor = factor
        self.R0T = R0T

    @property
    def dim(self):
        return self.K0.shape[0]

    def solve(self, r):
        if self.dim == 0:
            return np.zeros_like(r)
        return self.R0T @ la.cho_solve(self.factor, self.R0T.T @ r)


def assemble_coarse_operator(op, basis):
    if basis.R0T.shape[0] != op.dim:
        raise ValueError(f"Basis rows ({basis.R0T.shape[0]}) do not match operator dimension ({op.dim})")
    R0T = basis.R0T
    if basis.n_coarse == 0:
        return CoarseOperator(np.zeros((0, 0)), (np.zeros((0, 0)), False), R0T)
    K0 = (R0T.T @ (op.matrix @ R0T)).toarray()
    K0 = 0.5 * (K0 + K0.T)
    try:
        factor = la.cho_factor(K0)
    except la.LinAlgError as err:
        raise CoarseSpaceError(f"Coarse matrix of dimension {basis.n_coarse} is not positive definite; "
                               f"basis Gram rank is {basis.gram_rank()}") from err
    return CoarseOperator(K0, factor, R0T)


def best_approximation_residual(basis, v):
    """min_c ||R_0^T c - v|| / ||v|| by dense least squares."""
    A = basis.R0T.toarray()
    c, *_ = np.linalg.lstsq(A, v, rcond=None)
    return float(np.linalg.norm(A @ c - v) / np.linalg.norm(v))
