"""Structured Q1 lattice on the unit square, its nested coarse partition and
the partition of unity over interior coarse nodes.

Numbering conventions used everywhere else:

    node (i, j)     -> j * (nx + 1) + i          i along x, j along y
    element (ex, ey)-> ey * nx + ex               row-major, bottom row first
    dof (node, c)   -> c * n_nodes + node         all x-dofs, then all y-dofs

Element corners run counterclockwise from the bottom-left node.
"""
import logging

import numpy as np

logger = logging.getLogger(__name__)


class FineMesh:
    def __init__(self, nx, ny, h):
        self.nx = nx
        self.ny = ny
        self.h = h

    def __repr__(self):
        return f"FineMesh(nx={self.nx}, ny={self.ny}, h={self.h})"

    @property
    def n_nodes(self):
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_elements(self):
        return self.nx * self.ny

    @property
    def n_dofs(self):
        return 2 * self.n_nodes

    def node_id(self, i, j):
        return j * (self.nx + 1) + i

    def node_coords(self):
        jj, ii = np.divmod(np.arange(self.n_nodes), self.nx + 1)
        return np.column_stack((ii * self.h, jj * self.h))

    def element_nodes(self):
        ey, ex = np.divmod(np.arange(self.n_elements), self.nx)
        n0 = self.node_id(ex, ey)
        return np.column_stack((n0, n0 + 1, n0 + self.nx + 2, n0 + self.nx + 1))

    def element_dofs(self):
        """(n_elements, 8) global dofs in element order [u0x, u0y, u1x, u1y, ...]."""
        nodes = self.element_nodes()
        edofs = np.empty((self.n_elements, 8), dtype=np.int64)
        edofs[:, 0::2] = nodes
        edofs[:, 1::2] = nodes + self.n_nodes
        return edofs

    def element_centroids(self):
        ey, ex = np.divmod(np.arange(self.n_elements), self.nx)
        return np.column_stack(((ex + 0.5) * self.h, (ey + 0.5) * self.h))


def build_fine_mesh(nx, ny, h=None):
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"Element counts must be positive integers, got nx={nx}, ny={ny}")
    nx, ny = int(nx), int(ny)
    h = 1.0 / nx if h is None else float(h)
    if h <= 0:
        raise ValueError(f"Element size must be positive, got h={h}")
    mesh = FineMesh(nx, ny, h)
    logger.debug(f"Fine mesh {nx}x{ny}: {mesh.n_nodes} nodes, {mesh.n_elements} elements")
    return mesh


def boundary_nodes(mesh):
    jj, ii = np.divmod(np.arange(mesh.n_nodes), mesh.nx + 1)
    on_edge = (ii == 0) | (ii == mesh.nx) | (jj == 0) | (jj == mesh.ny)
    return np.flatnonzero(on_edge)


def boundary_dofs(mesh):
    nodes = boundary_nodes(mesh)
    return np.concatenate((nodes, nodes + mesh.n_nodes))


def nearest_element(mesh, point, candidates=None):
    centroids = mesh.element_centroids()
    if candidates is None:
        candidates = np.arange(mesh.n_elements)
    candidates = np.asarray(candidates)
    if candidates.size == 0:
        raise ValueError("No candidate elements to choose from")
    dist = np.linalg.norm(centroids[candidates] - np.asarray(point, dtype=float), axis=1)
    # argmin picks the lowest index on ties, which keeps this deterministic
    return int(candidates[np.argmin(dist)])


class CoarsePartition:
    def __init__(self, mesh, Nx, Ny, blocks, coarse_nodes, neighborhoods):
        self.mesh = mesh
        self.Nx = Nx
        self.Ny = Ny
        self.blocks = blocks
        # (n_interior, 2) lattice indices (I, J)
        self.coarse_nodes = coarse_nodes
        self.neighborhoods = neighborhoods

    @property
    def cx(self):
        return self.mesh.nx // self.Nx

    @property
    def cy(self):
        return self.mesh.ny // self.Ny

    @property
    def H(self):
        return self.cx * self.mesh.h

    @property
    def overlap(self):
        # subdomains coincide with the neighborhoods
        return self.H

    @property
    def n_interior(self):
        return len(self.coarse_nodes)

    def coarse_node_coords(self):
        return np.column_stack((self.coarse_nodes[:, 0] * self.cx * self.mesh.h,
                                self.coarse_nodes[:, 1] * self.cy * self.mesh.h))

    def _node_box(self, j, strict):
        I, J = self.coarse_nodes[j]
        lo_i, hi_i = (I - 1) * self.cx, (I + 1) * self.cx
        lo_j, hi_j = (J - 1) * self.cy, (J + 1) * self.cy
        if strict:
            ii = np.arange(lo_i + 1, hi_i)
            jj = np.arange(lo_j + 1, hi_j)
        else:
            ii = np.arange(lo_i, hi_i + 1)
            jj = np.arange(lo_j, hi_j + 1)
        return self.mesh.node_id(ii[None, :], jj[:, None]).ravel()

    def neighborhood_nodes(self, j):
        return self._node_box(j, strict=False)

    def subdomain_interior_nodes(self, j):
        """Fine nodes strictly inside ω_j: the level-1 restriction set."""
        return self._node_box(j, strict=True)

    def block_nodes(self, b):
        by, bx = divmod(b, self.Nx)
        ii = np.arange(bx * self.cx, (bx + 1) * self.cx + 1)
        jj = np.arange(by * self.cy, (by + 1) * self.cy + 1)
        return self.mesh.node_id(ii[None, :], jj[:, None]).ravel()


def _block_elements(mesh, bx, by, cx, cy):
    ex = np.arange(bx * cx, (bx + 1) * cx)
    ey = np.arange(by * cy, (by + 1) * cy)
    return (ey[:, None] * mesh.nx + ex[None, :]).ravel()


def build_coarse_partition(mesh, Nx, Ny):
    if Nx < 1 or Ny < 1:
        raise ValueError(f"Coarse counts must be positive, got Nx={Nx}, Ny={Ny}")
    if mesh.nx % Nx != 0 or mesh.ny % Ny != 0:
        raise ValueError(f"Coarse mesh {Nx}x{Ny} is not nested in fine mesh {mesh.nx}x{mesh.ny}")
    cx, cy = mesh.nx // Nx, mesh.ny // Ny

    blocks = [_block_elements(mesh, bx, by, cx, cy) for by in range(Ny) for bx in range(Nx)]

    coarse_nodes = np.array([(I, J) for J in range(1, Ny) for I in range(1, Nx)], dtype=np.int64)
    coarse_nodes = coarse_nodes.reshape(-1, 2)
    neighborhoods = []
    for I, J in coarse_nodes:
        ex = np.arange((I - 1) * cx, (I + 1) * cx)
        ey = np.arange((J - 1) * cy, (J + 1) * cy)
        neighborhoods.append((ey[:, None] * mesh.nx + ex[None, :]).ravel())

    logger.debug(f"Coarse partition {Nx}x{Ny}: blocks of {cx}x{cy} elements, "
                 f"{len(coarse_nodes)} interior coarse nodes")
    return CoarsePartition(mesh, int(Nx), int(Ny), blocks, coarse_nodes, neighborhoods)


def _folded_hat(t, k, n):
    """1D hat of interior coarse node k (of n coarse cells) at coarse coordinate t.

    The half next to the domain boundary is folded to 1, so the interior hats
    sum to one on the whole interval."""
    left = np.clip(t - (k - 1), 0.0, 1.0) if k > 1 else (t <= k).astype(float)
    right = np.clip((k + 1) - t, 0.0, 1.0) if k < n - 1 else (t >= k).astype(float)
    return np.where(t <= k, left, right) * ((t >= k - 1) & (t <= k + 1))


class PartitionOfUnity:
    def __init__(self, n_nodes, nodes, values):
        self.n_nodes = n_nodes
        # per coarse node, the fine nodes of ω_j and χ_j at them
        self.nodes = nodes
        self.values = values

    def __len__(self):
        return len(self.nodes)

    def dense(self):
        chi = np.zeros((len(self.nodes), self.n_nodes))
        for j, (nodes, vals) in enumerate(zip(self.nodes, self.values)):
            chi[j, nodes] = vals
        return chi

    def at(self, j, nodes):
        lookup = np.zeros(self.n_nodes)
        lookup[self.nodes[j]] = self.values[j]
        return lookup[np.asarray(nodes)]


def build_partition_of_unity(part):
    mesh = part.mesh
    nodes_list, values_list = [], []
    for j, (I, J) in enumerate(part.coarse_nodes):
        nodes = part.neighborhood_nodes(j)
        jj, ii = np.divmod(nodes, mesh.nx + 1)
        chi = _folded_hat(ii / part.cx, I, part.Nx) * _folded_hat(jj / part.cy, J, part.Ny)
        nodes_list.append(nodes)
        values_list.append(chi)
    return PartitionOfUnity(mesh.n_nodes, nodes_list, values_list)
