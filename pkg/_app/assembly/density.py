"""Design-density pipeline: cone filter and SIMP interpolation."""
import logging

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)


class DensityFields:
    """Design densities rho, their filtered image rho_f and the element volumes."""

    def __init__(self, rho, rho_f, volumes, volume_bound, penal=3.0):
        for name, values in (('rho', rho), ('rho_f', rho_f)):
            if np.any(values < 0) or np.any(values > 1):
                raise ValueError(f"{name} must lie in [0, 1]")
        self.rho = rho
        self.rho_f = rho_f
        self.volumes = volumes
        self.volume_bound = volume_bound
        self.penal = penal

    @property
    def volume(self):
        return float(self.volumes @ self.rho_f)

    def modulus(self, E_min, E_max):
        return simp_modulus(self.rho_f, self.penal, E_min, E_max)


def simp_modulus(rho_f, p, E_min, E_max):
    """E = E_min + rho^p (E_max - E_min), elementwise."""
    rho_f = np.asarray(rho_f, dtype=float)
    if np.any(rho_f < 0) or np.any(rho_f > 1):
        raise ValueError("Filtered densities must lie in [0, 1]")
    if p < 1:
        raise ValueError(f"SIMP exponent must be >= 1, got {p}")
    if E_min < 0 or E_max < E_min:
        raise ValueError(f"Invalid modulus bounds E_min={E_min}, E_max={E_max}")
    return E_min + rho_f ** p * (E_max - E_min)


def simp_derivative(rho_f, p, E_min, E_max):
    rho_f = np.asarray(rho_f, dtype=float)
    return p * rho_f ** (p - 1) * (E_max - E_min)


class DensityFilter:
    def __init__(self, H, Hs, radius=0.0):
        self.H = H
        self.Hs = Hs
        self.radius = radius

    def apply(self, rho):
        return (self.H @ rho) / self.Hs

    def backpropagate(self, grad_f):
        return self.H.T @ (grad_f / self.Hs)


def build_filter(mesh, r):
    """Linear cone weights w_ek = max(0, r - |c_e - c_k|) between element centroids."""
    if r < 0:
        raise ValueError(f"Filter radius must be non-negative, got {r}")
    n = mesh.n_elements
    if r == 0:
        H = sp.identity(n, format='csr')
        return DensityFilter(H, np.ones(n), 0.0)

    reach = int(np.ceil(r / mesh.h))
    ey, ex = np.divmod(np.arange(n), mesh.nx)
    rows, cols, vals = [], [], []
    for dj in range(-reach, reach + 1):
        for di in range(-reach, reach + 1):
            w = r - mesh.h * np.hypot(di, dj)
            if w <= 0:
                continue
            kx, ky = ex + di, ey + dj
            inside = (kx >= 0) & (kx < mesh.nx) & (ky >= 0) & (ky < mesh.ny)
            rows.append(np.flatnonzero(inside))
            cols.append((ky * mesh.nx + kx)[inside])
            vals.append(np.full(int(inside.sum()), w))
    H = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    Hs = np.asarray(H.sum(axis=1)).ravel()
    logger.debug(f"Density filter r={r}: {H.nnz} weights, reach {reach} elements")
    return DensityFilter(H, Hs, float(r))


def density_filter(rho, filt):
    """rho_f for a filter built with build_filter, clipped to [0, 1]."""
    return np.clip(filt.apply(np.asarray(rho, dtype=float)), 0.0, 1.0)
