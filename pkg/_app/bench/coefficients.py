"""Frozen synthetic high-contrast layouts.

Rectangles are given in unit-domain coordinates; an element is stiff when its
centroid lies inside one of them. Channels are half-open in the long
direction so their element counts do not depend on rounding at the ends.
"""
import logging

import numpy as np

from _app.assembly.assembly import CoefficientField

logger = logging.getLogger(__name__)

LAYOUT_VERSION = 1

# (x0, x1, y0, y1), half-open
CHANNELS = (
    (0.10, 0.90, 0.32, 0.35),
    (0.62, 0.65, 0.45, 0.95),
)

# (x0, x1, y0, y1), closed; each sits strictly inside one 0.1-wide coarse block
INCLUSIONS = (
    (0.13, 0.17, 0.73, 0.77),
    (0.43, 0.47, 0.13, 0.17),
    (0.83, 0.87, 0.63, 0.67),
    (0.23, 0.27, 0.53, 0.57),
)

LAYOUTS = ('channels-and-inclusions', 'inclusions-only', 'homogeneous')


def _centroids_unit(mesh):
    c = mesh.element_centroids()
    return c[:, 0] / (mesh.nx * mesh.h), c[:, 1] / (mesh.ny * mesh.h)


def solid_mask(layout, mesh):
    if layout not in LAYOUTS:
        raise ValueError(f"Unsupported layout: {layout}. Use one of {list(LAYOUTS)}")
    if layout == 'homogeneous':
        return np.ones(mesh.n_elements, dtype=bool)
    x, y = _centroids_unit(mesh)
    solid = np.zeros(mesh.n_elements, dtype=bool)
    for x0, x1, y0, y1 in INCLUSIONS:
        solid |= (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
    if layout == 'channels-and-inclusions':
        for x0, x1, y0, y1 in CHANNELS:
            solid |= (x >= x0) & (x < x1) & (y >= y0) & (y < y1)
    if not np.any(solid):
        raise ValueError(f"Mesh {mesh.nx}x{mesh.ny} is too coarse to resolve layout {layout}")
    return solid


def generate_coefficient(layout, mesh, eta, E_max=1.0, nu=0.3):
    """E_max on the stiff set, E_max/eta elsewhere."""
    if eta < 1:
        raise ValueError(f"Contrast must be at least 1, got {eta}")
    solid = solid_mask(layout, mesh)
    E_min = E_max if layout == 'homogeneous' else E_max / float(eta)
    E = np.where(solid, E_max, E_min)
    logger.debug(f"Layout {layout} v{LAYOUT_VERSION}: {int(solid.sum())} stiff elements, contrast {eta:g}")
    return CoefficientField(E, nu=nu, E_min=E_min, E_max=E_max)
