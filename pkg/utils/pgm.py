import os
import logging

import cv2
import numpy as np

logger = logging.getLogger(__name__)


def quantize_field(values):
    """Linear 8-bit grey levels from min (0) to max (255); a constant field maps to 0."""
    values = np.asarray(values, dtype=float)
    lo, hi = values.min(), values.max()
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.rint((values - lo) / (hi - lo) * 255.0).astype(np.uint8)


def export_field_image(values, nx, ny, path):
    """One pixel per element; the top image row is the top row of the mesh."""
    values = np.asarray(values, dtype=float).ravel()
    if values.size != nx * ny:
        raise ValueError(f"Field has {values.size} values, expected {nx}x{ny}={nx * ny}")
    image = np.flipud(quantize_field(values).reshape(ny, nx))
    folder = os.path.dirname(os.fspath(path))
    if folder:
        os.makedirs(folder, exist_ok=True)
    if not cv2.imwrite(os.fspath(path), np.ascontiguousarray(image), [cv2.IMWRITE_PXM_BINARY, 1]):
        raise OSError(f"Could not write image to {path}")
    logger.debug(f"Saved {nx}x{ny} greymap to {path}")
    return image


def read_field_image(path):
    image = cv2.imread(os.fspath(path), cv2.IMREAD_GRAYSCALE)
    if image is None:
        raise OSError(f"Could not read image {path}")
    return np.flipud(image).ravel()
