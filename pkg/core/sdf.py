"""
Signed distance fields, inside positive.

``signed_distance`` is exhaustive over contour segments (exact at the pixel
centers). ``redistance`` rebuilds a level set from its own zero-interface and
uses a densely sampled interface with a kD-tree, which keeps it cheap enough
to run every few level-set steps.
"""
from __future__ import annotations

import logging

import numpy as np
from scipy.spatial import cKDTree
from skimage.measure import find_contours

from core.contours import polygon_area_centroid, points_inside, project_to_segments
from core.errors import DegenerateContour, NonClosedContour
from core.geometry import Contour, GridFrame, ScalarGrid

logger = logging.getLogger(__name__)

PIXEL_CHUNK = 2048
INTERFACE_SPACING = 0.2


def unsigned_distance(contour: Contour, frame: GridFrame) -> np.ndarray:
    """Exact distance from every pixel center to the contour's segments (grid units)."""
    g = contour.to_grid(frame)
    a, b = g.segments
    centers = frame.pixel_centers()
    out = np.empty(len(centers))
    for lo in range(0, len(centers), PIXEL_CHUNK):
        d, _ = project_to_segments(centers[lo:lo + PIXEL_CHUNK], a, b)
        out[lo:lo + PIXEL_CHUNK] = d.min(axis=1)
    return out.reshape(frame.shape)


def signed_distance(contour: Contour, frame: GridFrame) -> ScalarGrid:
    """Signed distance to a closed contour, positive inside, in pixels."""
    if not contour.closed:
        raise NonClosedContour("signed_distance needs a closed contour")
    g = contour.to_grid(frame)
    area, _ = polygon_area_centroid(g)
    if area < 1.0:
        raise DegenerateContour(f"Contour area {area:.3f} px^2 is below one pixel")
    dist = unsigned_distance(g, frame)
    inside = points_inside(g, frame.pixel_centers()).reshape(frame.shape)
    return ScalarGrid(frame, np.where(inside, dist, -dist))


def union_signed_distance(contours, frame: GridFrame) -> ScalarGrid:
    """Signed distance of the union of disjoint regions (pointwise max)."""
    fields = [signed_distance(c, frame).values for c in contours]
    return ScalarGrid(frame, np.max(np.stack(fields), axis=0))


def zero_interface(values: np.ndarray) -> list:
    """Sub-pixel zero crossings of a grid as (x, y) polylines."""
    return [line[:, ::-1] for line in find_contours(np.asarray(values, dtype=float), 0.0) if len(line) > 1]


def _dense_polyline(line: np.ndarray, spacing: float) -> np.ndarray:
    seg = np.diff(line, axis=0)
    n = np.maximum(1, np.ceil(np.hypot(*seg.T) / spacing).astype(int))
    parts = [line[i] + (np.arange(k)[:, None] / k) * seg[i] for i, k in enumerate(n)]
    parts.append(line[-1:])
    return np.vstack(parts)


def redistance(values: np.ndarray) -> np.ndarray:
    """Signed distance to the zero-interface of ``values``, keeping its sign."""
    values = np.asarray(values, dtype=float)
    lines = zero_interface(values)
    if not lines:
        logger.debug("No zero-interface to re-distance from")
        return values.copy()
    samples = np.vstack([_dense_polyline(line, INTERFACE_SPACING) for line in lines])
    ny, nx = values.shape
    gy, gx = np.mgrid[0:ny, 0:nx]
    dist, _ = cKDTree(samples).query(np.column_stack([gx.ravel(), gy.ravel()]))
    dist = dist.reshape(values.shape)
    return np.where(values >= 0, dist, -dist)
