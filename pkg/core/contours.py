"""
Planar contour operations: moments, arc-length resampling, rasterization,
projection, and polygon clean-up.
"""
from __future__ import annotations

import logging
import math
from typing import List, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import directed_hausdorff
from shapely.geometry import MultiPolygon, Polygon
from shapely.geometry.polygon import orient
from shapely.ops import unary_union
from shapely.validation import make_valid
from skimage.draw import polygon as draw_polygon
from skimage.measure import points_in_poly

from core.errors import DegenerateContour, NonClosedContour
from core.geometry import WORLD, Contour, GridFrame

logger = logging.getLogger(__name__)

# Smaller pieces split off a self-intersecting ring are treated as knots.
KNOT_FRACTION = 0.05


def _require_closed(contour: Contour) -> None:
    if not contour.closed:
        raise NonClosedContour("Operation requires a closed contour")


def polygon_area_centroid(contour: Contour) -> Tuple[float, np.ndarray]:
    """Shoelace area (absolute) and area centroid of a closed contour."""
    _require_closed(contour)
    x, y = contour.points.T
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    twice_area = float(np.sum(cross))
    if abs(twice_area) < 1e-12:
        raise DegenerateContour("Contour encloses zero area")
    cx = float(np.sum((x + xn) * cross)) / (3.0 * twice_area)
    cy = float(np.sum((y + yn) * cross)) / (3.0 * twice_area)
    return abs(twice_area) / 2.0, np.array([cx, cy])


def contour_span(contour: Contour) -> float:
    """Radius of the disc with the contour's area."""
    area, _ = polygon_area_centroid(contour)
    return math.sqrt(area / math.pi)


def start_index(points: np.ndarray) -> int:
    """Northernmost vertex, ties broken by smallest x."""
    return int(np.lexsort((points[:, 0], -points[:, 1]))[0])


def _arc_table(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    ring = np.vstack([points, points[:1]])
    lengths = np.hypot(*np.diff(ring, axis=0).T)
    return ring, np.concatenate([[0.0], np.cumsum(lengths)])


def sample_at_arc(points: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Points at the given arc positions along the closed ring ``points``."""
    ring, cum = _arc_table(points)
    total = cum[-1]
    s = np.mod(np.asarray(positions, dtype=float), total)
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(points) - 1)
    seg = cum[idx + 1] - cum[idx]
    t = np.divide(s - cum[idx], seg, out=np.zeros_like(s), where=seg > 0)
    return ring[idx] + t[:, None] * (ring[idx + 1] - ring[idx])


def resample_contour(contour: Contour, n: int, offset: float = 0.0) -> Contour:
    """Resample to ``n`` points uniformly spaced in arc length.

    The first sample sits at the northernmost vertex (ties: smallest x) shifted
    by ``offset`` sample spacings along the contour; orientation is kept.
    """
    _require_closed(contour)
    if n < 3:
        raise ValueError(f"resample_contour needs n >= 3, got {n}")
    pts = np.roll(contour.points, -start_index(contour.points), axis=0)
    _, cum = _arc_table(pts)
    total = cum[-1]
    if total <= 1e-12:
        raise DegenerateContour("Contour has zero perimeter")
    positions = (np.arange(n) + offset) * total / n
    return Contour(sample_at_arc(pts, positions), True, contour.frame_tag)


def densify(contour: Contour, spacing: float) -> np.ndarray:
    """Points along the contour no further than ``spacing`` apart (vertices kept)."""
    a, b = contour.segments
    out = []
    for p, q in zip(a, b):
        k = max(1, int(math.ceil(np.hypot(*(q - p)) / spacing)))
        t = np.arange(k)[:, None] / k
        out.append(p + t * (q - p))
    if not contour.closed:
        out.append(contour.points[-1:])
    return np.vstack(out)


def project_to_segments(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Distance from every point to every segment ``a[j]->b[j]``.

    Returns ``(dist, t)`` with shape (n_points, n_segments); ``t`` is the
    clamped segment parameter of the foot point.
    """
    p = np.asarray(points, dtype=float)[:, None, :]
    d = (b - a)[None, :, :]
    len2 = np.sum(d * d, axis=2)
    t = np.sum((p - a[None, :, :]) * d, axis=2) / np.where(len2 > 0, len2, 1.0)
    t = np.clip(t, 0.0, 1.0)
    foot = a[None, :, :] + t[..., None] * d
    return np.hypot(*(p - foot).transpose(2, 0, 1)), t


def nearest_on_contour(contour: Contour, points: np.ndarray, chunk: int = 1024):
    """Closest contour location for each point.

    Returns ``(arc_position, foot_point, distance)``; arc positions are measured
    from the contour's first vertex along its orientation.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    a, b = contour.segments
    seg_len = np.hypot(*(b - a).T)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])[:-1]
    arc = np.empty(len(pts))
    foot = np.empty_like(pts)
    dist = np.empty(len(pts))
    for lo in range(0, len(pts), chunk):
        block = pts[lo:lo + chunk]
        d, t = project_to_segments(block, a, b)
        j = np.argmin(d, axis=1)
        rows = np.arange(len(block))
        tj = t[rows, j]
        arc[lo:lo + chunk] = cum[j] + tj * seg_len[j]
        foot[lo:lo + chunk] = a[j] + tj[:, None] * (b[j] - a[j])
        dist[lo:lo + chunk] = d[rows, j]
    return arc, foot, dist


def points_inside(contour: Contour, points: np.ndarray) -> np.ndarray:
    return points_in_poly(np.asarray(points, dtype=float).reshape(-1, 2), contour.points)


def rasterize(contour: Contour, frame: GridFrame) -> np.ndarray:
    """Boolean mask of pixels whose centers fall inside the contour."""
    g = contour.to_grid(frame).points
    mask = np.zeros(frame.shape, dtype=bool)
    rr, cc = draw_polygon(g[:, 1], g[:, 0], shape=frame.shape)
    mask[rr, cc] = True
    return mask


def hausdorff(a: Contour, b: Contour, spacing: float = 0.25) -> float:
    pa, pb = densify(a, spacing), densify(b, spacing)
    return max(directed_hausdorff(pa, pb)[0], directed_hausdorff(pb, pa)[0])


def to_polygon(contour: Contour) -> Polygon:
    return Polygon(contour.points)


def _polygons(geom) -> List[Polygon]:
    if geom is None or geom.is_empty:
        return []
    if isinstance(geom, Polygon):
        return [geom]
    if isinstance(geom, MultiPolygon):
        return list(geom.geoms)
    return [g for part in getattr(geom, "geoms", []) for g in _polygons(part)]


def _from_polygons(polys: Sequence[Polygon], frame_tag: str, min_area: float) -> List[Contour]:
    polys = sorted((p for p in polys if p.area > min_area), key=lambda p: -p.area)
    out = []
    for poly in polys:
        ring = np.asarray(orient(poly, 1.0).exterior.coords)[:-1]
        try:
            out.append(Contour(ring, True, frame_tag))
        except DegenerateContour:
            continue
    return out


def remove_loops(contour: Contour) -> List[Contour]:
    """Split a self-intersecting ring and drop loop knots.

    Simple input comes back unchanged as a one-element list. Pieces smaller
    than ``KNOT_FRACTION`` of the largest piece are discarded.
    """
    poly = to_polygon(contour)
    if poly.is_valid:
        return [contour]
    pieces = _polygons(make_valid(poly))
    if not pieces:
        return []
    largest = max(p.area for p in pieces)
    logger.debug("Resolved self-intersection into %d piece(s)", len(pieces))
    return _from_polygons(pieces, contour.frame_tag, KNOT_FRACTION * largest)


def union_contours(contours: Sequence[Contour], min_area: float = 0.0) -> List[Contour]:
    """Exterior rings of the union of the given regions, largest first."""
    if not contours:
        return []
    polys = []
    for c in contours:
        poly = to_polygon(c)
        polys.extend(_polygons(poly if poly.is_valid else make_valid(poly)))
    return _from_polygons(_polygons(unary_union(polys)), contours[0].frame_tag, min_area)


def is_simple(contour: Contour) -> bool:
    return to_polygon(contour).exterior.is_simple


def geometry_contours(geom, frame_tag: str = WORLD, min_area: float = 0.0) -> List[Contour]:
    """Counter-clockwise exterior rings of every polygon in a shapely geometry, largest first."""
    return _from_polygons(_polygons(geom), frame_tag, min_area)
