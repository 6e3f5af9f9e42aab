"""
Surfaces from trajectory bundles: iso-contours at given elevations,
triangulated shells between levels, and extrapolated predictions below the
last known cross-section.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import trimesh
from trimesh.exchange.stl import export_stl_ascii

from core.contours import polygon_area_centroid, remove_loops, union_contours
from core.errors import DegenerateContour, DepthOutOfRange, Flag, RingMismatch
from core.geometry import Contour
from metamorphosis.trajectories import TrajectoryBundle

logger = logging.getLogger(__name__)

DEGENERATE_AREA_FRACTION = 0.01
MIN_TRIANGLE_AREA = 1e-12


@dataclass(eq=False)
class SurfaceMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    geozone: str = ""
    volume: float = 0.0

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=int).reshape(-1, 3)

    def to_trimesh(self) -> trimesh.Trimesh:
        return trimesh.Trimesh(vertices=self.vertices, faces=self.triangles, process=False)

    def stl_text(self, name: Optional[str] = None) -> str:
        solid = name or self.geozone or "surface"
        if len(self.triangles) == 0:
            return f"solid {solid}\nendsolid {solid}\n"
        lines = export_stl_ascii(self.to_trimesh()).strip().splitlines()
        lines[0] = f"solid {solid}"
        lines[-1] = f"endsolid {solid}"
        return "\n".join(lines) + "\n"

    @staticmethod
    def concatenate(meshes: Sequence["SurfaceMesh"], geozone: str = "") -> "SurfaceMesh":
        vertices, triangles, offset = [], [], 0
        for m in meshes:
            vertices.append(m.vertices)
            triangles.append(m.triangles + offset)
            offset += len(m.vertices)
        return SurfaceMesh(
            np.vstack(vertices) if vertices else np.zeros((0, 3)),
            np.vstack(triangles) if triangles else np.zeros((0, 3), dtype=int),
            geozone,
            float(sum(m.volume for m in meshes)),
        )


def write_stl(meshes: Sequence[SurfaceMesh], path: Union[str, Path]) -> Path:
    """One ASCII STL file holding one named solid per mesh."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(m.stl_text() for m in meshes), encoding="utf-8")
    logger.info("Wrote %d solid(s) to %s", len(meshes), path)
    return path


def _level_points(bundle: TrajectoryBundle, level: float) -> np.ndarray:
    L = bundle.levels
    lo = int(min(max(np.floor(level), 0), L - 2))
    w = level - lo
    return (1.0 - w) * bundle.trajectories[:, lo, :] + w * bundle.trajectories[:, lo + 1, :]


def _rings_to_contours(bundle: TrajectoryBundle, points: np.ndarray) -> List[Contour]:
    pieces: List[Contour] = []
    for _, idx in bundle.ring_groups().items():
        if len(idx) < 3:
            continue
        try:
            ring = Contour(points[idx])
        except DegenerateContour:
            continue
        pieces.extend(remove_loops(ring))
    return union_contours(pieces)


def iso_contours(bundle: TrajectoryBundle, elevations: Sequence[float]) -> List[List[Contour]]:
    """Closed contours at each elevation inside the bundle's bench interval.

    The two ends return the stored source and target contours; in between,
    each (source, target) ring is interpolated along its trajectories and the
    rings are unioned.

    Raises:
        DepthOutOfRange: for an elevation outside [z_bottom, z_top].
    """
    lo, hi = sorted((bundle.z_top, bundle.z_bottom))
    out = []
    for z in elevations:
        if not lo - 1e-9 <= z <= hi + 1e-9:
            raise DepthOutOfRange(f"Elevation {z} lies outside [{lo}, {hi}]; use predict_contour")
        level = bundle.fractional_level(z)
        if abs(level) < 1e-9:
            out.append(list(bundle.sources.values()))
        elif abs(level - (bundle.levels - 1)) < 1e-9:
            out.append(list(bundle.targets.values()))
        else:
            out.append(_rings_to_contours(bundle, _level_points(bundle, level)))
    return out


def _ring_area(ring: np.ndarray) -> float:
    x, y = ring.T
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def triangulate(rings: Sequence[np.ndarray], elevations: Sequence[float], geozone: str = "") -> SurfaceMesh:
    """Lateral shell through index-aligned rings, split by the shorter diagonal.

    Rings are reordered top to bottom and oriented counter-clockwise so the
    triangle normals point outward. The volume closes the shell with the
    top and bottom rings as planar caps.

    Raises:
        RingMismatch: fewer than two levels or rings of unequal size.
    """
    if len(rings) < 2 or len(rings) != len(elevations):
        raise RingMismatch(f"Need at least two rings with one elevation each, got {len(rings)}/{len(elevations)}")
    sizes = {len(r) for r in rings}
    if len(sizes) != 1 or sizes.pop() < 3:
        raise RingMismatch(f"Rings must share one size of at least 3, got {[len(r) for r in rings]}")

    order = np.argsort(-np.asarray(elevations, dtype=float), kind="stable")
    rings = [np.asarray(rings[i], dtype=float) for i in order]
    zs = [float(elevations[i]) for i in order]
    if _ring_area(rings[0]) < 0:
        rings = [r[::-1] for r in rings]
    n = len(rings[0])
    vertices = np.vstack([np.column_stack([r, np.full(n, z)]) for r, z in zip(rings, zs)])

    triangles = []
    for lvl in range(len(rings) - 1):
        top, bot = lvl * n, (lvl + 1) * n
        for i in range(n):
            j = (i + 1) % n
            a0, a1, b0, b1 = top + i, top + j, bot + i, bot + j
            if np.linalg.norm(vertices[a0] - vertices[b1]) <= np.linalg.norm(vertices[a1] - vertices[b0]):
                triangles.extend([(a0, b0, b1), (a0, b1, a1)])
            else:
                triangles.extend([(a0, b0, a1), (a1, b0, b1)])
    tri = np.array(triangles, dtype=int)
    v0, v1, v2 = vertices[tri[:, 0]], vertices[tri[:, 1]], vertices[tri[:, 2]]
    cross = np.cross(v1 - v0, v2 - v0)
    keep = 0.5 * np.linalg.norm(cross, axis=1) > MIN_TRIANGLE_AREA
    tri = tri[keep]

    v0, v1, v2 = vertices[tri[:, 0]], vertices[tri[:, 1]], vertices[tri[:, 2]]
    lateral = float(np.sum(np.einsum("ij,ij->i", v0, np.cross(v1, v2)))) / 6.0
    caps = (zs[0] * _ring_area(rings[0]) - zs[-1] * _ring_area(rings[-1])) / 3.0
    return SurfaceMesh(vertices, tri, geozone, lateral + caps)


def bundle_mesh(bundle: TrajectoryBundle) -> SurfaceMesh:
    """One shell per (source, target) ring of the bundle, concatenated."""
    zs = [bundle.z_top - k * (bundle.z_top - bundle.z_bottom) / (bundle.levels - 1) for k in range(bundle.levels)]
    meshes = []
    for group, idx in bundle.ring_groups().items():
        if len(idx) < 3:
            logger.debug("Ring %s has %d trajectories; no shell", group, len(idx))
            continue
        rings = [bundle.trajectories[idx, k, :] for k in range(bundle.levels)]
        meshes.append(triangulate(rings, zs, bundle.geozone))
    return SurfaceMesh.concatenate(meshes, bundle.geozone)


@dataclass(eq=False)
class Prediction:
    depth_below: float
    contours: List[Contour]
    flags: List[Flag] = field(default_factory=list)


def _total_area(contours) -> float:
    total = 0.0
    for c in contours:
        try:
            total += polygon_area_centroid(c)[0]
        except DegenerateContour:
            continue
    return total


def predict_contour(bundle: TrajectoryBundle, depth_below: float, max_depth: Optional[float] = None) -> Prediction:
    """Extrapolate every trajectory along its last segment ``depth_below`` under the bundle floor.

    Observed floor contours that no trajectory reaches are carried over as
    they are; an empty bundle holds all of them.

    Raises:
        DepthOutOfRange: unless ``0 < depth_below <= max_depth`` (default: the bench height).
    """
    limit = max_depth if max_depth is not None else abs(bundle.z_top - bundle.z_bottom)
    if not 0 < depth_below <= limit + 1e-9:
        raise DepthOutOfRange(f"Prediction depth {depth_below} must lie in (0, {limit}]")
    if len(bundle) == 0:
        return Prediction(depth_below, zero_order_hold(bundle), [Flag("EmptyBundle", "no trajectories; holding last contour")])

    last = bundle.trajectories[:, -1, :]
    slope = last - bundle.trajectories[:, -2, :]
    points = last + slope * (depth_below / bundle.level_spacing)
    contours = _rings_to_contours(bundle, points)

    flags = []
    reference = _total_area(bundle.sources.values())
    if _total_area(contours) < DEGENERATE_AREA_FRACTION * reference:
        flags.append(Flag("DegeneratePrediction", f"predicted area at {depth_below} m is under 1% of the source area"))
        logger.warning("Degenerate prediction %s m below z=%s", depth_below, bundle.z_bottom)
    reached = {t for _, t in bundle.groups}
    contours.extend(c for t, c in sorted(bundle.observed.items()) if t not in reached)
    return Prediction(depth_below, contours, flags)


def zero_order_hold(bundle: TrajectoryBundle) -> List[Contour]:
    """Baseline prediction: every contour observed at the bundle floor, unchanged."""
    return list(bundle.observed.values())


def predictions_by_depth(bundle: TrajectoryBundle, depths: Sequence[float]) -> Dict[float, Tuple[List[Contour], List[Contour], List[Flag]]]:
    """Model and baseline contours for each depth below the bundle floor."""
    out = {}
    for d in depths:
        pred = predict_contour(bundle, d)
        out[float(d)] = (pred.contours, zero_order_hold(bundle), pred.flags)
    return out
