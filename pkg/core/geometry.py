"""
Coordinate frames, grid containers and contour primitives.

Arrays indexed by a grid are stored row-major as ``values[gy, gx]`` so a
:class:`GridFrame` with ``dims == (n_x, n_y)`` houses arrays of shape
``(n_y, n_x)``. Grid coordinates grow with world coordinates on both axes,
so "north" (larger y) is a larger row index in both frames.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Tuple

import numpy as np

from core.errors import DegenerateContour, FrameMismatch

logger = logging.getLogger(__name__)

WORLD = "world"
GRID = "grid"

DEFAULT_GRID_TARGET = 240
DEFAULT_MARGIN = 16


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class SamplePoint:
    """A labeled observation on one cross-section."""

    x: float
    y: float
    z: float
    geozone: str

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError(f"Sample coordinates must be finite: ({self.x}, {self.y}, {self.z})")
        if not str(self.geozone):
            raise ValueError("Sample geozone label must be non-empty")


def validate_labels(samples: Iterable[SamplePoint], labels: Iterable[str]) -> None:
    """Raise ValueError when a sample carries a label outside ``labels``."""
    allowed = set(labels)
    unknown = sorted({s.geozone for s in samples} - allowed)
    if unknown:
        raise ValueError(f"Undeclared geozone labels: {', '.join(unknown)}")


def sample_coordinates(samples: Iterable[SamplePoint]) -> np.ndarray:
    return np.array([(s.x, s.y) for s in samples], dtype=float).reshape(-1, 2)


@dataclass(frozen=True)
class GridFrame:
    """Uniform quantization of a planar window.

    ``origin`` is the world position of pixel center (0, 0); ``margin`` records
    how many pixels of padding were added around the covered content.
    """

    origin: Tuple[float, float]
    pixel_size: float
    dims: Tuple[int, int]
    margin: int = 0

    def __post_init__(self):
        if not self.pixel_size > 0:
            raise ValueError(f"pixel_size must be positive, got {self.pixel_size}")
        if len(self.dims) != 2 or min(self.dims) <= 0:
            raise ValueError(f"dims must be two positive integers, got {self.dims}")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "dims", (int(self.dims[0]), int(self.dims[1])))

    @property
    def shape(self) -> Tuple[int, int]:
        """Array shape ``(n_y, n_x)``."""
        return self.dims[1], self.dims[0]

    @classmethod
    def covering(
        cls,
        points: np.ndarray,
        target: int = DEFAULT_GRID_TARGET,
        margin: int = DEFAULT_MARGIN,
        pixel_size: Optional[float] = None,
    ) -> "GridFrame":
        """Frame whose longer bounding-box side maps to ``target`` pixels plus ``margin`` on every side."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if pts.size == 0:
            raise ValueError("Cannot build a frame around zero points")
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        extent = float(max(hi - lo))
        if pixel_size is None:
            pixel_size = extent / target if extent > 0 else 1.0
        n = np.ceil((hi - lo) / pixel_size).astype(int) + 1 + 2 * margin
        origin = lo - margin * pixel_size
        return cls((origin[0], origin[1]), float(pixel_size), (int(n[0]), int(n[1])), margin)

    def world_to_grid(self, points) -> np.ndarray:
        return world_to_grid(points, self)

    def grid_to_world(self, points) -> np.ndarray:
        return grid_to_world(points, self)

    def contains(self, grid_points) -> np.ndarray:
        """Boolean mask of grid-frame points that fall inside the pixel support."""
        g = np.asarray(grid_points, dtype=float).reshape(-1, 2)
        return (
            (g[:, 0] >= -0.5) & (g[:, 0] <= self.dims[0] - 0.5)
            & (g[:, 1] >= -0.5) & (g[:, 1] <= self.dims[1] - 0.5)
        )

    def pixel_centers(self) -> np.ndarray:
        """All pixel centers in grid coordinates, row-major, shape (n_y*n_x, 2) as (gx, gy)."""
        gy, gx = np.mgrid[0:self.dims[1], 0:self.dims[0]]
        return np.column_stack([gx.ravel(), gy.ravel()]).astype(float)

    def as_dict(self) -> dict:
        return {
            "origin": list(self.origin),
            "pixel_size": self.pixel_size,
            "dims": list(self.dims),
            "margin": self.margin,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GridFrame":
        return cls(tuple(data["origin"]), float(data["pixel_size"]), tuple(data["dims"]), int(data.get("margin", 0)))


def world_to_grid(points, frame: GridFrame) -> np.ndarray:
    """Affine map to continuous grid coordinates; out-of-bounds results are allowed."""
    p = np.asarray(points, dtype=float)
    return (p - np.asarray(frame.origin)) / frame.pixel_size


def grid_to_world(points, frame: GridFrame) -> np.ndarray:
    g = np.asarray(points, dtype=float)
    return g * frame.pixel_size + np.asarray(frame.origin)


@dataclass(frozen=True, eq=False)
class Contour:
    """Ordered polygon in a declared frame (``world`` or ``grid``)."""

    points: np.ndarray
    closed: bool = True
    frame_tag: str = WORLD

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(pts)):
            raise ValueError("Contour points must be finite")
        if len(pts) > 1:
            keep = np.ones(len(pts), dtype=bool)
            keep[1:] = np.any(np.abs(np.diff(pts, axis=0)) > 1e-12, axis=1)
            pts = pts[keep]
            if self.closed and len(pts) > 1 and np.allclose(pts[0], pts[-1], atol=1e-12, rtol=0):
                pts = pts[:-1]
        if self.closed and len(pts) < 3:
            raise DegenerateContour(f"Closed contour needs at least 3 distinct points, got {len(pts)}")
        if self.frame_tag not in (WORLD, GRID):
            raise ValueError(f"Unknown frame tag {self.frame_tag!r}")
        object.__setattr__(self, "points", _frozen(pts))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def segments(self) -> Tuple[np.ndarray, np.ndarray]:
        """Segment start and end points (closing segment included when closed)."""
        a = self.points
        b = np.roll(a, -1, axis=0) if self.closed else a[1:]
        return (a if self.closed else a[:-1]), b

    @property
    def perimeter(self) -> float:
        a, b = self.segments
        return float(np.sum(np.hypot(*(b - a).T)))

    def signed_area(self) -> float:
        x, y = self.points.T
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def reversed(self) -> "Contour":
        return Contour(self.points[::-1], self.closed, self.frame_tag)

    def translated(self, offset) -> "Contour":
        return Contour(self.points + np.asarray(offset, dtype=float), self.closed, self.frame_tag)

    def counter_clockwise(self) -> "Contour":
        return self if self.signed_area() >= 0 else self.reversed()

    def to_grid(self, frame: GridFrame) -> "Contour":
        if self.frame_tag == GRID:
            return self
        return Contour(world_to_grid(self.points, frame), self.closed, GRID)

    def to_world(self, frame: GridFrame) -> "Contour":
        if self.frame_tag == WORLD:
            return self
        return Contour(grid_to_world(self.points, frame), self.closed, WORLD)


def _check_shape(frame: GridFrame, array: np.ndarray, name: str) -> None:
    if array.shape != frame.shape:
        raise FrameMismatch(f"{name} has shape {array.shape}, frame expects {frame.shape}")


@dataclass(frozen=True, eq=False)
class ScalarGrid:
    frame: GridFrame
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        _check_shape(self.frame, values, "values")
        object.__setattr__(self, "values", values)

    def with_values(self, values: np.ndarray) -> "ScalarGrid":
        return ScalarGrid(self.frame, values)


@dataclass(frozen=True, eq=False)
class VectorGrid:
    frame: GridFrame
    u: np.ndarray
    v: np.ndarray = field(repr=False)

    def __post_init__(self):
        u, v = _frozen(self.u), _frozen(self.v)
        if u.shape != v.shape:
            raise FrameMismatch(f"Vector components differ in shape: {u.shape} vs {v.shape}")
        _check_shape(self.frame, u, "u")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)


def require_same_frame(a: GridFrame, b: GridFrame) -> None:
    if a != b:
        raise FrameMismatch(f"Grids live in different frames: {a} vs {b}")
