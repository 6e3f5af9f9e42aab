"""
Synthetic scenes: analytic 3D bodies sampled on jittered hexagonal lattices
bench by bench, with exact cross-sections as ground truth.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List

import numpy as np
import shapely
from shapely import affinity
from shapely.geometry import Point, box
from shapely.ops import unary_union

from core.contours import geometry_contours
from core.errors import UnknownPrimitive
from core.geometry import Contour, SamplePoint

logger = logging.getLogger(__name__)

INSIDE_LABEL = "g1"
OUTSIDE_LABEL = "g2"
QUAD_SEGMENTS = 64


@dataclass(frozen=True)
class SceneSpec:
    """Scene descriptor; ``params`` override the primitive's own defaults."""

    primitive: str = "sphere"
    n_benches: int = 6
    bench_spacing: float = 10.0
    z_top: float = 100.0
    sample_spacing: float = 5.0
    jitter: float = 0.5
    dropout: float = 0.0
    half_width: float = 80.0
    params: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.n_benches < 2:
            raise ValueError("scene.n_benches must be at least 2")
        for name in ("bench_spacing", "sample_spacing", "half_width"):
            if not getattr(self, name) > 0:
                raise ValueError(f"scene.{name} must be positive")
        if self.jitter < 0 or not 0 <= self.dropout <= 1:
            raise ValueError("scene.jitter must be >= 0 and scene.dropout in [0, 1]")

    @property
    def elevations(self) -> List[float]:
        return [self.z_top - k * self.bench_spacing for k in range(self.n_benches)]

    @property
    def z_bottom(self) -> float:
        return self.elevations[-1]

    def as_dict(self) -> dict:
        return {
            "primitive": self.primitive,
            "n_benches": self.n_benches,
            "bench_spacing": self.bench_spacing,
            "z_top": self.z_top,
            "sample_spacing": self.sample_spacing,
            "jitter": self.jitter,
            "dropout": self.dropout,
            "half_width": self.half_width,
            "params": dict(sorted(self.params.items())),
        }


def _disc(x: float, y: float, r: float):
    return Point(x, y).buffer(r, quad_segs=QUAD_SEGMENTS) if r > 0 else None


def _param(spec: SceneSpec, name: str, default: float) -> float:
    return float(spec.params.get(name, default))


def _progress(spec: SceneSpec, z: float) -> float:
    """0 at the top bench, 1 at the bottom bench."""
    return (spec.z_top - z) / (spec.z_top - spec.z_bottom)


def sphere_section(spec: SceneSpec, z: float):
    r = _param(spec, "radius", 40.0)
    cz = _param(spec, "center_z", spec.z_top - 2 * spec.bench_spacing)
    h = z - cz
    return _disc(_param(spec, "center_x", 0.0), _param(spec, "center_y", 0.0), math.sqrt(r * r - h * h) if abs(h) < r else 0.0)


def tilted_ellipsoid_section(spec: SceneSpec, z: float):
    """Ellipsoid sheared along x: each section is the axis-aligned ellipse, shifted with depth."""
    a, b, c = _param(spec, "a", 45.0), _param(spec, "b", 30.0), _param(spec, "c", 70.0)
    cz = _param(spec, "center_z", spec.z_top - 10.0)
    h = (z - cz) / c
    if abs(h) >= 1:
        return None
    k = math.sqrt(1 - h * h)
    cx = _param(spec, "center_x", 0.0) + _param(spec, "shear_x", 0.4) * (cz - z)
    cy = _param(spec, "center_y", 0.0) + _param(spec, "shear_y", 0.0) * (cz - z)
    circle = Point(0, 0).buffer(1.0, quad_segs=QUAD_SEGMENTS)
    return affinity.translate(affinity.scale(circle, a * k, b * k, origin=(0, 0)), cx, cy)


def bent_slab_section(spec: SceneSpec, z: float):
    """Rectangle whose center drifts along a parabola in depth."""
    width, length = _param(spec, "width", 30.0), _param(spec, "length", 90.0)
    depth = spec.z_top - z
    offset = _param(spec, "drift", 0.25) * depth + _param(spec, "bend", 0.004) * depth * depth
    cx = _param(spec, "center_x", -15.0) + offset
    cy = _param(spec, "center_y", 0.0)
    return box(cx - width / 2, cy - length / 2, cx + width / 2, cy + length / 2)


def _twin(spec: SceneSpec, z: float, gap_top: float, gap_bottom: float):
    r = _param(spec, "radius", 20.0)
    gap = gap_top + (gap_bottom - gap_top) * _progress(spec, z)
    half = r + gap / 2.0
    return unary_union([_disc(-half, 0.0, r), _disc(half, 0.0, r)])


def twin_merge_section(spec: SceneSpec, z: float):
    """Two discs whose gap closes with depth (negative gap means they overlap)."""
    return _twin(spec, z, _param(spec, "gap_top", 26.0), _param(spec, "gap_bottom", -24.0))


def split_lobe_section(spec: SceneSpec, z: float):
    """One body at the top that separates into two lobes with depth."""
    return _twin(spec, z, _param(spec, "gap_top", -24.0), _param(spec, "gap_bottom", 26.0))


PRIMITIVES: Dict[str, Callable[[SceneSpec, float], object]] = {
    "sphere": sphere_section,
    "tilted_ellipsoid": tilted_ellipsoid_section,
    "bent_slab": bent_slab_section,
    "twin_merge": twin_merge_section,
    "split_lobe": split_lobe_section,
}


def primitive_section(spec: SceneSpec, z: float):
    name = spec.primitive.replace("-", "_")
    if name not in PRIMITIVES:
        logger.error("Unknown primitive %r", spec.primitive)
        raise UnknownPrimitive(f"Unknown primitive '{spec.primitive}'; choose from {', '.join(sorted(PRIMITIVES))}")
    return PRIMITIVES[name](spec, z)


def hex_lattice(half_width: float, spacing: float) -> np.ndarray:
    rows = np.arange(-half_width, half_width + 1e-9, spacing * math.sqrt(3) / 2)
    pts = []
    for j, y in enumerate(rows):
        xs = np.arange(-half_width, half_width + 1e-9, spacing) + (spacing / 2 if j % 2 else 0.0)
        pts.append(np.column_stack([xs, np.full(len(xs), y)]))
    return np.vstack(pts)


@dataclass(eq=False)
class SyntheticScene:
    spec: SceneSpec
    seed: int
    benches: Dict[float, List[SamplePoint]]

    def truth_at(self, z: float) -> List[Contour]:
        """Exact cross-section of the body at elevation ``z``."""
        return geometry_contours(primitive_section(self.spec, z))

    def component_counts(self) -> Dict[float, int]:
        return {z: len(self.truth_at(z)) for z in self.spec.elevations}

    def all_samples(self) -> List[SamplePoint]:
        return [s for z in self.spec.elevations for s in self.benches[z]]


def generate_synthetic_scene(spec: SceneSpec, seed: int = 0) -> SyntheticScene:
    """Label a jittered hexagonal lattice on every bench by membership in the body.

    Raises:
        UnknownPrimitive: when ``spec.primitive`` names no known body.
    """
    primitive_section(spec, spec.z_top)
    rng = np.random.default_rng(seed)
    lattice = hex_lattice(spec.half_width, spec.sample_spacing)
    benches: Dict[float, List[SamplePoint]] = {}
    for z in spec.elevations:
        pts = lattice + rng.normal(0.0, spec.jitter, size=lattice.shape) if spec.jitter > 0 else lattice.copy()
        keep = rng.random(len(pts)) >= spec.dropout
        pts = pts[keep]
        section = primitive_section(spec, z)
        if section is None or section.is_empty:
            inside = np.zeros(len(pts), dtype=bool)
        else:
            inside = shapely.contains_xy(section, pts[:, 0], pts[:, 1])
        benches[z] = [
            SamplePoint(float(x), float(y), float(z), INSIDE_LABEL if flag else OUTSIDE_LABEL)
            for (x, y), flag in zip(pts, inside)
        ]
        logger.debug("Bench z=%s: %d samples, %d inside", z, len(pts), int(np.count_nonzero(inside)))
    logger.info("Generated %s scene (seed %d): %d benches", spec.primitive, seed, len(benches))
    return SyntheticScene(spec, seed, benches)
