"""
Contour extraction for one cross-section and one geozone.

samples -> components -> boundary flags -> edge map -> GVF -> snake
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from core.errors import DegenerateContour, Flag, TooFewBoundarySamples
from core.geometry import DEFAULT_GRID_TARGET, DEFAULT_MARGIN, Contour, GridFrame, SamplePoint, sample_coordinates
from extraction.boundary import close_open_edges, detect_boundary_samples, junction_links, section_entropy
from extraction.components import RADIUS_FACTOR, Component, connect_components, median_spacing
from extraction.edgemap import synthesize_edge_map
from extraction.snake import (
    SnakeParams,
    bounding_box_contour,
    compute_gvf,
    evolve_active_contour,
    far_field_normalized,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExtractionParams:
    radius: Optional[float] = None
    t_entropy: float = 0.5
    k_orient: int = 12
    t_orient: float = 2 * math.pi / 3
    k_struct: int = 5
    k_joints: int = 4
    grid_target: int = DEFAULT_GRID_TARGET
    margin: int = DEFAULT_MARGIN
    padding: int = 8
    gvf_mu: float = 0.2
    gvf_iters: int = 400
    min_component_size: int = 5
    snake: SnakeParams = field(default_factory=SnakeParams)

    def __post_init__(self):
        if self.radius is not None and not self.radius > 0:
            raise ValueError("extraction.radius must be positive")
        if not 0 < self.t_orient < 2 * math.pi:
            raise ValueError("extraction.t_orient must lie in (0, 2π)")
        for name in ("t_entropy", "k_orient", "k_struct", "grid_target", "gvf_mu", "gvf_iters", "min_component_size"):
            if not getattr(self, name) > 0:
                raise ValueError(f"extraction.{name} must be positive")
        if self.k_joints < 0 or self.padding < 0 or self.margin <= self.padding:
            raise ValueError("extraction.margin must exceed extraction.padding, both non-negative")


@dataclass(frozen=True, eq=False)
class ExtractedContour:
    component_id: int
    geozone: str
    z: float
    contour: Contour
    n_samples: int
    converged: bool
    iterations: int
    flags: List[Flag] = field(default_factory=list)


@dataclass(eq=False)
class SectionExtraction:
    z: float
    geozone: str
    radius: float
    spacing: float
    contours: List[ExtractedContour] = field(default_factory=list)
    rejects: List[dict] = field(default_factory=list)
    flags: List[Flag] = field(default_factory=list)


def flag_component(component: Component, samples: Sequence[SamplePoint], r: float, params: ExtractionParams, entropy=None) -> Component:
    boundary = detect_boundary_samples(component, samples, r, params.t_entropy, entropy=entropy)
    closure = close_open_edges(component, params.k_orient, params.t_orient)
    return replace(component, boundary_flags=boundary, gap_closure_flags=closure)


def extract_component(component: Component, r: float, params: ExtractionParams) -> ExtractedContour:
    """Edge map, GVF and snake for one flagged component; raises TooFewBoundarySamples."""
    coords = component.coordinates
    edge_idx = np.flatnonzero(component.edge_flags)
    links = junction_links(
        coords[edge_idx],
        component.boundary_flags[edge_idx],
        component.gap_closure_flags[edge_idx],
        params.k_joints,
        r,
    )
    frame = GridFrame.covering(coords, params.grid_target, params.margin)
    edge_map = synthesize_edge_map(coords[edge_idx], params.k_struct, frame, links)
    gvf = compute_gvf(edge_map, params.gvf_mu, params.gvf_iters)
    force = far_field_normalized(gvf, edge_map, params.snake)
    init = bounding_box_contour(frame.world_to_grid(coords), params.padding, params.snake.n_points)
    result = evolve_active_contour(force, init, params.snake)
    sample = component.samples[0]
    return ExtractedContour(
        component.id,
        sample.geozone,
        sample.z,
        result.contour.to_world(frame),
        len(component),
        result.converged,
        result.iterations,
        list(result.flags),
    )


def extract_section(samples: Sequence[SamplePoint], geozone: str, params: ExtractionParams = ExtractionParams()) -> SectionExtraction:
    """Extract one contour per connected component of ``geozone`` on a cross-section.

    ``samples`` holds every sample of the cross-section, all geozones, since
    boundary entropy needs the label mixture.
    """
    z = samples[0].z if samples else float("nan")
    spacing = median_spacing(sample_coordinates(samples))
    r = params.radius or RADIUS_FACTOR * spacing
    out = SectionExtraction(z, geozone, r, spacing)

    members = [s for s in samples if s.geozone == geozone]
    if not members or r <= 0:
        out.flags.append(Flag("EmptyInput", f"no usable '{geozone}' samples at z={z}"))
        logger.warning("No usable '%s' samples at z=%s", geozone, z)
        return out

    entropy = section_entropy(samples, r)
    for component in connect_components(members, r):
        if len(component) < params.min_component_size:
            out.rejects.append({"component": component.id, "reason": "too few samples", "n_samples": len(component)})
            continue
        flagged = flag_component(component, samples, r, params, entropy)
        try:
            extracted = extract_component(flagged, r, params)
        except (TooFewBoundarySamples, DegenerateContour) as err:
            out.rejects.append({"component": component.id, "reason": str(err), "n_samples": len(component)})
            continue
        out.contours.append(extracted)
        out.flags.extend(
            Flag(f.code, f"z={z} {geozone} component {component.id}: {f.message}") for f in extracted.flags
        )

    logger.info(
        "z=%s %s: %d contour(s), %d reject(s)", z, geozone, len(out.contours), len(out.rejects)
    )
    return out
