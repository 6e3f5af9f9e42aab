"""
Region association between two successive cross-sections.

Each source spreads a Gaussian likelihood around its centroid whose width
adapts to the consensus of nearest source-target distances; a target is
associated when a high enough percentile of its pixels is likely.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from core.contours import polygon_area_centroid, rasterize
from core.errors import EmptyTargetRegion, NoTargets
from core.geometry import DEFAULT_GRID_TARGET, DEFAULT_MARGIN, Contour, GridFrame

logger = logging.getLogger(__name__)

ASSOCIATION_THRESHOLD = 0.5
CENTROID = "centroid"
REACH = "reach"
DISTANCES = (CENTROID, REACH)


@dataclass(frozen=True, eq=False)
class Region:
    """A closed contour with its moments, in world coordinates."""

    id: int
    contour: Contour
    area: float = field(init=False)
    centroid: np.ndarray = field(init=False)

    def __post_init__(self):
        area, centroid = polygon_area_centroid(self.contour)
        object.__setattr__(self, "area", area)
        object.__setattr__(self, "centroid", centroid)

    @property
    def span(self) -> float:
        return math.sqrt(self.area / math.pi)

    def translated(self, offset) -> "Region":
        return Region(self.id, self.contour.translated(offset))


@dataclass(frozen=True, eq=False)
class AssociationModel:
    d_min: np.ndarray
    mu_dmin: float
    sigma_dmin: float
    s_dmin: float
    nu: float
    mu_lower: float
    centroids: Dict[int, np.ndarray]
    lambdas: Dict[int, float]


@dataclass(frozen=True, eq=False)
class AssociationMatrix:
    A: np.ndarray
    source_ids: List[int]
    target_ids: List[int]

    def pairs(self):
        rows, cols = np.nonzero(self.A)
        return [(self.source_ids[i], self.target_ids[j]) for i, j in zip(rows, cols)]

    def targets_of(self, source_id: int) -> List[int]:
        i = self.source_ids.index(source_id)
        return [self.target_ids[j] for j in np.flatnonzero(self.A[i])]

    def sources_of(self, target_id: int) -> List[int]:
        j = self.target_ids.index(target_id)
        return [self.source_ids[i] for i in np.flatnonzero(self.A[:, j])]


def noise_factor(s_dmin: float, mu_lower: float) -> float:
    """Sigmoid in [2, 4): 2 under full consensus, approaching 4 as it is lost."""
    return 4.0 / (1.0 + math.exp(-s_dmin / mu_lower))


def region_distances(sources: Sequence[Region], targets: Sequence[Region], distance: str = CENTROID) -> np.ndarray:
    """Source x target distance matrix.

    ``centroid`` is the plain centroid distance. ``reach`` adds the target's
    span: how far a source must spread to cover the target, not just its
    center.
    """
    if distance not in DISTANCES:
        raise ValueError(f"Unknown region distance {distance!r}; expected one of {DISTANCES}")
    sc = np.array([s.centroid for s in sources])
    tc = np.array([t.centroid for t in targets])
    d = np.hypot(*(sc[:, None, :] - tc[None, :, :]).transpose(2, 0, 1))
    if distance == REACH:
        d = d + np.array([t.span for t in targets])[None, :]
    return d


def compute_dmin_stats(
    sources: Sequence[Region],
    targets: Sequence[Region],
    mu_lower: float,
    distance: str = CENTROID,
) -> AssociationModel:
    if not targets:
        raise NoTargets("Association needs at least one target region")
    if not sources:
        raise ValueError("Association needs at least one source region")
    if not mu_lower > 0:
        raise ValueError(f"mu_lower must be positive, got {mu_lower}")

    d_min = region_distances(sources, targets, distance).min(axis=1)
    mu = float(d_min.mean())
    sigma = math.sqrt(max(0.0, float(np.mean(d_min ** 2)) - mu ** 2))
    s = sigma / math.sqrt(len(sources))
    lambdas = {src.id: max(min(mu, src.span), mu_lower) for src in sources}
    return AssociationModel(
        d_min=d_min,
        mu_dmin=mu,
        sigma_dmin=sigma,
        s_dmin=s,
        nu=noise_factor(s, mu_lower),
        mu_lower=mu_lower,
        centroids={src.id: src.centroid for src in sources},
        lambdas=lambdas,
    )


def association_likelihood(x, source_id: int, model: AssociationModel) -> np.ndarray:
    """Unnormalized likelihood that world point(s) ``x`` belong to ``source_id``."""
    pts = np.asarray(x, dtype=float)
    dist = np.linalg.norm(pts - model.centroids[source_id], axis=-1)
    ratio = dist / model.lambdas[source_id]
    return np.exp(-(ratio ** 2) / (2.0 * model.nu ** 2))


def percentile_rank(source_area: float, target_area: float) -> float:
    return 50.0 * (1.0 + (1.0 - min(source_area / target_area, 1.0)))


def association_frame(regions: Sequence[Region], target: int = DEFAULT_GRID_TARGET, margin: int = DEFAULT_MARGIN) -> GridFrame:
    return GridFrame.covering(np.vstack([r.contour.points for r in regions]), target, margin)


def build_association_matrix(
    sources: Sequence[Region],
    targets: Sequence[Region],
    model: AssociationModel,
    frame: Optional[GridFrame] = None,
) -> AssociationMatrix:
    frame = frame or association_frame(list(sources) + list(targets))
    A = np.zeros((len(sources), len(targets)), dtype=int)
    for j, tgt in enumerate(targets):
        mask = rasterize(tgt.contour, frame)
        if not mask.any():
            raise EmptyTargetRegion(f"Target {tgt.id} covers no pixel of the association grid")
        gy, gx = np.nonzero(mask)
        pixels = frame.grid_to_world(np.column_stack([gx, gy]))
        for i, src in enumerate(sources):
            values = association_likelihood(pixels, src.id, model)
            score = np.percentile(values, percentile_rank(src.area, tgt.area))
            A[i, j] = int(score >= ASSOCIATION_THRESHOLD)
    logger.debug("Association matrix:\n%s", A)
    return AssociationMatrix(A, [s.id for s in sources], [t.id for t in targets])
