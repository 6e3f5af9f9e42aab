"""Region growing over a kD-tree: samples linked by hops of at most ``r``."""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from core.errors import EmptyInput, ExtractionError
from core.geometry import SamplePoint, sample_coordinates

logger = logging.getLogger(__name__)

RADIUS_FACTOR = 2.2


@dataclass(frozen=True, eq=False)
class Component:
    """A connected set of same-geozone samples on one cross-section.

    ``indices`` point into the sample list the component was grown from.
    Flags stay ``None`` until boundary detection has run.
    """

    id: int
    indices: Tuple[int, ...]
    samples: Tuple[SamplePoint, ...]
    boundary_flags: Optional[np.ndarray] = None
    gap_closure_flags: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def coordinates(self) -> np.ndarray:
        return sample_coordinates(self.samples)

    @property
    def edge_flags(self) -> np.ndarray:
        """Samples fed to edge synthesis."""
        flags = np.zeros(len(self.samples), dtype=bool)
        if self.boundary_flags is not None:
            flags |= self.boundary_flags
        if self.gap_closure_flags is not None:
            flags |= self.gap_closure_flags
        return flags


def median_spacing(coords: np.ndarray) -> float:
    """Median nearest-neighbour distance; 0 for fewer than two points."""
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    if len(coords) < 2:
        return 0.0
    d, _ = cKDTree(coords).query(coords, k=2)
    return float(np.median(d[:, 1]))


def default_radius(coords: np.ndarray) -> float:
    return RADIUS_FACTOR * median_spacing(coords)


def connect_components(samples: Sequence[SamplePoint], r: float) -> List[Component]:
    """Partition samples into hop-connected components, ordered by smallest member index."""
    if not samples:
        raise EmptyInput("No samples to cluster")
    if not r > 0:
        raise ValueError(f"Neighbour radius must be positive, got {r}")
    if len({s.z for s in samples}) > 1 or len({s.geozone for s in samples}) > 1:
        raise ExtractionError("connect_components expects one cross-section and one geozone")

    coords = sample_coordinates(samples)
    tree = cKDTree(coords)
    labels = np.full(len(coords), -1, dtype=int)
    components: List[Component] = []

    for seed in range(len(coords)):
        if labels[seed] >= 0:
            continue
        cid = len(components)
        labels[seed] = cid
        members = [seed]
        queue = deque([seed])
        while queue:
            i = queue.popleft()
            for j in tree.query_ball_point(coords[i], r):
                if labels[j] < 0:
                    labels[j] = cid
                    members.append(j)
                    queue.append(j)
        members.sort()
        components.append(Component(cid, tuple(members), tuple(samples[i] for i in members)))

    logger.debug("Grew %d component(s) from %d samples (r=%.3f)", len(components), len(samples), r)
    return components
