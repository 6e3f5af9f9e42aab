"""Edge structure synthesis from sparse boundary samples."""
from __future__ import annotations

import logging
from typing import Iterable, Optional, Tuple

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from skimage.draw import line

from core.errors import TooFewBoundarySamples
from core.geometry import GridFrame, ScalarGrid

logger = logging.getLogger(__name__)

CLOSING_ELEMENT = np.ones((3, 3), dtype=bool)


def _neighbour_pairs(points: np.ndarray, k: int) -> set:
    k = min(k, len(points) - 1)
    _, idx = cKDTree(points).query(points, k=k + 1)
    pairs = set()
    for i, row in enumerate(np.atleast_2d(idx)):
        for j in [j for j in row if j != i][:k]:
            pairs.add((min(i, int(j)), max(i, int(j))))
    return pairs


def synthesize_edge_map(
    boundary_samples: np.ndarray,
    k_struct: int,
    frame: GridFrame,
    extra_segments: Optional[Iterable[Tuple[int, int]]] = None,
) -> ScalarGrid:
    """Binary edge image joining every boundary sample to its ``k_struct`` nearest peers.

    ``boundary_samples`` are world coordinates; ``extra_segments`` are index
    pairs into them (junction links) rasterized alongside.
    """
    pts = np.asarray(boundary_samples, dtype=float).reshape(-1, 2)
    if len(pts) < 3:
        raise TooFewBoundarySamples(f"Edge synthesis needs 3 boundary samples, got {len(pts)}")

    g = np.rint(frame.world_to_grid(pts)).astype(int)
    ny, nx = frame.shape
    g[:, 0] = np.clip(g[:, 0], 0, nx - 1)
    g[:, 1] = np.clip(g[:, 1], 0, ny - 1)

    pairs = _neighbour_pairs(frame.world_to_grid(pts), k_struct)
    if extra_segments:
        pairs |= {(min(i, j), max(i, j)) for i, j in extra_segments}

    energy = np.zeros(frame.shape)
    for i, j in sorted(pairs):
        rr, cc = line(g[i, 1], g[i, 0], g[j, 1], g[j, 0])
        np.add.at(energy, (rr, cc), 1.0)

    edges = ndimage.binary_closing(energy > 0, structure=CLOSING_ELEMENT)
    # closing erodes against the zero border; keep every rasterized pixel
    edges |= energy > 0
    logger.debug("Edge map: %d segments, %d edge pixels", len(pairs), int(edges.sum()))
    return ScalarGrid(frame, edges.astype(float))
