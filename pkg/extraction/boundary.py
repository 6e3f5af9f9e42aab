"""
Boundary sample detection.

Two complementary cues mark the samples that outline a component: label
entropy (transitions to another geozone) and orientation gaps (open edges
where the survey simply stops).
"""
from __future__ import annotations

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from core.geometry import SamplePoint, sample_coordinates
from extraction.components import Component

logger = logging.getLogger(__name__)

ENTROPY_EPS = 1e-12


def section_entropy(samples: Sequence[SamplePoint], r: float, eps: float = ENTROPY_EPS) -> Tuple[np.ndarray, list]:
    """Label entropy (bits) of every sample's radius-``r`` neighbourhood.

    The neighbourhood includes the sample itself, so an isolated sample has a
    single-label neighbourhood and zero entropy.
    """
    coords = sample_coordinates(samples)
    _, codes = np.unique([s.geozone for s in samples], return_inverse=True)
    neighbours = cKDTree(coords).query_ball_point(coords, r)
    entropy = np.zeros(len(coords))
    for n, nb in enumerate(neighbours):
        counts = np.bincount(codes[nb])
        p = counts[counts > 0] / len(nb)
        entropy[n] = max(0.0, -float(np.sum(p * np.log2(p + eps))))
    return entropy, neighbours


def detect_boundary_samples(
    component: Component,
    all_samples_in_section: Sequence[SamplePoint],
    r: float,
    t_entropy: float = 0.5,
    entropy: Optional[Tuple[np.ndarray, list]] = None,
) -> np.ndarray:
    """Flag component samples whose entropy reaches ``max(t_entropy, neighbourhood median)``.

    ``entropy`` may carry a precomputed :func:`section_entropy` result for the
    same section and radius.
    """
    if entropy is None:
        entropy = section_entropy(all_samples_in_section, r)
    h, neighbours = entropy
    tree = cKDTree(sample_coordinates(all_samples_in_section))
    _, where = tree.query(component.coordinates)

    flags = np.zeros(len(component), dtype=bool)
    for k, n in enumerate(where):
        median = float(np.median(h[neighbours[n]]))
        flags[k] = h[n] >= max(t_entropy, median)
    return flags


def close_open_edges(component: Component, k_orient: int = 12, t_orient: float = 2 * math.pi / 3) -> np.ndarray:
    """Flag samples whose K nearest neighbours leave an angular gap of at least ``t_orient``."""
    coords = component.coordinates
    n = len(coords)
    if n < k_orient + 1:
        return np.ones(n, dtype=bool)

    _, idx = cKDTree(coords).query(coords, k=k_orient + 1)
    flags = np.zeros(n, dtype=bool)
    for i in range(n):
        nb = [j for j in idx[i] if j != i][:k_orient]
        vec = coords[nb] - coords[i]
        angles = np.sort(np.arctan2(vec[:, 1], vec[:, 0]))
        gaps = np.diff(np.concatenate([angles, angles[:1] + 2 * math.pi]))
        flags[i] = gaps.max() >= t_orient
    return flags


def junction_links(
    coords: np.ndarray,
    boundary_flags: np.ndarray,
    gap_closure_flags: np.ndarray,
    k_joints: int,
    r: float,
) -> List[Tuple[int, int]]:
    """Extra edges tying gap-closure samples to nearby entropy samples.

    A gap-closure-only sample with an entropy sample within ``r`` sits at a
    junction; it is linked to up to ``k_joints`` entropy samples within ``2r``.
    Returned pairs index into ``coords``.
    """
    entropy_idx = np.flatnonzero(boundary_flags)
    closure_idx = np.flatnonzero(gap_closure_flags & ~boundary_flags)
    if len(entropy_idx) == 0 or len(closure_idx) == 0 or k_joints <= 0:
        return []
    tree = cKDTree(coords[entropy_idx])
    k = min(k_joints, len(entropy_idx))
    dist, nearest = tree.query(coords[closure_idx], k=k)
    dist = dist.reshape(len(closure_idx), k)
    nearest = nearest.reshape(len(closure_idx), k)
    links = []
    for row, i in enumerate(closure_idx):
        if dist[row, 0] > r:
            continue
        links.extend((int(i), int(entropy_idx[j])) for d, j in zip(dist[row], nearest[row]) if d <= 2 * r)
    return links
