"""
Particles riding the zero-interface of the morphing level set.

Each particle moves with the interface normal velocity ``D(x) n_out(x)``,
``n_out = -grad phi / |grad phi|`` (outward for an inside-positive level set),
and is then pulled back onto the new zero-interface by one Newton step.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
from scipy import ndimage

from core.contours import resample_contour
from core.geometry import Contour
from metamorphosis.levelset import LevelSetState, MorphParams

logger = logging.getLogger(__name__)

ALIVE = "alive"
LOST = "lost"
OUT_OF_GRID = "out_of_grid"


@dataclass(eq=False)
class Particle:
    id: int
    history: List[np.ndarray] = field(default_factory=list)
    status: str = ALIVE

    @property
    def alive(self) -> bool:
        return self.status == ALIVE

    @property
    def position(self) -> np.ndarray:
        return self.history[-1]

    def trajectory(self) -> np.ndarray:
        return np.array(self.history, dtype=float).reshape(-1, 2)

    def position_at(self, step: int):
        """Position after ``step`` steps, or None when the particle was gone by then."""
        return self.history[step] if step < len(self.history) else None


def particle_count(contour: Contour, params: MorphParams = MorphParams()) -> int:
    return max(params.min_particles, int(math.ceil(contour.perimeter / params.particle_spacing)))


def seed_particles(source: Contour, n: int) -> List[Particle]:
    """``n`` particles evenly spaced in arc length, half a spacing past the start vertex."""
    if n < 3:
        raise ValueError(f"seed_particles needs n >= 3, got {n}")
    pts = resample_contour(source, n, offset=0.5).points
    return [Particle(i, [p.copy()]) for i, p in enumerate(pts)]


def _bilinear(values: np.ndarray, pts: np.ndarray) -> np.ndarray:
    return ndimage.map_coordinates(values, [pts[:, 1], pts[:, 0]], order=1, mode="nearest")


def _gradient_at(phi: np.ndarray, pts: np.ndarray) -> np.ndarray:
    gy, gx = np.gradient(phi)
    return np.column_stack([_bilinear(gx, pts), _bilinear(gy, pts)])


def advect_particles(
    particles: Sequence[Particle],
    previous: LevelSetState,
    current: LevelSetState,
    params: MorphParams = MorphParams(),
) -> List[Particle]:
    """Move live particles by one level-set step and re-project onto the new interface.

    Particles whose projection exceeds ``params.projection_cap`` pixels are
    marked lost; particles leaving the grid are killed. Both keep the history
    they had before the failing step.
    """
    live = [p for p in particles if p.alive]
    if not live:
        return list(particles)
    pts = np.array([p.position for p in live])
    phi = previous.phi.values
    speed = _bilinear(previous.target_sdf.values, pts)
    grad = _gradient_at(phi, pts)
    norm = np.hypot(grad[:, 0], grad[:, 1])
    normal = np.divide(-grad, norm[:, None], out=np.zeros_like(grad), where=norm[:, None] > 1e-12)
    moved = pts + previous.dt * speed[:, None] * normal

    phi_new = current.phi.values
    value = _bilinear(phi_new, moved)
    grad = _gradient_at(phi_new, moved)
    norm2 = np.sum(grad * grad, axis=1)
    correction = np.divide(value[:, None] * grad, norm2[:, None], out=np.zeros_like(grad), where=norm2[:, None] > 1e-12)
    projected = moved - correction
    distance = np.hypot(correction[:, 0], correction[:, 1])

    ny, nx = current.phi.frame.shape
    inside = (projected[:, 0] >= 0) & (projected[:, 0] <= nx - 1) & (projected[:, 1] >= 0) & (projected[:, 1] <= ny - 1)
    for particle, p, d, ok in zip(live, projected, distance, inside):
        if not ok:
            particle.status = OUT_OF_GRID
            logger.debug("Particle %d left the grid at step %d", particle.id, current.step_index)
        elif d > params.projection_cap:
            particle.status = LOST
            logger.debug("Particle %d lost at step %d (projection %.2f px)", particle.id, current.step_index, d)
        else:
            particle.history.append(p)
    return list(particles)
