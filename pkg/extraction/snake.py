"""
Gradient vector flow and the semi-implicit active contour that rides it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy import ndimage

from core.contours import is_simple, remove_loops, resample_contour
from core.errors import Flag
from core.geometry import GRID, Contour, ScalarGrid, VectorGrid

logger = logging.getLogger(__name__)

GVF_TOLERANCE = 1e-4


@dataclass(frozen=True)
class SnakeParams:
    alpha: float = 0.1
    beta: float = 0.5
    tau: float = 1.0
    max_iters: int = 600
    n_points: int = 200
    redistribute_every: int = 10
    tolerance: float = 0.05
    # far-field speed (px/iteration) where the flow is weaker than near edges
    far_speed: float = 1.0
    near_edge_px: float = 2.0

    def __post_init__(self):
        for name in ("alpha", "beta", "tau", "tolerance", "far_speed", "near_edge_px"):
            if not getattr(self, name) > 0:
                raise ValueError(f"snake {name} must be positive")
        if self.n_points < 8 or self.max_iters < 1 or self.redistribute_every < 1:
            raise ValueError("snake n_points must be >= 8 and iteration counts >= 1")


@dataclass(frozen=True, eq=False)
class SnakeResult:
    contour: Contour
    converged: bool
    iterations: int
    flags: List[Flag] = field(default_factory=list)


def compute_gvf(edge_map: ScalarGrid, mu: float = 0.2, iters: int = 400) -> VectorGrid:
    """Gradient vector flow of an edge map by explicit diffusion.

    The step ``1 / (4 mu + max|grad f|^2)`` keeps every update coefficient
    non-negative, which is inside the ``1 / (4 mu)`` bound.
    """
    if not mu > 0:
        raise ValueError(f"GVF mu must be positive, got {mu}")
    f = edge_map.values
    fy, fx = np.gradient(f)
    mag2 = fx ** 2 + fy ** 2
    dt = 1.0 / (4.0 * mu + float(mag2.max()))

    u, v = fx.copy(), fy.copy()
    for it in range(iters):
        du = dt * (mu * ndimage.laplace(u, mode="nearest") - (u - fx) * mag2)
        dv = dt * (mu * ndimage.laplace(v, mode="nearest") - (v - fy) * mag2)
        u += du
        v += dv
        change = max(float(np.abs(du).max()), float(np.abs(dv).max()))
        if change < GVF_TOLERANCE:
            logger.debug("GVF settled after %d iterations", it + 1)
            break
    return VectorGrid(edge_map.frame, u, v)


def far_field_normalized(gvf: VectorGrid, edge_map: ScalarGrid, params: SnakeParams = SnakeParams()) -> VectorGrid:
    """Force field for the snake: raw flow near edges, unit-speed direction elsewhere.

    This is an extension of the plain GVF force. Diffused flow decays with
    distance from the edges, so far from them only its direction is kept and
    rescaled to ``far_speed``; within ``near_edge_px`` of an edge pixel the
    field is used as computed.
    """
    distance = ndimage.distance_transform_edt(edge_map.values <= 0)
    mag = gvf.magnitude
    far = (distance > params.near_edge_px) & (mag > 0)
    scale = np.ones_like(mag)
    scale[far] = params.far_speed / mag[far]
    return VectorGrid(gvf.frame, gvf.u * scale, gvf.v * scale)


def internal_energy_inverse(n: int, alpha: float, beta: float, tau: float) -> np.ndarray:
    """``(I + tau A)^-1`` for the closed pentadiagonal elasticity/rigidity matrix."""
    eye = np.eye(n)
    a = np.roll(eye, -1, axis=0) + np.roll(eye, -1, axis=1) - 2 * eye
    b = (
        np.roll(eye, -2, axis=0) + np.roll(eye, -2, axis=1)
        - 4 * np.roll(eye, -1, axis=0) - 4 * np.roll(eye, -1, axis=1)
        + 6 * eye
    )
    return np.linalg.inv(eye + tau * (-alpha * a + beta * b))


def bounding_box_contour(grid_points: np.ndarray, padding: float, n: int) -> Contour:
    lo = grid_points.min(axis=0) - padding
    hi = grid_points.max(axis=0) + padding
    box = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
    return resample_contour(Contour(box, True, GRID), n)


def _sample(field_: np.ndarray, pts: np.ndarray) -> np.ndarray:
    return ndimage.map_coordinates(field_, [pts[:, 1], pts[:, 0]], order=1, mode="nearest")


def evolve_active_contour(gvf: VectorGrid, init: Contour, params: SnakeParams = SnakeParams()) -> SnakeResult:
    """Semi-implicit snake ``x <- (I + tau A)^-1 (x + tau F(x))`` in the grid frame.

    Converges when the mean point step falls under ``tolerance``. As an extra
    rule on top of that test, the largest single step must also be under
    ``10 * tolerance``. Points are redistributed by arc length every
    ``redistribute_every`` iterations; a contour that is not simple after the
    last iteration has its loops cut.
    """
    n = params.n_points
    pts = resample_contour(init, n).points.copy()
    inv = internal_energy_inverse(n, params.alpha, params.beta, params.tau)
    ny, nx = gvf.frame.shape
    flags: List[Flag] = []
    converged = False

    it = 0
    for it in range(1, params.max_iters + 1):
        force = np.column_stack([_sample(gvf.u, pts), _sample(gvf.v, pts)])
        moved = inv @ (pts + params.tau * force)
        moved[:, 0] = np.clip(moved[:, 0], 0, nx - 1)
        moved[:, 1] = np.clip(moved[:, 1], 0, ny - 1)
        step = np.hypot(*(moved - pts).T)
        pts = moved
        if float(step.mean()) < params.tolerance and float(step.max()) < 10 * params.tolerance:
            converged = True
            break
        if it % params.redistribute_every == 0:
            pts = resample_contour(Contour(pts, True, GRID), n).points.copy()

    contour = resample_contour(Contour(pts, True, GRID), n)
    if not converged:
        flags.append(Flag("NonConvergence", f"snake stopped after {it} iterations"))
        logger.warning("Active contour did not converge in %d iterations", it)

    if not is_simple(contour):
        pieces = remove_loops(contour)
        if pieces:
            contour = resample_contour(pieces[0], n)
        flags.append(Flag("SelfIntersection", "snake self-intersected; loop knots removed"))
        logger.warning("Active contour self-intersected; kept largest loop")

    return SnakeResult(contour.counter_clockwise(), converged, it, flags)
