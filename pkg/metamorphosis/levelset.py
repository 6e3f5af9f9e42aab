"""
Level-set morphing of a source region into a target region.

The level set starts as the source SDF and is driven by
``phi_t = D(x) |grad phi|`` with the speed ``D`` equal to the target SDF
(inside positive): interface pixels inside the target expand, those outside
contract, and the interface settles on the target's zero set.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from core.errors import CflViolation, Flag
from core.geometry import Contour, GridFrame, ScalarGrid, require_same_frame
from core.sdf import redistance, union_signed_distance

logger = logging.getLogger(__name__)

INTERFACE_HALF_WIDTH = 0.5


@dataclass(frozen=True)
class MorphParams:
    cfl: float = 0.45
    redistance_every: int = 20
    max_steps: int = 2000
    band: float = 2.0
    tolerance: float = 0.5
    min_particles: int = 64
    particle_spacing: float = 2.0
    d_div: float = 2.0
    d_branch: float = 3.0
    anchor_radius: float = 10.0
    projection_cap: float = 1.0
    levels: int = 9
    backtracking: bool = True

    def __post_init__(self):
        if not 0 < self.cfl <= 0.45:
            raise ValueError("metamorphosis.cfl must lie in (0, 0.45]")
        if self.min_particles < 16:
            raise ValueError("metamorphosis.min_particles must be at least 16")
        if self.levels < 2:
            raise ValueError("metamorphosis.levels must be at least 2")
        for name in ("redistance_every", "max_steps", "band", "tolerance", "particle_spacing",
                     "d_div", "d_branch", "anchor_radius", "projection_cap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"metamorphosis.{name} must be positive")


@dataclass(frozen=True, eq=False)
class LevelSetState:
    phi: ScalarGrid
    target_sdf: ScalarGrid
    step_index: int = 0
    dt: float = 0.0
    converged: bool = False

    @property
    def time(self) -> float:
        return self.step_index * self.dt

    def interface_pixels(self) -> np.ndarray:
        """Pixels with ``|phi| <= 0.5`` as (gx, gy) integer pairs."""
        gy, gx = np.nonzero(np.abs(self.phi.values) <= INTERFACE_HALF_WIDTH)
        return np.column_stack([gx, gy])


@dataclass(eq=False)
class MorphResult:
    snapshots: List[np.ndarray]
    arrival_time: ScalarGrid
    final: LevelSetState
    converged: bool
    steps: int
    deviations: List[float] = field(default_factory=list)
    flags: List[Flag] = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.snapshots)) * self.final.dt


def _upwind_gradients(phi: np.ndarray):
    """First-order Godunov gradient norms for outward (``D > 0``) and inward motion."""
    p = np.pad(phi, 1, mode="edge")
    c = p[1:-1, 1:-1]
    dxm = c - p[1:-1, :-2]
    dxp = p[1:-1, 2:] - c
    dym = c - p[:-2, 1:-1]
    dyp = p[2:, 1:-1] - c
    expand = np.sqrt(
        np.minimum(dxm, 0) ** 2 + np.maximum(dxp, 0) ** 2
        + np.minimum(dym, 0) ** 2 + np.maximum(dyp, 0) ** 2
    )
    shrink = np.sqrt(
        np.maximum(dxm, 0) ** 2 + np.minimum(dxp, 0) ** 2
        + np.maximum(dym, 0) ** 2 + np.minimum(dyp, 0) ** 2
    )
    return expand, shrink


def stable_dt(target_sdf: ScalarGrid, cfl: float = 0.45) -> float:
    top = float(np.abs(target_sdf.values).max())
    return cfl / top if top > 0 else 1.0


def morph_step(state: LevelSetState, redistance_every: int = 20, cfl: float = 0.45) -> LevelSetState:
    """Advance one explicit upwind step; re-distance every ``redistance_every`` steps.

    Raises:
        CflViolation: when ``dt * max|D|`` exceeds ``cfl`` pixels.
    """
    require_same_frame(state.phi.frame, state.target_sdf.frame)
    D = state.target_sdf.values
    reach = state.dt * float(np.abs(D).max())
    if reach > cfl + 1e-12:
        logger.error("CFL violated: dt*max|D| = %.4f px", reach)
        raise CflViolation(f"dt*max|D| = {reach:.4f} px exceeds {cfl}")

    phi = state.phi.values
    expand, shrink = _upwind_gradients(phi)
    nxt = phi + state.dt * (np.maximum(D, 0) * expand + np.minimum(D, 0) * shrink)
    step = state.step_index + 1
    if step % redistance_every == 0:
        nxt = redistance(nxt)
    return LevelSetState(state.phi.with_values(nxt), state.target_sdf, step, state.dt, state.converged)


def band_deviation(phi: np.ndarray, target: np.ndarray, band: float = 2.0) -> float:
    """``max |phi - target|`` over the pixels within ``band`` of the target interface."""
    mask = np.abs(target) <= band
    if not mask.any():
        return float("inf")
    return float(np.abs(phi - target)[mask].max())


def _as_list(contours: Union[Contour, Sequence[Contour]]) -> List[Contour]:
    return [contours] if isinstance(contours, Contour) else list(contours)


def run_morph(
    source: Union[Contour, Sequence[Contour]],
    target: Union[Contour, Sequence[Contour]],
    frame: GridFrame,
    params: MorphParams = MorphParams(),
    on_step: Optional[Callable[[LevelSetState, LevelSetState], None]] = None,
) -> MorphResult:
    """Iterate ``morph_step`` until the interface settles on the target.

    Convergence is tested at every re-distancing epoch. Interface snapshots
    are kept for every step together with the first-crossing time of each
    pixel. ``on_step(previous, current)`` runs after every step (particle
    advection hooks in here).
    """
    phi0 = union_signed_distance(_as_list(source), frame)
    gamma = union_signed_distance(_as_list(target), frame)
    dt = stable_dt(gamma, params.cfl)
    state = LevelSetState(phi0, gamma, 0, dt)

    arrival = np.full(frame.shape, np.nan)
    arrival[np.abs(phi0.values) <= INTERFACE_HALF_WIDTH] = 0.0
    inside0 = phi0.values > 0
    snapshots = [state.interface_pixels()]
    deviations = [band_deviation(phi0.values, gamma.values, params.band)]
    converged = deviations[0] <= params.tolerance

    while not converged and state.step_index < params.max_steps:
        nxt = morph_step(state, params.redistance_every, params.cfl)
        if on_step is not None:
            on_step(state, nxt)
        flipped = np.isnan(arrival) & ((nxt.phi.values > 0) != inside0)
        arrival[flipped] = nxt.time
        snapshots.append(nxt.interface_pixels())
        if nxt.step_index % params.redistance_every == 0:
            deviation = band_deviation(nxt.phi.values, gamma.values, params.band)
            deviations.append(deviation)
            logger.debug("step %d: band deviation %.3f px", nxt.step_index, deviation)
            converged = deviation <= params.tolerance
        state = nxt

    flags: List[Flag] = []
    if not converged:
        flags.append(Flag("NonConvergence", f"level set still {deviations[-1]:.2f} px off after {state.step_index} steps"))
        logger.warning("Morph did not converge in %d steps", state.step_index)
    else:
        logger.debug("Morph converged after %d steps", state.step_index)
    final = replace(state, converged=converged)
    return MorphResult(snapshots, ScalarGrid(frame, arrival), final, converged, state.step_index, deviations, flags)
