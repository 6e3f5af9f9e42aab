"""
Translation estimation by FFT cross-correlation of a source mask against a
target value map (the target SDF, optionally overwritten by penalties and
boosted by rewards).

Lag convention: ``r[m] = sum_i u[i] * v[i + m]``, so a lag is the displacement
applied to the source mask.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import fft

from core.contours import polygon_area_centroid, rasterize
from core.errors import AllInadmissible
from core.geometry import Contour, GridFrame, ScalarGrid, require_same_frame
from core.sdf import signed_distance
from correspondence.association import Region, association_frame

logger = logging.getLogger(__name__)

PENALTY = -1.0e6
# corridor reward is this multiple of the largest target SDF value
REWARD_SCALE = 2.0
MAX_EXHAUSTIVE_PORTS = 6
# FFT peaks are re-scored exactly among this many leading candidates
RESCORE_CANDIDATES = 256
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class AlignmentWeights:
    """Value-map overrides used by constrained alignment.

    ``penalty`` replaces pixels a source may not cover; the corridor between
    several targets gains ``reward_scale`` times the largest SDF value.
    ``corridor_width`` is in world units and defaults to the source span.
    """

    penalty: float = PENALTY
    reward_scale: float = REWARD_SCALE
    corridor_width: Optional[float] = None

    def __post_init__(self):
        if not self.penalty < 0:
            raise ValueError("penalty must be negative")
        if not self.reward_scale >= 0:
            raise ValueError("reward_scale must be non-negative")
        if self.corridor_width is not None and not self.corridor_width > 0:
            raise ValueError("corridor_width must be positive")


@dataclass(frozen=True, eq=False)
class CorrelationSurface:
    """Full cross-correlation over lags ``-(n-1) .. n-1`` on each axis."""

    values: np.ndarray
    ny: int
    nx: int

    @property
    def lags_y(self) -> np.ndarray:
        return np.arange(-(self.ny - 1), self.ny)

    @property
    def lags_x(self) -> np.ndarray:
        return np.arange(-(self.nx - 1), self.nx)

    def at(self, mx: int, my: int) -> float:
        return float(self.values[my + self.ny - 1, mx + self.nx - 1])


@dataclass(frozen=True, eq=False)
class DisplacementEstimate:
    source_id: int
    m_px: Tuple[int, int]
    m_world: Tuple[float, float]
    score: float
    constrained: bool = False
    straddles: bool = False
    overlaps: Dict[int, int] = field(default_factory=dict)
    mask_pixels: int = 0

    def as_dict(self) -> dict:
        return {
            "source": self.source_id,
            "m_px": list(self.m_px),
            "m_world": list(self.m_world),
            "score": self.score,
            "constrained": self.constrained,
            "straddles": self.straddles,
            "overlaps": {str(k): v for k, v in self.overlaps.items()},
            "mask_pixels": self.mask_pixels,
        }


@dataclass(frozen=True)
class Port:
    source: int
    start: float
    width: float

    @property
    def mid(self) -> float:
        return (self.start + self.width / 2.0) % TWO_PI

    def contains(self, angles: np.ndarray) -> np.ndarray:
        return np.mod(np.asarray(angles) - self.start, TWO_PI) < self.width


def cross_correlate_fft(source_mask: ScalarGrid, value_map: ScalarGrid) -> CorrelationSurface:
    require_same_frame(source_mask.frame, value_map.frame)
    u, v = source_mask.values, value_map.values
    ny, nx = u.shape
    shape = (fft.next_fast_len(2 * ny - 1, real=True), fft.next_fast_len(2 * nx - 1, real=True))
    spectrum = fft.rfft2(v, s=shape) * np.conj(fft.rfft2(u, s=shape))
    r = fft.irfft2(spectrum, s=shape)
    rows = np.arange(-(ny - 1), ny) % shape[0]
    cols = np.arange(-(nx - 1), nx) % shape[1]
    return CorrelationSurface(r[np.ix_(rows, cols)], ny, nx)


def shift_mask(mask: np.ndarray, m: Tuple[int, int]) -> np.ndarray:
    """Translate a boolean mask by ``m = (mx, my)``; pixels leaving the grid are dropped."""
    out = np.zeros_like(mask, dtype=bool)
    rows, cols = np.nonzero(mask)
    rows, cols = rows + m[1], cols + m[0]
    keep = (rows >= 0) & (rows < mask.shape[0]) & (cols >= 0) & (cols < mask.shape[1])
    out[rows[keep], cols[keep]] = True
    return out


def _exact_score(v: np.ndarray, rows: np.ndarray, cols: np.ndarray, mx: int, my: int) -> float:
    return float(np.sum(v[rows + my, cols + mx]))


def estimate_shift(
    source_mask: ScalarGrid,
    target_sdf: ScalarGrid,
    constraints: Optional[ScalarGrid] = None,
    source_id: int = -1,
    max_shift: Optional[float] = None,
) -> DisplacementEstimate:
    """Best admissible translation of ``source_mask`` onto the target value map.

    ``constraints`` overwrites the value map wherever it is finite (NaN means
    no override). Admissible lags keep the whole mask on the grid.
    """
    frame = target_sdf.frame
    require_same_frame(source_mask.frame, frame)
    v = np.array(target_sdf.values, dtype=float)
    constrained = False
    if constraints is not None:
        require_same_frame(constraints.frame, frame)
        override = np.isfinite(constraints.values)
        v[override] = constraints.values[override]
        constrained = bool(override.any())

    mask = source_mask.values > 0
    if not mask.any():
        raise AllInadmissible("Source mask is empty")
    rows, cols = np.nonzero(mask)
    ny, nx = mask.shape

    surface = cross_correlate_fft(ScalarGrid(frame, mask.astype(float)), ScalarGrid(frame, v))
    my_lo, my_hi = -int(rows.min()), ny - 1 - int(rows.max())
    mx_lo, mx_hi = -int(cols.min()), nx - 1 - int(cols.max())
    lag_y = np.arange(my_lo, my_hi + 1)
    lag_x = np.arange(mx_lo, mx_hi + 1)
    window = surface.values[my_lo + ny - 1:my_hi + ny, mx_lo + nx - 1:mx_hi + nx]
    LY, LX = np.meshgrid(lag_y, lag_x, indexing="ij")
    admissible = np.ones(window.shape, dtype=bool)
    if max_shift is not None:
        admissible &= np.hypot(LX, LY) <= max_shift
    if not admissible.any():
        raise AllInadmissible("Every lag pushes the source mask off the grid")

    scores = np.where(admissible, window, -np.inf).ravel()
    best_fft = scores.max()
    slack = 1e-8 * float(np.abs(v).max()) * len(rows) + 1e-9
    candidates = np.flatnonzero(scores >= best_fft - slack)
    if len(candidates) > RESCORE_CANDIDATES:
        candidates = candidates[np.argsort(-scores[candidates], kind="stable")[:RESCORE_CANDIDATES]]

    exact = [(_exact_score(v, rows, cols, int(LX.flat[k]), int(LY.flat[k])), int(LX.flat[k]), int(LY.flat[k])) for k in candidates]
    top = max(e[0] for e in exact)
    tol = 1e-9 * max(1.0, abs(top))
    ties = [(mx * mx + my * my, mx, my, s) for s, mx, my in exact if s >= top - tol]
    _, mx, my, score = min(ties)

    ps = frame.pixel_size
    return DisplacementEstimate(
        source_id=source_id,
        m_px=(mx, my),
        m_world=(mx * ps, my * ps),
        score=score,
        constrained=constrained,
        mask_pixels=int(len(rows)),
    )


def _wrap(angle):
    return np.mod(np.asarray(angle) + math.pi, TWO_PI) - math.pi


def allocate_ports(target: Contour, sources: Sequence[Tuple[np.ndarray, float]]) -> List[Port]:
    """Angular sectors about the target centroid, one per source, in input order.

    Widths are proportional to source areas; the circular ordering and
    rotation minimize the summed |mid-angle - bearing|.
    """
    n = len(sources)
    if n == 0:
        return []
    if n == 1:
        logger.debug("Single source: whole target is one port")
        return [Port(0, 0.0, TWO_PI)]

    _, center = polygon_area_centroid(target)
    offsets = np.array([np.asarray(c, dtype=float) - center for c, _ in sources])
    bearings = np.mod(np.arctan2(offsets[:, 1], offsets[:, 0]), TWO_PI)
    areas = np.array([float(a) for _, a in sources])
    widths = TWO_PI * areas / areas.sum()

    if n <= MAX_EXHAUSTIVE_PORTS:
        orders = [(0,) + p for p in itertools.permutations(range(1, n))]
    else:
        orders = [tuple(int(i) for i in np.argsort(bearings, kind="stable"))]

    best = None
    for order in orders:
        w = widths[list(order)]
        mid_offsets = np.cumsum(w) - w / 2.0
        b = bearings[list(order)]
        for theta0 in b - mid_offsets:
            cost = float(np.sum(np.abs(_wrap(theta0 + mid_offsets - b))))
            if best is None or cost < best[0] - 1e-12:
                best = (cost, order, theta0)

    _, order, theta0 = best
    ports: Dict[int, Port] = {}
    start = theta0
    for i in order:
        ports[i] = Port(i, float(np.mod(start, TWO_PI)), float(widths[i]))
        start += widths[i]
    return [ports[i] for i in range(n)]


def bearing_grid(frame: GridFrame, center_world: np.ndarray) -> np.ndarray:
    """Angle in [0, 2π) of every pixel center about a world point."""
    c = frame.world_to_grid(center_world)
    gy, gx = np.mgrid[0:frame.shape[0], 0:frame.shape[1]]
    return np.mod(np.arctan2(gy - c[1], gx - c[0]), TWO_PI)


def align_source(
    source: Region,
    targets: Sequence[Region],
    peers: Optional[Dict[int, Sequence[Region]]] = None,
    placed: Sequence[Region] = (),
    frame: Optional[GridFrame] = None,
    weights: AlignmentWeights = AlignmentWeights(),
) -> DisplacementEstimate:
    """Constrained alignment of one source against one or more targets.

    ``peers`` maps a target id to the other sources sharing it; their port
    sectors inside that target are penalized. ``placed`` are already-aligned
    sources whose footprint is penalized as well. With two or more targets the
    composite value map rewards the corridor between them.
    """
    peers = peers or {}
    regions = [source, *targets, *placed, *(p for ps in peers.values() for p in ps)]
    frame = frame or association_frame(regions)
    sdfs = np.stack([signed_distance(t.contour, frame).values for t in targets])
    value = sdfs.max(axis=0)
    constraints = np.full(frame.shape, np.nan)

    if len(targets) >= 2:
        width = (weights.corridor_width if weights.corridor_width is not None else source.span) / frame.pixel_size
        second = np.sort(sdfs, axis=0)[-2]
        corridor = second > -width
        value = value + np.where(corridor, weights.reward_scale * float(value.max()), 0.0)

    for k, tgt in enumerate(targets):
        others = list(peers.get(tgt.id, ()))
        if not others:
            continue
        # every sharer of a target must see the same port layout
        group = sorted([source, *others], key=lambda r: r.id)
        ports = allocate_ports(tgt.contour, [(r.centroid, r.area) for r in group])
        angles = bearing_grid(frame, tgt.centroid)
        inside = sdfs[k] > 0
        for region, port in zip(group, ports):
            if region.id != source.id:
                constraints[inside & port.contains(angles)] = weights.penalty

    for region in placed:
        constraints[rasterize(region.contour, frame)] = weights.penalty

    mask = rasterize(source.contour, frame)
    est = estimate_shift(
        ScalarGrid(frame, mask.astype(float)),
        ScalarGrid(frame, value),
        ScalarGrid(frame, constraints),
        source_id=source.id,
    )
    moved = shift_mask(mask, est.m_px)
    overlaps = {tgt.id: int(np.count_nonzero(moved & (sdfs[k] > 0))) for k, tgt in enumerate(targets)}
    return DisplacementEstimate(
        source_id=est.source_id,
        m_px=est.m_px,
        m_world=est.m_world,
        score=est.score,
        constrained=est.constrained,
        straddles=sum(1 for c in overlaps.values() if c > 0) >= 2,
        overlaps=overlaps,
        mask_pixels=est.mask_pixels,
    )


def align_multi_source_single_target(
    sources: Sequence[Region],
    target: Region,
    frame: Optional[GridFrame] = None,
    weights: AlignmentWeights = AlignmentWeights(),
) -> List[DisplacementEstimate]:
    """Share one target among several sources; larger sources are placed first."""
    frame = frame or association_frame([*sources, target])
    order = sorted(range(len(sources)), key=lambda i: (-sources[i].area, i))
    placed: List[Region] = []
    results: Dict[int, DisplacementEstimate] = {}
    for i in order:
        src = sources[i]
        others = [s for j, s in enumerate(sources) if j != i]
        est = align_source(src, [target], {target.id: others}, placed, frame, weights)
        results[i] = est
        placed.append(src.translated(est.m_world))
    return [results[i] for i in range(len(sources))]


def align_single_source_multi_target(
    source: Region,
    targets: Sequence[Region],
    frame: Optional[GridFrame] = None,
    weights: AlignmentWeights = AlignmentWeights(),
) -> DisplacementEstimate:
    """One source against several targets with a reward promoting cross-over."""
    return align_source(source, targets, frame=frame, weights=weights)
