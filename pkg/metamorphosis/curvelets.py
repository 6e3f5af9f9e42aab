"""
Curvelets: wavefront pixels the particles failed to track, and their
backward matching through time to the point they branched from.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.interpolate import splev, splprep
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from core.contours import nearest_on_contour
from core.errors import Flag
from core.geometry import GRID, Contour
from metamorphosis.particles import Particle

logger = logging.getLogger(__name__)

EIGHT_NEIGHBOURS = np.ones((3, 3), dtype=bool)
MIN_CURVELET_POINTS = 8
SPLINE_TOLERANCE = 1.0
MATCH_RADIUS = 3.0


@dataclass(eq=False)
class Curvelet:
    t: int
    pixels: np.ndarray
    ordered: Optional[np.ndarray] = None
    kappa: Optional[np.ndarray] = None
    endpoints: Tuple[int, ...] = ()

    def __len__(self) -> int:
        return len(self.pixels)

    @property
    def length(self) -> float:
        path = self.ordered if self.ordered is not None else self.pixels
        if len(path) < 2:
            return 0.0
        return float(np.sum(np.hypot(*np.diff(path, axis=0).T)))


@dataclass(eq=False)
class CurveletTrack:
    """One point index of a curvelet family followed backward through time.

    ``points`` run forward in time from ``t_start`` (the branching end) to
    ``t_end``.
    """

    family: int
    index: int
    t_start: int
    t_end: int
    points: np.ndarray
    orphan: bool = False


@dataclass(eq=False)
class BacktrackResult:
    tracks: List[CurveletTrack] = field(default_factory=list)
    flags: List[Flag] = field(default_factory=list)


def detect_uncovered_curvelets(
    snapshots: Sequence[np.ndarray],
    particles: Sequence[Particle],
    shape: Tuple[int, int],
    d_div: float = 2.0,
) -> List[List[Curvelet]]:
    """Per step, 8-connected chains of interface pixels farther than ``d_div`` from any live particle."""
    out: List[List[Curvelet]] = []
    for t, pixels in enumerate(snapshots):
        if len(pixels) == 0:
            out.append([])
            continue
        live = [p.position_at(t) for p in particles]
        live = [p for p in live if p is not None]
        if live:
            dist, _ = cKDTree(np.array(live)).query(pixels.astype(float))
            loose = pixels[dist > d_div]
        else:
            loose = pixels
        if len(loose) == 0:
            out.append([])
            continue
        mask = np.zeros(shape, dtype=bool)
        mask[loose[:, 1], loose[:, 0]] = True
        labels, count = ndimage.label(mask, structure=EIGHT_NEIGHBOURS)
        step = []
        for k in range(1, count + 1):
            gy, gx = np.nonzero(labels == k)
            step.append(Curvelet(t, np.column_stack([gx, gy])))
        out.append(step)
    found = sum(len(s) for s in out)
    if found:
        logger.debug("%d uncovered curvelet(s) over %d step(s)", found, len(snapshots))
    return out


def _pixel_graph(pixels: np.ndarray):
    tree = cKDTree(pixels.astype(float))
    pairs = tree.query_pairs(math.sqrt(2) + 1e-9, output_type="ndarray")
    if len(pairs) == 0:
        return coo_matrix((len(pixels), len(pixels))).tocsr(), np.zeros(len(pixels), dtype=int), pairs
    w = np.hypot(*(pixels[pairs[:, 0]] - pixels[pairs[:, 1]]).T)
    n = len(pixels)
    graph = coo_matrix((w, (pairs[:, 0], pairs[:, 1])), shape=(n, n)).tocsr()
    graph = (graph + graph.T).tocsr()
    degree = np.bincount(pairs.ravel(), minlength=n)
    return graph, degree, pairs


def _path(predecessors: np.ndarray, end: int) -> List[int]:
    path = [end]
    while predecessors[path[-1]] >= 0:
        path.append(int(predecessors[path[-1]]))
    return path[::-1]


def order_chain(pixels: np.ndarray) -> Tuple[np.ndarray, Tuple[int, ...]]:
    """Order an 8-connected pixel chain along its longest geodesic path.

    Endpoints are pixels with a single chain neighbour. A closed loop is cut
    next to its lexicographically first pixel. Side branches are dropped.
    Returns the ordered pixels and the indices (into ``pixels``) of the
    endpoints found.
    """
    n = len(pixels)
    if n == 1:
        return pixels.copy(), (0,)
    graph, degree, pairs = _pixel_graph(pixels)
    ends = tuple(int(i) for i in np.flatnonzero(degree == 1))
    if len(ends) >= 2:
        dist, pred = dijkstra(graph, directed=False, indices=list(ends), return_predecessors=True)
        sub = dist[:, list(ends)]
        sub[~np.isfinite(sub)] = -1.0
        a, b = np.unravel_index(int(np.argmax(sub)), sub.shape)
        order = _path(pred[a], ends[b])
    else:
        start = ends[0] if ends else int(np.lexsort((pixels[:, 1], pixels[:, 0]))[0])
        graph = graph.tolil()
        neighbours = sorted(int(j) for j in graph.rows[start])
        if neighbours and not ends:
            graph[start, neighbours[0]] = 0
            graph[neighbours[0], start] = 0
        graph = graph.tocsr()
        graph.eliminate_zeros()
        dist, pred = dijkstra(graph, directed=False, indices=start, return_predecessors=True)
        dist[~np.isfinite(dist)] = -1.0
        order = _path(pred, int(np.argmax(dist)))
    return pixels[order], ends


def regularize(points: np.ndarray, n_points: int, tolerance: float = SPLINE_TOLERANCE) -> np.ndarray:
    """Smoothing-spline fit of an ordered pixel chain, resampled to ``n_points`` evenly in arc length.

    The smoothing factor is halved until every pixel lies within
    ``tolerance`` of the fitted curve.
    """
    pts = np.asarray(points, dtype=float)
    if len(pts) == 1:
        return np.repeat(pts, n_points, axis=0)
    if len(pts) <= 3:
        curve = pts
    else:
        s = len(pts) * 0.25
        curve = pts
        for _ in range(8):
            tck, _u = splprep([pts[:, 0], pts[:, 1]], s=s, k=3)
            dense = np.column_stack(splev(np.linspace(0.0, 1.0, 8 * len(pts)), tck))
            worst = float(cKDTree(dense).query(pts)[0].max())
            if worst <= tolerance:
                curve = dense
                break
            s *= 0.5
    seg = np.hypot(*np.diff(curve, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    if cum[-1] <= 0:
        return np.repeat(curve[:1], n_points, axis=0)
    s_new = np.linspace(0.0, cum[-1], n_points)
    return np.column_stack([np.interp(s_new, cum, curve[:, 0]), np.interp(s_new, cum, curve[:, 1])])


def curvelet_points(length: float) -> int:
    return max(MIN_CURVELET_POINTS, int(math.ceil(length / 3.0)))


def prepare(curvelet: Curvelet, n_points: Optional[int] = None) -> Curvelet:
    ordered, ends = order_chain(curvelet.pixels)
    curvelet.ordered = ordered
    curvelet.endpoints = ends
    n = n_points or curvelet_points(curvelet.length)
    curvelet.kappa = regularize(ordered, n)
    return curvelet


def _map_part(points: np.ndarray, kappa: np.ndarray) -> np.ndarray:
    """Spread a run of family points over the stretch of ``kappa`` between its projected endpoints."""
    line = Contour(kappa, closed=False, frame_tag=GRID)
    if len(line) < 2:
        return np.repeat(line.points[:1], len(points), axis=0)
    arc, _, _ = nearest_on_contour(line, points[[0, -1]])
    seg = np.hypot(*np.diff(line.points, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = np.linspace(arc[0], arc[1], len(points))
    return np.column_stack([np.interp(s, cum, line.points[:, 0]), np.interp(s, cum, line.points[:, 1])])


def _runs(owner: np.ndarray):
    """Contiguous index runs of equal, non-negative owner labels."""
    start = 0
    for i in range(1, len(owner) + 1):
        if i == len(owner) or owner[i] != owner[start]:
            if owner[start] >= 0:
                yield start, i, int(owner[start])
            start = i


def backtrack_curvelets(
    curvelets: Sequence[Sequence[Curvelet]],
    match_radius: float = MATCH_RADIUS,
) -> BacktrackResult:
    """Follow curvelet families backward from the last step to where they vanish.

    A family is the regularized point set of a curvelet with a fixed point
    count. Going from step t+1 to t, each family point takes the nearest
    step-t curvelet pixel within ``match_radius`` as its owner; contiguous runs
    with one owner are mapped onto that owner's regularized curve. Points with
    no owner end their track, which leaves the track's earliest point at the
    branching location. Step-t curvelets claimed by no family start new
    families; away from the last step they are orphans.
    """
    result = BacktrackResult()
    if not curvelets or not any(curvelets):
        return result
    last = len(curvelets) - 1

    # family -> (current points, active mask, per-index history newest first)
    families: Dict[int, dict] = {}
    next_family = 0

    def start_family(c: Curvelet, t: int):
        nonlocal next_family
        kappa = c.kappa if c.kappa is not None else prepare(c).kappa
        families[next_family] = {
            "points": kappa.copy(),
            "active": np.ones(len(kappa), dtype=bool),
            "history": [[p.copy()] for p in kappa],
            "t_end": t,
            "t_first": np.full(len(kappa), t),
            "orphan": t != last,
        }
        if t != last:
            result.flags.append(Flag("OrphanCurvelet", f"curvelet at step {t} has no later match"))
        next_family += 1

    for c in curvelets[last]:
        start_family(c, last)

    for t in range(last - 1, -1, -1):
        step = list(curvelets[t])
        claimed = set()
        if step and families:
            for c in step:
                prepare(c)
            pix = np.vstack([c.pixels for c in step]).astype(float)
            owners = np.concatenate([np.full(len(c.pixels), k) for k, c in enumerate(step)])
            tree = cKDTree(pix)
            for fam in families.values():
                if not fam["active"].any():
                    continue
                dist, idx = tree.query(fam["points"])
                owner = np.where(fam["active"] & (dist <= match_radius), owners[idx], -1)
                fam["active"] &= owner >= 0
                for lo, hi, k in _runs(owner):
                    mapped = _map_part(fam["points"][lo:hi], step[k].kappa)
                    fam["points"][lo:hi] = mapped
                    for j in range(lo, hi):
                        fam["history"][j].append(mapped[j - lo].copy())
                        fam["t_first"][j] = t
                    claimed.add(k)
        for k, c in enumerate(step):
            if k not in claimed:
                start_family(c, t)

    for fid, fam in families.items():
        for j, hist in enumerate(fam["history"]):
            pts = np.array(hist[::-1])
            result.tracks.append(
                CurveletTrack(fid, j, int(fam["t_first"][j]), fam["t_end"], pts, fam["orphan"])
            )
    logger.debug("Backtracked %d famil(ies) into %d track(s)", len(families), len(result.tracks))
    return result
