"""
Trajectory bundles: particle paths fused with backtracked curvelet tracks,
normalized so that every trajectory reaches the target at the same level.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from core.contours import densify, nearest_on_contour
from core.errors import Flag
from core.geometry import DEFAULT_GRID_TARGET, DEFAULT_MARGIN, Contour, GridFrame
from metamorphosis.curvelets import BacktrackResult, CurveletTrack, backtrack_curvelets, detect_uncovered_curvelets
from metamorphosis.levelset import MorphParams, run_morph
from metamorphosis.particles import Particle, advect_particles, seed_particles

logger = logging.getLogger(__name__)

PARTICLE = "particle"
CURVELET = "curvelet"
COVERAGE_RADIUS_PX = 2.0
ENDPOINT_TOLERANCE_PX = 2.0


@dataclass(eq=False)
class TrajectoryBundle:
    """Trajectories from source to target contours, one point per level.

    ``trajectories`` has shape (N, levels, 2). ``groups`` holds the
    (source id, target id) each trajectory belongs to and ``ring_position``
    its arc fraction along that target, which fixes the ring order. ``targets``
    holds the contours the trajectories reach; ``observed`` holds every
    contour seen at ``z_bottom``, matched or not (defaults to ``targets``).
    """

    geozone: str
    z_top: float
    z_bottom: float
    levels: int
    trajectories: np.ndarray
    provenance: List[str] = field(default_factory=list)
    groups: List[Tuple[int, int]] = field(default_factory=list)
    ring_position: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sources: Dict[int, Contour] = field(default_factory=dict)
    targets: Dict[int, Contour] = field(default_factory=dict)
    observed: Dict[int, Contour] = field(default_factory=dict)
    coverage: Dict[str, float] = field(default_factory=dict)
    flags: List[Flag] = field(default_factory=list)

    def __post_init__(self):
        self.trajectories = np.asarray(self.trajectories, dtype=float).reshape(-1, self.levels, 2)
        self.ring_position = np.asarray(self.ring_position, dtype=float).reshape(-1)
        if not self.observed:
            self.observed = dict(self.targets)

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def level_spacing(self) -> float:
        return abs(self.z_top - self.z_bottom) / (self.levels - 1)

    def fractional_level(self, z: float) -> float:
        return (self.z_top - z) / (self.z_top - self.z_bottom) * (self.levels - 1)

    def ring_groups(self) -> Dict[Tuple[int, int], np.ndarray]:
        """Trajectory indices per (source, target) group, in ring order."""
        out: Dict[Tuple[int, int], List[int]] = {}
        for i, g in enumerate(self.groups):
            out.setdefault(tuple(g), []).append(i)
        return {
            g: np.array(sorted(idx, key=lambda i: (self.ring_position[i], i)), dtype=int)
            for g, idx in sorted(out.items())
        }

    def as_dict(self) -> dict:
        return {
            "geozone": self.geozone,
            "z_top": self.z_top,
            "z_bottom": self.z_bottom,
            "levels": self.levels,
            "trajectories": self.trajectories.tolist(),
            "provenance": list(self.provenance),
            "groups": [list(g) for g in self.groups],
            "ring_position": self.ring_position.tolist(),
            "sources": {str(k): c.points.tolist() for k, c in sorted(self.sources.items())},
            "targets": {str(k): c.points.tolist() for k, c in sorted(self.targets.items())},
            "observed": {str(k): c.points.tolist() for k, c in sorted(self.observed.items())},
            "coverage": dict(sorted(self.coverage.items())),
            "flags": [f.as_dict() for f in self.flags],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrajectoryBundle":
        return cls(
            geozone=data["geozone"],
            z_top=float(data["z_top"]),
            z_bottom=float(data["z_bottom"]),
            levels=int(data["levels"]),
            trajectories=np.array(data["trajectories"], dtype=float),
            provenance=list(data.get("provenance", [])),
            groups=[tuple(int(v) for v in g) for g in data.get("groups", [])],
            ring_position=np.array(data.get("ring_position", []), dtype=float),
            sources={int(k): Contour(np.array(v)) for k, v in data.get("sources", {}).items()},
            targets={int(k): Contour(np.array(v)) for k, v in data.get("targets", {}).items()},
            observed={int(k): Contour(np.array(v)) for k, v in data.get("observed", {}).items()},
            coverage={k: float(v) for k, v in data.get("coverage", {}).items()},
            flags=[Flag(f["code"], f["message"]) for f in data.get("flags", [])],
        )


def normalize_trajectory(polyline: np.ndarray, levels: int) -> np.ndarray:
    """Resample a polyline to ``levels`` points of equal arc-length progress."""
    pts = np.asarray(polyline, dtype=float).reshape(-1, 2)
    seg = np.hypot(*np.diff(pts, axis=0).T) if len(pts) > 1 else np.zeros(0)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    if cum[-1] <= 0:
        return np.repeat(pts[:1], levels, axis=0)
    s = np.linspace(0.0, cum[-1], levels)
    return np.column_stack([np.interp(s, cum, pts[:, 0]), np.interp(s, cum, pts[:, 1])])


def _snap(point: np.ndarray, contours: Sequence[Contour]) -> Tuple[np.ndarray, int, float, float]:
    """Foot of ``point`` on the nearest contour: (foot, contour index, arc fraction, distance)."""
    best = None
    for k, c in enumerate(contours):
        arc, foot, dist = nearest_on_contour(c, point[None, :])
        if best is None or dist[0] < best[3]:
            best = (foot[0], k, float(arc[0]) / c.perimeter, float(dist[0]))
    return best


def trajectory_coverage(
    endpoints: np.ndarray,
    targets: Iterable[Contour],
    radius: float = COVERAGE_RADIUS_PX,
    spacing: float = 0.25,
) -> float:
    """Share of the target boundary length lying within ``radius`` of some trajectory endpoint."""
    samples = [densify(t, spacing) for t in targets]
    if not samples:
        return 0.0
    pts = np.vstack(samples)
    ends = np.asarray(endpoints, dtype=float).reshape(-1, 2)
    if len(ends) == 0:
        return 0.0
    dist, _ = cKDTree(ends).query(pts)
    return float(np.mean(dist <= radius))


@dataclass(eq=False)
class MergedTrajectories:
    """Normalized trajectories of one morph in its grid frame."""

    points: np.ndarray
    provenance: List[str]
    target_index: List[int]
    ring_position: np.ndarray
    flags: List[Flag] = field(default_factory=list)


def _sibling_trunk(
    timelines: Sequence[np.ndarray], branch: np.ndarray, t0: int, radius: float
) -> Optional[np.ndarray]:
    """Prefix of the resolved family track passing closest to ``branch`` at step ``t0``."""
    best, best_dist = None, radius
    for line in timelines:
        if t0 >= len(line) or np.isnan(line[t0, 0]):
            continue
        dist = float(np.hypot(*(line[t0] - branch)))
        if dist <= best_dist:
            best, best_dist = line, dist
    if best is None:
        return None
    prefix = best[: t0 + 1]
    return prefix[~np.isnan(prefix[:, 0])]


def _timeline(trunk: np.ndarray, track: CurveletTrack) -> np.ndarray:
    """Per-step positions of an anchored track; steps the trunk does not cover are NaN."""
    t0 = track.t_start
    line = np.full((max(track.t_end, t0 + len(track.points) - 1) + 1, 2), np.nan)
    if len(trunk) == t0 + 1:
        line[: t0 + 1] = trunk
    else:
        line[0] = trunk[0]
    line[t0 : t0 + len(track.points)] = track.points
    return line


def merge_trajectories(
    particles: Sequence[Particle],
    backtracked: BacktrackResult,
    source: Contour,
    targets: Sequence[Contour],
    params: MorphParams = MorphParams(),
) -> MergedTrajectories:
    """Fuse surviving particle paths with curvelet tracks and normalize them.

    Tracks are anchored earliest first. A track's trunk is the path of the
    particle nearest its branching end (within ``d_branch``) up to that step.
    Failing that it is the path of an already anchored track of the same
    family passing within ``anchor_radius`` at that step; family points drop
    out of a shrinking curvelet at different steps, so most tracks of a
    family branch off a sibling rather than off a particle. The last resort
    is a straight segment from the nearest source point within
    ``anchor_radius``. Tracks with none of these are dropped and flagged, as
    are orphan tracks that stop short of a target.

    First points are snapped to the source. A last point is snapped to the
    nearest target only when it already lies within ``ENDPOINT_TOLERANCE_PX``
    of it; trajectories that end farther away did not converge and are
    dropped with an ``UnconvergedTrajectory`` flag.
    """
    flags: List[Flag] = []
    raw: List[Tuple[np.ndarray, str]] = []
    for p in particles:
        if p.alive:
            raw.append((p.trajectory(), PARTICLE))

    trees: Dict[int, Tuple[Optional[cKDTree], List[Particle]]] = {}
    anchored: Dict[int, List[np.ndarray]] = {}
    dropped = 0
    for track in sorted(backtracked.tracks, key=lambda tr: (tr.t_start, tr.family, tr.index)):
        if track.orphan:
            _, _, _, gap = _snap(track.points[-1], targets)
            if gap > params.d_branch:
                continue
        t0 = track.t_start
        if t0 not in trees:
            present = [p for p in particles if p.position_at(t0) is not None]
            tree = cKDTree(np.array([p.history[t0] for p in present])) if present else None
            trees[t0] = (tree, present)
        tree, present = trees[t0]
        branch = track.points[0]
        trunk = None
        if tree is not None:
            dist, idx = tree.query(branch)
            if dist <= params.d_branch:
                trunk = present[int(idx)].trajectory()[: t0 + 1]
        if trunk is None:
            trunk = _sibling_trunk(anchored.get(track.family, []), branch, t0, params.anchor_radius)
        if trunk is None:
            _, foot, dist = nearest_on_contour(source, branch[None, :])
            if dist[0] <= params.anchor_radius:
                trunk = foot
        if trunk is None:
            dropped += 1
            continue
        anchored.setdefault(track.family, []).append(_timeline(trunk, track))
        raw.append((np.vstack([trunk, track.points]), CURVELET))

    if dropped:
        flags.append(Flag("UnanchoredTrack", f"{dropped} curvelet track(s) had no trunk and were dropped"))
        logger.warning("Dropped %d unanchored curvelet track(s)", dropped)

    points, provenance, target_index, ring = [], [], [], []
    unconverged = 0
    for poly, kind in raw:
        end, k, frac, gap = _snap(poly[-1], targets)
        if gap > ENDPOINT_TOLERANCE_PX:
            unconverged += 1
            continue
        poly = poly.copy()
        _, foot, _ = nearest_on_contour(source, poly[:1])
        poly[0] = foot[0]
        poly[-1] = end
        points.append(normalize_trajectory(poly, params.levels))
        provenance.append(kind)
        target_index.append(k)
        ring.append(frac)

    if unconverged:
        flags.append(
            Flag("UnconvergedTrajectory", f"{unconverged} trajectory(ies) ended off the target and were dropped")
        )
        logger.warning("Dropped %d trajectory(ies) ending off the target", unconverged)

    arr = np.array(points).reshape(-1, params.levels, 2)
    return MergedTrajectories(arr, provenance, target_index, np.array(ring, dtype=float), flags)


def morph_instance(
    source_id: int,
    source: Contour,
    targets: Sequence[Tuple[int, Contour]],
    shift: Sequence[float],
    params: MorphParams = MorphParams(),
    grid_target: int = DEFAULT_GRID_TARGET,
    margin: int = DEFAULT_MARGIN,
) -> Tuple[np.ndarray, List[str], List[Tuple[int, int]], np.ndarray, Dict[str, float], List[Flag]]:
    """Morph one aligned source into its targets and return world-frame trajectories.

    The alignment ``shift`` is taken back out linearly over the levels, so
    level 0 sits on the original source contour and the last level on the
    targets.
    """
    shift = np.asarray(shift, dtype=float)
    aligned = source.translated(shift).counter_clockwise()
    frame = GridFrame.covering(
        np.vstack([aligned.points, *(c.points for _, c in targets)]), grid_target, margin
    )
    src_g = aligned.to_grid(frame)
    tgt_g = [c.counter_clockwise().to_grid(frame) for _, c in targets]
    longest = max([src_g.perimeter, *(t.perimeter for t in tgt_g)])
    n = max(params.min_particles, int(math.ceil(longest / params.particle_spacing)))
    particles = seed_particles(src_g, n)

    result = run_morph(src_g, tgt_g, frame, params, on_step=lambda a, b: advect_particles(particles, a, b, params))
    flags = list(result.flags)
    gone = [p for p in particles if not p.alive]
    if gone:
        flags.append(Flag("LostParticles", f"source {source_id}: {len(gone)} of {n} particle(s) stopped early"))

    if params.backtracking:
        curvelets = detect_uncovered_curvelets(result.snapshots, particles, frame.shape, params.d_div)
        backtracked = backtrack_curvelets(curvelets, params.d_branch)
    else:
        backtracked = BacktrackResult()
    flags.extend(backtracked.flags)
    merged = merge_trajectories(particles, backtracked, src_g, tgt_g, params)
    flags.extend(merged.flags)

    particle_ends = [p.position for p in particles if p.alive]
    coverage = {
        "particles": trajectory_coverage(np.array(particle_ends).reshape(-1, 2), tgt_g),
        "merged": trajectory_coverage(merged.points[:, -1, :], tgt_g),
    }

    world = frame.grid_to_world(merged.points)
    ramp = 1.0 - np.arange(params.levels) / (params.levels - 1)
    world = world - ramp[None, :, None] * shift[None, None, :]
    groups = [(source_id, targets[k][0]) for k in merged.target_index]
    logger.info(
        "Source %d: %d trajectories (%d from curvelets), coverage %.3f -> %.3f",
        source_id, len(world), merged.provenance.count(CURVELET), coverage["particles"], coverage["merged"],
    )
    return world, merged.provenance, groups, merged.ring_position, coverage, flags


def morph_section_pair(
    sources: Dict[int, Contour],
    targets: Dict[int, Contour],
    pruned_pairs: Iterable[Tuple[int, int]],
    shifts: Dict[int, Sequence[float]],
    z_top: float,
    z_bottom: float,
    geozone: str,
    params: MorphParams = MorphParams(),
    grid_target: int = DEFAULT_GRID_TARGET,
    margin: int = DEFAULT_MARGIN,
) -> TrajectoryBundle:
    """Bundle for one geozone between two cross-sections.

    Every source with surviving associations morphs against the union of its
    targets; their trajectories concatenate into one bundle.
    """
    by_source: Dict[int, List[int]] = {}
    for s, t in pruned_pairs:
        by_source.setdefault(int(s), []).append(int(t))

    trajectories, provenance, groups, ring = [], [], [], []
    coverage: Dict[str, float] = {}
    flags: List[Flag] = []
    used_targets = set()
    for sid in sorted(by_source):
        if sid not in shifts:
            flags.append(Flag("MissingShift", f"source {sid} has associations but no displacement"))
            continue
        tids = sorted(by_source[sid])
        world, prov, grp, pos, cov, fl = morph_instance(
            sid, sources[sid], [(t, targets[t]) for t in tids], shifts[sid], params, grid_target, margin
        )
        trajectories.append(world)
        provenance.extend(prov)
        groups.extend(grp)
        ring.append(pos)
        coverage.update({f"s{sid}.{k}": v for k, v in cov.items()})
        flags.extend(fl)
        used_targets.update(tids)

    for sid in sorted(set(sources) - set(by_source)):
        flags.append(Flag("PinchOut", f"source {sid} ends above z={z_bottom}"))
    for tid in sorted(set(targets) - used_targets):
        flags.append(Flag("UnmatchedTarget", f"target {tid} at z={z_bottom} has no source"))

    levels = params.levels
    return TrajectoryBundle(
        geozone=geozone,
        z_top=z_top,
        z_bottom=z_bottom,
        levels=levels,
        trajectories=np.vstack(trajectories) if trajectories else np.zeros((0, levels, 2)),
        provenance=provenance,
        groups=groups,
        ring_position=np.concatenate(ring) if ring else np.zeros(0),
        sources={s: sources[s] for s in sorted(by_source) if s in shifts},
        targets={t: targets[t] for t in sorted(used_targets)},
        observed=dict(sorted(targets.items())),
        coverage=coverage,
        flags=flags,
    )
