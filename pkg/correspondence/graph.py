"""
Bipartite source/target graph: decomposition into per-source subtrees and
the alignment pass that realizes (and prunes) every association.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from core.errors import AllInadmissible, Flag
from correspondence.alignment import AlignmentWeights, DisplacementEstimate, align_source
from correspondence.association import (
    REACH,
    AssociationMatrix,
    Region,
    association_frame,
    build_association_matrix,
    compute_dmin_stats,
)
from core.geometry import DEFAULT_GRID_TARGET, DEFAULT_MARGIN

logger = logging.getLogger(__name__)

# realized overlap below this share of the source mask counts as no connection
PRUNE_FRACTION = 0.01


@dataclass(frozen=True)
class Subtree:
    root_source: int
    targets: List[int]
    co_sources: Dict[int, List[int]] = field(default_factory=dict)

    def describe(self) -> str:
        parts = []
        for t in self.targets:
            others = self.co_sources.get(t, [])
            if not others:
                parts.append(f"t{t}")
            elif len(others) == 1:
                parts.append(f"t{t}<-s{others[0]}")
            else:
                parts.append(f"t{t}<-(" + ",".join(f"s{s}" for s in others) + ")")
        body = parts[0] if len(parts) == 1 else "{" + ", ".join(parts) + "}"
        return f"s{self.root_source}->{body}" if parts else f"s{self.root_source}->{{}}"


@dataclass(eq=False)
class AssociationResult:
    initial: AssociationMatrix
    pruned: AssociationMatrix
    subtrees: List[Subtree] = field(default_factory=list)
    displacements: Dict[int, DisplacementEstimate] = field(default_factory=dict)
    flags: List[Flag] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "source_ids": self.initial.source_ids,
            "target_ids": self.initial.target_ids,
            "initial": self.initial.A.tolist(),
            "pruned": self.pruned.A.tolist(),
            "subtrees": [s.describe() for s in self.subtrees],
            "displacements": {str(k): d.as_dict() for k, d in sorted(self.displacements.items())},
            "flags": [f.as_dict() for f in self.flags],
        }


def decompose(A: AssociationMatrix, order: Optional[Sequence[int]] = None) -> List[Subtree]:
    """One subtree per source: its targets and, per target, the other sources sharing it."""
    order = list(order) if order is not None else list(A.source_ids)
    out = []
    for sid in order:
        targets = A.targets_of(sid)
        co = {t: [s for s in A.sources_of(t) if s != sid] for t in targets}
        out.append(Subtree(sid, targets, co))
    return out


def decompose_and_align(
    A: AssociationMatrix,
    sources: Sequence[Region],
    targets: Sequence[Region],
    grid_target: int = DEFAULT_GRID_TARGET,
    margin: int = DEFAULT_MARGIN,
    weights: AlignmentWeights = AlignmentWeights(),
) -> AssociationResult:
    """Align every source against its subtree, largest source first.

    The scenario (one-to-one, many-to-one, one-to-many or a mix) follows from
    the subtree: peers sharing a target get port penalties, several targets
    get the corridor reward. Sources already placed are obstacles for later
    ones. Edges whose realized overlap falls under ``PRUNE_FRACTION`` of the
    source mask are removed from the returned matrix.
    """
    by_src = {s.id: s for s in sources}
    by_tgt = {t.id: t for t in targets}
    order = sorted(A.source_ids, key=lambda sid: (-by_src[sid].area, sid))
    subtrees = decompose(A, order)
    pruned = A.A.copy()
    displacements: Dict[int, DisplacementEstimate] = {}
    placed: Dict[int, Region] = {}
    flags: List[Flag] = []

    for sub in subtrees:
        src = by_src[sub.root_source]
        if not sub.targets:
            flags.append(Flag("PinchOut", f"source {src.id} has no associated target"))
            logger.info("Source %d pinches out", src.id)
            continue
        tgts = [by_tgt[t] for t in sub.targets]
        peers = {t: [by_src[s] for s in co] for t, co in sub.co_sources.items() if co}
        sharing = {s for co in sub.co_sources.values() for s in co}
        obstacles = [placed[s] for s in sorted(sharing) if s in placed]
        frame = association_frame([src, *tgts, *obstacles, *(p for ps in peers.values() for p in ps)], grid_target, margin)
        try:
            est = align_source(src, tgts, peers, obstacles, frame, weights)
        except AllInadmissible as err:
            flags.append(Flag("AllInadmissible", f"source {src.id}: {err}"))
            logger.warning("No admissible shift for source %d: %s", src.id, err)
            pruned[A.source_ids.index(src.id), :] = 0
            continue

        displacements[src.id] = est
        placed[src.id] = src.translated(est.m_world)
        i = A.source_ids.index(src.id)
        for t in sub.targets:
            if est.overlaps.get(t, 0) < PRUNE_FRACTION * est.mask_pixels:
                pruned[i, A.target_ids.index(t)] = 0
                flags.append(Flag("PrunedEdge", f"s{src.id}-t{t}: no realized overlap"))
                logger.info("Pruned edge s%d-t%d", src.id, t)
        logger.debug("%s -> m=%s", sub.describe(), est.m_px)

    return AssociationResult(
        A,
        AssociationMatrix(pruned, list(A.source_ids), list(A.target_ids)),
        subtrees,
        displacements,
        flags,
    )


def associate(
    sources: Sequence[Region],
    targets: Sequence[Region],
    mu_lower: float,
    grid_target: int = DEFAULT_GRID_TARGET,
    margin: int = DEFAULT_MARGIN,
    distance: str = REACH,
    weights: AlignmentWeights = AlignmentWeights(),
) -> AssociationResult:
    """Association matrix followed by decomposition and alignment for one section pair."""
    model = compute_dmin_stats(sources, targets, mu_lower, distance)
    frame = association_frame([*sources, *targets], grid_target, margin)
    A = build_association_matrix(sources, targets, model, frame)
    logger.info(
        "Associated %d source(s) with %d target(s): %d edge(s), nu=%.3f",
        len(sources), len(targets), int(np.count_nonzero(A.A)), model.nu,
    )
    return decompose_and_align(A, sources, targets, grid_target, margin, weights)
