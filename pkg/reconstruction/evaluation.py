"""
Region precision and recall, their area-weighted aggregation over depths,
and the sample archive that keeps evaluation causal.
"""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from core.contours import rasterize
from core.errors import CausalityViolation, Flag
from core.geometry import Contour, GridFrame, SamplePoint

logger = logging.getLogger(__name__)

EVAL_PIXEL_SIZE = 0.25
EVAL_MARGIN = 4
NIL = "nil"
MODEL = "model"


@dataclass(eq=False)
class EvalRow:
    """Precision and recall of one prediction, with the sums behind them."""

    depth: float
    condition: str
    precision_num: float
    precision_den: float
    recall_num: float
    recall_den: float
    bench: Optional[float] = None
    geozone: str = ""
    flags: List[Flag] = field(default_factory=list)

    @property
    def precision(self) -> float:
        return self.precision_num / self.precision_den if self.precision_den > 0 else 0.0

    @property
    def recall(self) -> float:
        return self.recall_num / self.recall_den if self.recall_den > 0 else 0.0


def _masks(contours: Sequence[Contour], frame: GridFrame) -> List[np.ndarray]:
    return [rasterize(c, frame) for c in contours]


def precision_recall(
    predicted: Sequence[Contour],
    truth: Sequence[Contour],
    pixel_size: float = EVAL_PIXEL_SIZE,
    depth: float = 0.0,
    condition: str = MODEL,
) -> EvalRow:
    """Area-weighted precision and recall of predicted regions against truth regions.

    Each predicted region scores the share of its area covered by truth, each
    truth region the share covered by predictions; the overall rates weight
    regions by area. Both rates are 0 and flagged when either side is empty.
    """
    flags: List[Flag] = []
    if not truth:
        flags.append(Flag("EmptyTruth", f"no truth region at depth {depth}"))
    if not predicted:
        flags.append(Flag("EmptyPrediction", f"no predicted region at depth {depth}"))
    if flags:
        for f in flags:
            logger.warning("%s: %s", f.code, f.message)
        return EvalRow(depth, condition, 0.0, 0.0, 0.0, 0.0, flags=flags)

    pts = np.vstack([c.points for c in (*predicted, *truth)])
    frame = GridFrame.covering(pts, margin=EVAL_MARGIN, pixel_size=pixel_size)
    pred_masks = _masks(predicted, frame)
    truth_masks = _masks(truth, frame)
    truth_union = np.logical_or.reduce(truth_masks)
    pred_union = np.logical_or.reduce(pred_masks)

    cell = pixel_size * pixel_size
    p_num = sum(float(np.count_nonzero(m & truth_union)) for m in pred_masks) * cell
    p_den = sum(float(np.count_nonzero(m)) for m in pred_masks) * cell
    r_num = sum(float(np.count_nonzero(m & pred_union)) for m in truth_masks) * cell
    r_den = sum(float(np.count_nonzero(m)) for m in truth_masks) * cell
    return EvalRow(depth, condition, p_num, p_den, r_num, r_den)


@dataclass(eq=False)
class EvalReport:
    rows: List[EvalRow] = field(default_factory=list)

    def add(self, row: EvalRow) -> None:
        self.rows.append(row)

    @property
    def flags(self) -> List[Flag]:
        return [f for r in self.rows for f in r.flags]

    def aggregate(self) -> List[dict]:
        """Per depth: area-weighted nil and model rates with the model's gain."""
        sums: Dict[Tuple[float, str], np.ndarray] = defaultdict(lambda: np.zeros(4))
        for r in self.rows:
            sums[(r.depth, r.condition)] += (r.precision_num, r.precision_den, r.recall_num, r.recall_den)

        def rate(num, den):
            return num / den if den > 0 else 0.0

        out = []
        for depth in sorted({d for d, _ in sums}):
            nil, model = sums[(depth, NIL)], sums[(depth, MODEL)]
            row = {"depth": depth}
            for name, k in (("precision", 0), ("recall", 2)):
                row[f"nil_{name}"] = rate(nil[k], nil[k + 1])
                row[f"model_{name}"] = rate(model[k], model[k + 1])
                row[f"{name}_gain"] = row[f"model_{name}"] - row[f"nil_{name}"]
            out.append(row)
        return out

    def detail(self) -> List[dict]:
        return [
            {
                "bench": r.bench,
                "geozone": r.geozone,
                "depth": r.depth,
                "condition": r.condition,
                "precision": r.precision,
                "recall": r.recall,
                "predicted_area": r.precision_den,
                "truth_area": r.recall_den,
            }
            for r in self.rows
        ]


class CausalSampleArchive:
    """Cross-section samples served only at or above the current floor elevation.

    Every request is logged so a test can audit what a prediction consumed.
    """

    def __init__(self, benches: Dict[float, Sequence[SamplePoint]]):
        self._benches = {float(z): list(s) for z, s in benches.items()}
        self.floor = max(self._benches) if self._benches else 0.0
        self.access_log: List[float] = []

    @property
    def elevations(self) -> List[float]:
        return sorted(self._benches, reverse=True)

    def lower_floor(self, z: float) -> None:
        if z not in self._benches:
            raise KeyError(f"No bench at z={z}")
        self.floor = float(z)
        logger.debug("Archive floor now z=%s", z)

    def visible(self) -> List[float]:
        return [z for z in self.elevations if z >= self.floor]

    def samples(self, z: float) -> List[SamplePoint]:
        z = float(z)
        if z < self.floor:
            logger.error("Requested bench z=%s below the floor z=%s", z, self.floor)
            raise CausalityViolation(f"Bench z={z} lies below the current floor z={self.floor}")
        self.access_log.append(z)
        return list(self._benches[z])

    def deepest_access(self) -> Optional[float]:
        return min(self.access_log) if self.access_log else None


def evaluate_depths(
    predictions: Iterable[Tuple[float, List[Contour], List[Contour], List[Contour]]],
    bench: Optional[float] = None,
    geozone: str = "",
    pixel_size: float = EVAL_PIXEL_SIZE,
) -> List[EvalRow]:
    """Rows for (depth, model contours, nil contours, truth contours) tuples."""
    rows = []
    for depth, model, nil, truth in predictions:
        for condition, contours in ((MODEL, model), (NIL, nil)):
            row = precision_recall(contours, truth, pixel_size, depth, condition)
            row.bench = bench
            row.geozone = geozone
            rows.append(row)
    return rows
