"""
Exception hierarchy shared by every package of the boundary model.

Hard failures are raised. Soft failures (non-convergence, pruned edges,
dropped tracks, ...) are not exceptions: they travel on result objects as
:class:`Flag` records and end up in the run manifest.
"""
from __future__ import annotations

from dataclasses import dataclass


class BoundaryModelError(Exception):
    """Root of all errors raised by this project."""


# ----- geometry
class GeometryError(BoundaryModelError):
    pass


class NonClosedContour(GeometryError):
    pass


class DegenerateContour(GeometryError):
    pass


class FrameMismatch(GeometryError):
    pass


# ----- boundary extraction
class ExtractionError(BoundaryModelError):
    pass


class EmptyInput(ExtractionError):
    pass


class TooFewBoundarySamples(ExtractionError):
    pass


# ----- correspondence
class CorrespondenceError(BoundaryModelError):
    pass


class NoTargets(CorrespondenceError):
    pass


class EmptyTargetRegion(CorrespondenceError):
    pass


class AllInadmissible(CorrespondenceError):
    pass


# ----- metamorphosis
class MorphError(BoundaryModelError):
    pass


class CflViolation(MorphError):
    pass


# ----- reconstruction / evaluation
class ReconstructionError(BoundaryModelError):
    pass


class DepthOutOfRange(ReconstructionError):
    pass


class RingMismatch(ReconstructionError):
    pass


class UnknownPrimitive(ReconstructionError):
    pass


class CausalityViolation(ReconstructionError):
    pass


# ----- pipeline
class PipelineError(BoundaryModelError):
    pass


class ParseError(PipelineError):
    pass


class ConfigError(PipelineError):
    pass


class StageError(PipelineError):
    """A hard failure inside one pipeline stage."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True)
class Flag:
    """A soft error recorded on a result instead of being raised."""

    code: str
    message: str

    def as_dict(self) -> dict:
        return {"code": self.code, "message": self.message}
