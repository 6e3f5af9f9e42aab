"""
File formats of the pipeline.

* samples: delimited text with an ``x,y,z,geozone`` header, one row per sample
* stage outputs: indented JSON documents stamped with the stage name and the
  config digest of the run that wrote them
* evaluation report: CSV tables
* meshes: ASCII STL (see :func:`reconstruction.surfaces.write_stl`)
"""
from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Union

import numpy as np

from core.errors import ConfigError, DegenerateContour, Flag, ParseError
from core.geometry import WORLD, Contour, SamplePoint

logger = logging.getLogger(__name__)

SAMPLE_COLUMNS = ("x", "y", "z", "geozone")

CONTOURS = "extract"
CORRESPONDENCE = "correspond"
BUNDLES = "morph"
PREDICTIONS = "predict"
REPORT = "eval"
TRUTH = "truth"

STAGE_FILES = {
    CONTOURS: "contours.json",
    CORRESPONDENCE: "correspondence.json",
    BUNDLES: "bundles.json",
    PREDICTIONS: "predictions.json",
    TRUTH: "truth.json",
}
REPORT_FILE = "report.csv"
DETAIL_FILE = "report_detail.csv"
MESH_FILE = "surfaces.stl"
SAMPLES_FILE = "samples.csv"
MANIFEST_FILE = "manifest.json"

PathLike = Union[str, Path]


def read_samples(path: PathLike) -> List[SamplePoint]:
    """Parse a sample table.

    Raises:
        ParseError: missing file, empty table, missing columns or a bad row
    """
    path = Path(path)
    if not path.is_file():
        msg = f"Sample file not found: {path}"
        logger.error(msg)
        raise ParseError(msg)

    samples: List[SamplePoint] = []
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in SAMPLE_COLUMNS if c not in header]
        if missing:
            msg = f"{path}: missing column(s) {', '.join(missing)}"
            logger.error(msg)
            raise ParseError(msg)
        reader.fieldnames = header
        for row in reader:
            try:
                samples.append(
                    SamplePoint(float(row["x"]), float(row["y"]), float(row["z"]), (row["geozone"] or "").strip())
                )
            except (TypeError, ValueError) as err:
                msg = f"{path}:{reader.line_num}: {err}"
                logger.error(msg)
                raise ParseError(msg) from err

    if not samples:
        msg = f"{path}: no samples"
        logger.error(msg)
        raise ParseError(msg)
    logger.info("Read %d samples from %s", len(samples), path)
    return samples


def write_samples(samples: Iterable[SamplePoint], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(SAMPLE_COLUMNS)
        for s in samples:
            writer.writerow((repr(s.x), repr(s.y), repr(s.z), s.geozone))
    return path


def group_benches(samples: Sequence[SamplePoint]) -> Dict[float, List[SamplePoint]]:
    """Samples keyed by elevation, highest bench first."""
    benches: Dict[float, List[SamplePoint]] = {}
    for s in samples:
        benches.setdefault(s.z, []).append(s)
    return {z: benches[z] for z in sorted(benches, reverse=True)}


def contour_to_dict(contour: Contour) -> dict:
    return {"frame": contour.frame_tag, "closed": contour.closed, "points": contour.points.tolist()}


def contour_from_dict(data: dict) -> Contour:
    try:
        return Contour(np.array(data["points"], dtype=float), bool(data.get("closed", True)), data.get("frame", WORLD))
    except (KeyError, TypeError, ValueError, DegenerateContour) as err:
        raise ParseError(f"Invalid contour record: {err}") from err


def flags_to_list(flags: Iterable[Flag]) -> List[dict]:
    return [f.as_dict() for f in flags]


def flags_from_list(data: Iterable[dict]) -> List[Flag]:
    return [Flag(d["code"], d["message"]) for d in data]


def stage_path(out_dir: PathLike, stage: str) -> Path:
    return Path(out_dir) / STAGE_FILES[stage]


def write_stage(path: PathLike, stage: str, digest: str, payload: Dict[str, Any]) -> Path:
    """Write one stage document; keys are sorted so equal content gives equal bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"stage": stage, "config_digest": digest, **payload}
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("Wrote %s output to %s", stage, path)
    return path


def read_stage(path: PathLike, stage: str, digest: str) -> Dict[str, Any]:
    """Load a stage document written under the same config.

    Raises:
        ParseError: missing file, bad JSON or a document of another stage
        ConfigError: the document carries another config digest
    """
    path = Path(path)
    if not path.is_file():
        msg = f"Stage file not found: {path}"
        logger.error(msg)
        raise ParseError(msg)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        logger.error("Invalid JSON in %s: %s", path, err)
        raise ParseError(f"Invalid JSON in {path}: {err}") from err
    if not isinstance(doc, dict) or doc.get("stage") != stage:
        raise ParseError(f"{path} is not a '{stage}' document")
    if doc.get("config_digest") != digest:
        msg = f"{path}: config digest mismatch ({doc.get('config_digest')} != {digest})"
        logger.error(msg)
        raise ConfigError(msg)
    return doc


def write_csv(rows: Sequence[dict], path: PathLike, columns: Sequence[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k) for k in columns})
    logger.info("Wrote %d row(s) to %s", len(rows), path)
    return path
