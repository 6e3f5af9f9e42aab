"""
One function per pipeline stage.

Every stage consumes the JSON-ready payload of the previous stage and
returns its own, so a monolithic run and a run piped through files see the
same data. Independent work items (bench/geozone cells, section pairs) run
on a thread pool; results are collected in input order.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from core.errors import BoundaryModelError, DepthOutOfRange, Flag, PipelineError, StageError
from core.geometry import SamplePoint
from correspondence.association import Region
from correspondence.graph import associate
from extraction.section import extract_section
from metamorphosis.trajectories import TrajectoryBundle, morph_section_pair
from pipeline.io import (
    BUNDLES,
    CONTOURS,
    CORRESPONDENCE,
    PREDICTIONS,
    REPORT,
    TRUTH,
    contour_from_dict,
    contour_to_dict,
    flags_from_list,
    flags_to_list,
    group_benches,
)
from reconstruction.evaluation import CausalSampleArchive, EvalReport, evaluate_depths
from reconstruction.surfaces import SurfaceMesh, bundle_mesh, iso_contours, predict_contour, zero_order_hold
from reconstruction.synthetic import INSIDE_LABEL, SceneSpec, SyntheticScene, generate_synthetic_scene
from utils.config import PipelineConfig

logger = logging.getLogger(__name__)

SYNTH = "synth"
ELEVATION_DECIMALS = 6

T = TypeVar("T")
R = TypeVar("R")


@dataclass(eq=False)
class StageOutput:
    stage: str
    payload: dict
    flags: List[Flag] = field(default_factory=list)
    meshes: List[SurfaceMesh] = field(default_factory=list)
    tables: Dict[str, List[dict]] = field(default_factory=dict)
    extras: dict = field(default_factory=dict)


@contextmanager
def stage_errors(stage: str):
    """Re-raise library failures inside a stage as :class:`StageError`."""
    try:
        yield
    except PipelineError:
        raise
    except (BoundaryModelError, ValueError) as err:
        logger.error("Stage '%s' failed: %s", stage, err)
        raise StageError(stage, str(err)) from err


def parallel_map(fn: Callable[[T], R], items: Sequence[T], threads: int) -> List[R]:
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _key(z: float) -> float:
    return round(float(z), ELEVATION_DECIMALS)


def _tag(flags: Iterable[Flag], context: str) -> List[Flag]:
    return [Flag(f.code, f"{context}: {f.message}") for f in flags]


# ----- extract
def extract_stage(samples: Sequence[SamplePoint], config: PipelineConfig) -> StageOutput:
    """Contours for every (bench, geozone) cell, benches visited top-down.

    Samples are drawn through a :class:`CausalSampleArchive` whose floor is
    lowered one bench at a time.
    """
    benches = group_benches(samples)
    archive = CausalSampleArchive(benches)
    cells: List[Tuple[float, str, List[SamplePoint]]] = []
    for z in archive.elevations:
        archive.lower_floor(z)
        bench = archive.samples(z)
        cells.extend((z, g, bench) for g in config.run.geozones)

    def run(cell):
        z, geozone, bench = cell
        return extract_section(bench, geozone, config.extraction)

    with stage_errors(CONTOURS):
        sections = parallel_map(run, cells, config.run.threads)

    out, flags = [], []
    for sec in sections:
        out.append({
            "z": sec.z,
            "geozone": sec.geozone,
            "radius": sec.radius,
            "spacing": sec.spacing,
            "contours": [
                {
                    "id": k,
                    "component": c.component_id,
                    "n_samples": c.n_samples,
                    "converged": c.converged,
                    "iterations": c.iterations,
                    "contour": contour_to_dict(c.contour),
                }
                for k, c in enumerate(sec.contours)
            ],
            "rejects": sec.rejects,
            "flags": flags_to_list(sec.flags),
        })
        flags.extend(sec.flags)
    elevations = archive.elevations
    for upper, lower in zip(elevations, elevations[1:]):
        if abs((upper - lower) - config.run.bench_spacing) > 1e-6:
            flag = Flag("IrregularBench", f"benches z={upper} and z={lower} are {upper - lower} m apart")
            logger.warning("%s", flag.message)
            flags.append(flag)
    payload = {"elevations": elevations, "sections": out}
    return StageOutput(CONTOURS, payload, flags, extras={"deepest_access": archive.deepest_access()})


def _regions(section: dict) -> List[Region]:
    return [Region(int(c["id"]), contour_from_dict(c["contour"])) for c in section["contours"]]


# ----- correspond
def _pairs(contours_payload: dict, geozones: Sequence[str]) -> List[Tuple[str, dict, dict]]:
    cells = {(s["geozone"], _key(s["z"])): s for s in contours_payload["sections"]}
    elevations = sorted((float(z) for z in contours_payload["elevations"]), reverse=True)
    pairs = []
    for g in geozones:
        for upper, lower in zip(elevations, elevations[1:]):
            top, bottom = cells.get((g, _key(upper))), cells.get((g, _key(lower)))
            if top is not None and bottom is not None:
                pairs.append((g, top, bottom))
    return pairs


def correspond_pair(geozone: str, top: dict, bottom: dict, config: PipelineConfig) -> dict:
    sources, targets = _regions(top), _regions(bottom)
    entry = {
        "geozone": geozone,
        "z_top": top["z"],
        "z_bottom": bottom["z"],
        "sources": {str(r.id): contour_to_dict(r.contour) for r in sources},
        "targets": {str(r.id): contour_to_dict(r.contour) for r in targets},
        "association": None,
        "pairs": [],
        "shifts": {},
        "flags": [],
    }
    context = f"{geozone} z={top['z']}->{bottom['z']}"
    if not sources or not targets:
        flags = [Flag("PinchOut", f"{context}: source {r.id} has no target section") for r in sources]
        flags += [Flag("UnmatchedTarget", f"{context}: target {r.id} has no source section") for r in targets]
        entry["flags"] = flags_to_list(flags)
        return entry

    cc = config.correspondence
    spacings = [float(s["spacing"]) for s in (top, bottom) if s.get("spacing")]
    mu_lower = cc.resolved_mu_lower(float(np.median(spacings)) if spacings else 0.0)
    logger.debug("%s: mu_lower=%.3f", context, mu_lower)
    result = associate(sources, targets, mu_lower, cc.grid_target, cc.margin, cc.distance, cc.weights)
    entry["association"] = result.as_dict()
    entry["pairs"] = [[int(s), int(t)] for s, t in result.pruned.pairs()]
    entry["shifts"] = {str(k): list(d.m_world) for k, d in sorted(result.displacements.items())}
    entry["flags"] = flags_to_list(_tag(result.flags, context))
    return entry


def correspond_stage(contours_payload: dict, config: PipelineConfig) -> StageOutput:
    pairs = _pairs(contours_payload, config.run.geozones)
    with stage_errors(CORRESPONDENCE):
        entries = parallel_map(lambda p: correspond_pair(*p, config), pairs, config.run.threads)
    flags = [f for e in entries for f in flags_from_list(e["flags"])]
    logger.info("Correspondence over %d section pair(s), %d flag(s)", len(entries), len(flags))
    return StageOutput(CORRESPONDENCE, {"pairs": entries}, flags)


# ----- morph
def morph_pair(entry: dict, config: PipelineConfig) -> TrajectoryBundle:
    sources = {int(k): contour_from_dict(v) for k, v in entry["sources"].items()}
    targets = {int(k): contour_from_dict(v) for k, v in entry["targets"].items()}
    shifts = {int(k): v for k, v in entry["shifts"].items()}
    cc = config.correspondence
    bundle = morph_section_pair(
        sources,
        targets,
        [tuple(p) for p in entry["pairs"]],
        shifts,
        float(entry["z_top"]),
        float(entry["z_bottom"]),
        entry["geozone"],
        config.metamorphosis,
        cc.grid_target,
        cc.margin,
    )
    context = f"{entry['geozone']} z={entry['z_top']}->{entry['z_bottom']}"
    bundle.flags = _tag(bundle.flags, context)
    return bundle


def morph_stage(correspondence_payload: dict, config: PipelineConfig) -> StageOutput:
    entries = correspondence_payload["pairs"]
    with stage_errors(BUNDLES):
        bundles = parallel_map(lambda e: morph_pair(e, config), entries, config.run.threads)
        meshes: List[SurfaceMesh] = []
        volumes = []
        for geozone in config.run.geozones:
            parts = [bundle_mesh(b) for b in bundles if b.geozone == geozone]
            mesh = SurfaceMesh.concatenate(parts, geozone)
            meshes.append(mesh)
            volumes.append({"geozone": geozone, "volume": mesh.volume, "triangles": int(len(mesh.triangles))})
    flags = [f for b in bundles for f in b.flags]
    coverage = [
        {"geozone": b.geozone, "z_top": b.z_top, "z_bottom": b.z_bottom, **b.coverage} for b in bundles
    ]
    payload = {"bundles": [b.as_dict() for b in bundles], "meshes": volumes, "coverage": coverage}
    return StageOutput(BUNDLES, payload, flags, meshes=meshes)


# ----- predict
def predict_stage(bundles_payload: dict, config: PipelineConfig) -> StageOutput:
    """Extrapolated and zero-order-hold contours below every bundle, plus iso-contours inside it."""
    predictions, iso, flags = [], [], []
    with stage_errors(PREDICTIONS):
        for raw in bundles_payload["bundles"]:
            bundle = TrajectoryBundle.from_dict(raw)
            height = abs(bundle.z_top - bundle.z_bottom)
            inside = [d for d in config.run.depths if d < height]
            for d, contours in zip(inside, iso_contours(bundle, [bundle.z_top - d for d in inside])):
                iso.append({
                    "geozone": bundle.geozone,
                    "z": bundle.z_top - d,
                    "contours": [contour_to_dict(c) for c in contours],
                })
            for d in config.run.depths:
                try:
                    pred = predict_contour(bundle, d)
                except DepthOutOfRange as err:
                    logger.debug("Skipping depth %s below z=%s: %s", d, bundle.z_bottom, err)
                    continue
                context = f"{bundle.geozone} below z={bundle.z_bottom}"
                pflags = _tag(pred.flags, context)
                flags.extend(pflags)
                predictions.append({
                    "geozone": bundle.geozone,
                    "floor": bundle.z_bottom,
                    "depth": float(d),
                    "elevation": bundle.z_bottom - float(d),
                    "model": [contour_to_dict(c) for c in pred.contours],
                    "nil": [contour_to_dict(c) for c in zero_order_hold(bundle)],
                    "flags": flags_to_list(pflags),
                })
    logger.info("%d prediction(s), %d iso-contour level(s)", len(predictions), len(iso))
    return StageOutput(PREDICTIONS, {"predictions": predictions, "iso": iso}, flags)


# ----- truth
def truth_from_contours(contours_payload: dict) -> dict:
    """Truth sections taken from extracted contours, for data without an exact reference."""
    return {
        "sections": [
            {"geozone": s["geozone"], "z": s["z"], "contours": [c["contour"] for c in s["contours"]]}
            for s in contours_payload["sections"]
        ]
    }


def truth_from_scene(scene: SyntheticScene, depths: Sequence[float]) -> dict:
    """Exact sections at every bench and at every prediction elevation below one."""
    elevations = set()
    for z in scene.spec.elevations:
        elevations.add(_key(z))
        elevations.update(_key(z - d) for d in depths)
    sections = [
        {"geozone": INSIDE_LABEL, "z": z, "contours": [contour_to_dict(c) for c in scene.truth_at(z)]}
        for z in sorted(elevations, reverse=True)
    ]
    return {"sections": sections}


# ----- eval
AGGREGATE_COLUMNS = (
    "depth", "nil_precision", "model_precision", "precision_gain", "nil_recall", "model_recall", "recall_gain",
)
DETAIL_COLUMNS = (
    "bench", "geozone", "depth", "condition", "precision", "recall", "predicted_area", "truth_area",
)


def eval_stage(predictions_payload: dict, truth_payload: dict, config: PipelineConfig) -> StageOutput:
    """Precision and recall of model and baseline predictions against truth sections.

    Predictions whose elevation has no truth section are skipped.
    """
    truth = {
        (s["geozone"], _key(s["z"])): [contour_from_dict(c) for c in s["contours"]]
        for s in truth_payload["sections"]
    }
    report = EvalReport()
    skipped = 0
    with stage_errors(REPORT):
        for p in predictions_payload["predictions"]:
            if not p["elevation"] < p["floor"]:
                raise StageError(REPORT, f"prediction at z={p['elevation']} does not lie below its floor z={p['floor']}")
            sections = truth.get((p["geozone"], _key(p["elevation"])))
            if sections is None:
                skipped += 1
                continue
            model = [contour_from_dict(c) for c in p["model"]]
            nil = [contour_from_dict(c) for c in p["nil"]]
            rows = evaluate_depths(
                [(p["depth"], model, nil, sections)],
                bench=p["floor"],
                geozone=p["geozone"],
                pixel_size=config.reconstruction.eval_pixel_size,
            )
            for row in rows:
                row.flags = _tag(row.flags, f"{p['geozone']} z={p['elevation']} {row.condition}")
                report.add(row)
    if skipped:
        logger.info("%d prediction(s) without a truth section were not scored", skipped)
    aggregate, detail = report.aggregate(), report.detail()
    payload = {"aggregate": aggregate, "detail": detail, "skipped": skipped}
    return StageOutput(REPORT, payload, report.flags, tables={"aggregate": aggregate, "detail": detail})


# ----- synth
def synth_stage(spec: SceneSpec, config: PipelineConfig, seed: Optional[int] = None) -> StageOutput:
    seed = config.run.seed if seed is None else seed
    with stage_errors(SYNTH):
        scene = generate_synthetic_scene(spec, seed)
        truth = truth_from_scene(scene, config.run.depths)
    counts = {str(z): n for z, n in scene.component_counts().items()}
    return StageOutput(TRUTH, truth, extras={"scene": scene, "samples": scene.all_samples(), "components": counts})
