"""
End-to-end run: every stage in order, each output written to the run
directory, and a manifest describing what happened.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

from core.errors import BoundaryModelError
from pipeline import stages
from pipeline.io import (
    DETAIL_FILE,
    MANIFEST_FILE,
    MESH_FILE,
    REPORT_FILE,
    TRUTH,
    read_samples,
    read_stage,
    stage_path,
    write_csv,
    write_stage,
)
from reconstruction.surfaces import write_stl
from utils.config import PipelineConfig, config_digest

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def file_digest(path: PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass(eq=False)
class RunManifest:
    config: dict
    config_digest: str
    inputs: Dict[str, str] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    warnings: List[dict] = field(default_factory=list)
    volumes: List[dict] = field(default_factory=list)
    coverage: List[dict] = field(default_factory=list)
    outputs: Dict[str, str] = field(default_factory=dict)
    errors: List[str] = field(default_factory=list)

    def record(self, output: stages.StageOutput, seconds: float) -> None:
        self.timings[output.stage] = round(seconds, 6)
        self.warnings.extend({"stage": output.stage, **f.as_dict()} for f in output.flags)

    def warning_codes(self) -> List[str]:
        return sorted({w["code"] for w in self.warnings})

    def as_dict(self) -> dict:
        return {
            "config": self.config,
            "config_digest": self.config_digest,
            "inputs": self.inputs,
            "timings": self.timings,
            "warnings": self.warnings,
            "volumes": self.volumes,
            "coverage": self.coverage,
            "outputs": self.outputs,
            "errors": self.errors,
        }

    def write(self, path: PathLike) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.as_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
        return path


class _Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start
        return False


def run_pipeline(
    input_path: PathLike,
    config: Union[PipelineConfig, PathLike, None],
    out_dir: PathLike,
    truth_path: Optional[PathLike] = None,
) -> RunManifest:
    """Extract, correspond, morph, predict and evaluate one sample file.

    Args:
        input_path: sample table (``x,y,z,geozone``)
        config: a validated config, a YAML path, or None for the defaults
        out_dir: directory receiving every stage output and ``manifest.json``
        truth_path: optional truth document (as written by ``synth``); without
            it predictions are scored against the extracted contours of
            deeper benches

    Returns:
        RunManifest: also written to ``<out_dir>/manifest.json``

    Raises:
        ParseError: unreadable input or truth document
        ConfigError: invalid config or a truth document of another config
        StageError: a hard failure inside a stage

    Once the config is valid, a hard failure is recorded under ``errors`` and
    the manifest is written before the exception propagates.
    """
    if not isinstance(config, PipelineConfig):
        config = PipelineConfig.load(str(config) if config is not None else None)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(config.as_dict(), config_digest(config))
    try:
        _run_stages(manifest, config, input_path, out, truth_path)
    except BoundaryModelError as err:
        manifest.errors.append(f"{type(err).__name__}: {err}")
        manifest.outputs["manifest"] = MANIFEST_FILE
        manifest.write(out / MANIFEST_FILE)
        logger.error("Run failed after %s: %s", ", ".join(manifest.timings) or "no stage", err)
        raise
    logger.info(
        "Run complete in %.2f s with %d warning(s): %s",
        sum(manifest.timings.values()), len(manifest.warnings), ", ".join(manifest.warning_codes()) or "none",
    )
    return manifest


def _run_stages(
    manifest: RunManifest,
    config: PipelineConfig,
    input_path: PathLike,
    out: Path,
    truth_path: Optional[PathLike],
) -> None:
    digest = manifest.config_digest
    samples = read_samples(input_path)
    manifest.inputs["samples"] = file_digest(input_path)
    truth = None
    if truth_path is not None:
        truth = read_stage(truth_path, TRUTH, digest)
        manifest.inputs["truth"] = file_digest(truth_path)

    def save(output: stages.StageOutput) -> dict:
        path = write_stage(stage_path(out, output.stage), output.stage, digest, output.payload)
        manifest.outputs[output.stage] = path.name
        return output.payload

    with _Timer() as t:
        extracted = stages.extract_stage(samples, config)
    manifest.record(extracted, t.seconds)
    contours = save(extracted)

    with _Timer() as t:
        corresponded = stages.correspond_stage(contours, config)
    manifest.record(corresponded, t.seconds)
    pairs = save(corresponded)

    with _Timer() as t:
        morphed = stages.morph_stage(pairs, config)
    manifest.record(morphed, t.seconds)
    bundles = save(morphed)
    manifest.volumes = morphed.payload["meshes"]
    manifest.coverage = morphed.payload["coverage"]
    if config.reconstruction.mesh:
        manifest.outputs["mesh"] = write_stl(morphed.meshes, out / MESH_FILE).name

    with _Timer() as t:
        predicted = stages.predict_stage(bundles, config)
    manifest.record(predicted, t.seconds)
    predictions = save(predicted)

    with _Timer() as t:
        evaluated = stages.eval_stage(predictions, truth or stages.truth_from_contours(contours), config)
    manifest.record(evaluated, t.seconds)
    write_csv(evaluated.tables["aggregate"], out / REPORT_FILE, stages.AGGREGATE_COLUMNS)
    write_csv(evaluated.tables["detail"], out / DETAIL_FILE, stages.DETAIL_COLUMNS)
    manifest.outputs["report"] = REPORT_FILE
    manifest.outputs["report_detail"] = DETAIL_FILE

    manifest.outputs["manifest"] = MANIFEST_FILE
    manifest.write(out / MANIFEST_FILE)
