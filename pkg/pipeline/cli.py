"""Command-line entry point of the boundary model pipeline.

Usage:
    python -m pipeline.cli synth --primitive twin-merge --seed 7 --out runs/twin
    python -m pipeline.cli run --input runs/twin/samples.csv --truth runs/twin/truth.json \
        --config runs/twin/config.yml --out runs/twin

Each stage subcommand reads the previous stage's document from ``--in-dir``
(default: ``--out``) and writes its own into ``--out``.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from core.errors import BoundaryModelError, ConfigError, ParseError
from pipeline import stages
from pipeline.io import (
    BUNDLES,
    CONTOURS,
    CORRESPONDENCE,
    DETAIL_FILE,
    MESH_FILE,
    PREDICTIONS,
    REPORT_FILE,
    SAMPLES_FILE,
    TRUTH,
    read_samples,
    read_stage,
    stage_path,
    write_csv,
    write_samples,
    write_stage,
)
from pipeline.runner import run_pipeline
from reconstruction.surfaces import write_stl
from reconstruction.synthetic import PRIMITIVES, SceneSpec
from utils.config import PipelineConfig, config_digest, save_config

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARSE = 2
EXIT_STAGE = 3

CONFIG_SNAPSHOT = "config.yml"


class PipelineArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with the configuration/usage status instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def setup_logging(out_dir: Path, verbose: bool = False) -> None:
    logs = out_dir / "logs"
    logs.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.StreamHandler(),
            logging.FileHandler(logs / 'pipeline.log', encoding='utf-8'),
        ],
    )
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)


def build_parser() -> PipelineArgumentParser:
    common = PipelineArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration (defaults when omitted)")
    common.add_argument("--out", default="out", help="Output directory")
    common.add_argument("--threads", type=int, help="Worker threads (1 = sequential)")
    common.add_argument("--seed", type=int, help="Random seed override")
    common.add_argument("--verbose", "-v", action="store_true", help="Debug logging")

    staged = PipelineArgumentParser(add_help=False)
    staged.add_argument("--in-dir", help="Directory holding the previous stage's output (default: --out)")

    parser = PipelineArgumentParser(
        prog="pipeline", description="Reconstruct region boundaries from labeled cross-section samples"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", parents=[common], help="Samples to per-section contours")
    p.add_argument("--input", required=True, help="Sample table with x,y,z,geozone columns")
    sub.add_parser("correspond", parents=[common, staged], help="Associate and align successive sections")
    sub.add_parser("morph", parents=[common, staged], help="Trajectory bundles and surface mesh")
    sub.add_parser("predict", parents=[common, staged], help="Contours below each bundle")
    p = sub.add_parser("eval", parents=[common, staged], help="Precision and recall report")
    p.add_argument("--truth", help="Truth document (default: extracted contours)")
    p = sub.add_parser("synth", parents=[common], help="Synthetic samples and exact truth")
    p.add_argument("--primitive", choices=sorted({*PRIMITIVES, *(k.replace("_", "-") for k in PRIMITIVES)}))
    p = sub.add_parser("run", parents=[common], help="Every stage end to end")
    p.add_argument("--input", required=True, help="Sample table with x,y,z,geozone columns")
    p.add_argument("--truth", help="Truth document written by synth")
    return parser


def _save(out: Path, output: stages.StageOutput, digest: str) -> Path:
    return write_stage(stage_path(out, output.stage), output.stage, digest, output.payload)


def _run_command(args: argparse.Namespace, config: PipelineConfig, out: Path) -> None:
    digest = config_digest(config)
    in_dir = Path(args.in_dir) if getattr(args, "in_dir", None) else out

    if args.command == "run":
        manifest = run_pipeline(args.input, config, out, args.truth)
        print(f"Run complete: {len(manifest.warnings)} warning(s), outputs in {out}")
    elif args.command == "extract":
        _save(out, stages.extract_stage(read_samples(args.input), config), digest)
    elif args.command == "correspond":
        contours = read_stage(stage_path(in_dir, CONTOURS), CONTOURS, digest)
        _save(out, stages.correspond_stage(contours, config), digest)
    elif args.command == "morph":
        pairs = read_stage(stage_path(in_dir, CORRESPONDENCE), CORRESPONDENCE, digest)
        output = stages.morph_stage(pairs, config)
        _save(out, output, digest)
        if config.reconstruction.mesh:
            write_stl(output.meshes, out / MESH_FILE)
    elif args.command == "predict":
        bundles = read_stage(stage_path(in_dir, BUNDLES), BUNDLES, digest)
        _save(out, stages.predict_stage(bundles, config), digest)
    elif args.command == "eval":
        predictions = read_stage(stage_path(in_dir, PREDICTIONS), PREDICTIONS, digest)
        if args.truth:
            truth = read_stage(args.truth, TRUTH, digest)
        else:
            truth = stages.truth_from_contours(read_stage(stage_path(in_dir, CONTOURS), CONTOURS, digest))
        output = stages.eval_stage(predictions, truth, config)
        write_csv(output.tables["aggregate"], out / REPORT_FILE, stages.AGGREGATE_COLUMNS)
        write_csv(output.tables["detail"], out / DETAIL_FILE, stages.DETAIL_COLUMNS)
    elif args.command == "synth":
        spec = config.scene or SceneSpec()
        if args.primitive:
            spec = replace(spec, primitive=args.primitive.replace("-", "_"))
        config = replace(config, scene=spec)
        digest = config_digest(config)
        output = stages.synth_stage(spec, config)
        write_samples(output.extras["samples"], out / SAMPLES_FILE)
        _save(out, output, digest)
        save_config(config.as_dict(), str(out / CONFIG_SNAPSHOT))


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    setup_logging(out, args.verbose)

    try:
        config = PipelineConfig.load(args.config).with_overrides(args.seed, args.threads)
        _run_command(args, config, out)
    except (ConfigError, FileNotFoundError) as err:
        logger.error("Configuration error: %s", err)
        return EXIT_USAGE
    except ParseError as err:
        logger.error("Parse error: %s", err)
        return EXIT_PARSE
    except BoundaryModelError as err:
        logger.error("Stage failure: %s", err)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
