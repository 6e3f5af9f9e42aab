"""
Configuration utilities for the boundary model pipeline.

This module loads and saves YAML configuration files and turns the raw
mapping into a validated :class:`PipelineConfig`, one frozen section per
pipeline stage.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import yaml

from core.errors import ConfigError
from core.geometry import DEFAULT_GRID_TARGET, DEFAULT_MARGIN
from correspondence.alignment import PENALTY, REWARD_SCALE, AlignmentWeights
from correspondence.association import DISTANCES, REACH
from extraction.section import ExtractionParams
from extraction.snake import SnakeParams
from metamorphosis.levelset import MorphParams
from reconstruction.evaluation import EVAL_PIXEL_SIZE
from reconstruction.synthetic import SceneSpec

# Set up logging
logger = logging.getLogger(__name__)

DEFAULT_DEPTHS = tuple(1.25 * k for k in range(1, 9))
# unset correspondence.mu_lower resolves to this multiple of the median sample spacing
MU_LOWER_FACTOR = 1.5


def load_config(config_path: str) -> Dict[str, Any]:
    """
    Load a YAML configuration file.

    Args:
        config_path: Path to the YAML configuration file

    Returns:
        dict: The loaded configuration

    Raises:
        FileNotFoundError: If the config file doesn't exist
        yaml.YAMLError: If the YAML is invalid
    """
    path = Path(config_path)
    if not path.exists():
        error_msg = f"Configuration file not found: {path}"
        logger.error(error_msg)
        raise FileNotFoundError(error_msg)

    try:
        with open(path, 'r', encoding='utf-8') as file:
            config = yaml.safe_load(file)

        if not isinstance(config, dict):
            logger.warning("Configuration file %s is empty or invalid", path)
            config = {}

        logger.info("Loaded configuration from %s", path)
        return config

    except yaml.YAMLError as err:
        logger.error("Error parsing YAML configuration file %s: %s", path, err)
        raise


def save_config(config: Dict[str, Any], config_path: str) -> None:
    """
    Save a configuration dictionary to a YAML file.

    Args:
        config: Configuration dictionary to save
        config_path: Path to save the configuration to

    Raises:
        OSError: If there's an error writing to the file
    """
    path = Path(config_path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as file:
            yaml.safe_dump(config, file, default_flow_style=False)
        logger.info("Saved configuration to %s", path)
    except OSError as err:
        logger.error("Error saving configuration to %s: %s", path, err)
        raise


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    threads: int = 4
    geozones: Tuple[str, ...] = ("g1",)
    depths: Tuple[float, ...] = DEFAULT_DEPTHS
    bench_spacing: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "geozones", tuple(str(g) for g in self.geozones))
        object.__setattr__(self, "depths", tuple(float(d) for d in self.depths))
        if self.threads < 1:
            raise ValueError("run.threads must be at least 1")
        if not self.geozones:
            raise ValueError("run.geozones must name at least one label")
        if not self.depths or min(self.depths) <= 0:
            raise ValueError("run.depths must be positive")
        if not self.bench_spacing > 0:
            raise ValueError("run.bench_spacing must be positive")


@dataclass(frozen=True)
class CorrespondenceSection:
    mu_lower: Optional[float] = None
    distance: str = REACH
    grid_target: int = DEFAULT_GRID_TARGET
    margin: int = DEFAULT_MARGIN
    penalty: float = PENALTY
    reward_scale: float = REWARD_SCALE
    corridor_width: Optional[float] = None

    def __post_init__(self):
        if self.mu_lower is not None and not self.mu_lower > 0:
            raise ValueError("correspondence.mu_lower must be positive")
        if self.distance not in DISTANCES:
            raise ValueError(f"correspondence.distance must be one of {DISTANCES}")
        if self.grid_target < 16 or self.margin < 1:
            raise ValueError("correspondence.grid_target must be >= 16 and correspondence.margin >= 1")
        if not self.penalty < 0:
            raise ValueError("correspondence.penalty must be negative")
        if not self.reward_scale >= 0:
            raise ValueError("correspondence.reward_scale must be non-negative")
        if self.corridor_width is not None and not self.corridor_width > 0:
            raise ValueError("correspondence.corridor_width must be positive")

    @property
    def weights(self) -> AlignmentWeights:
        return AlignmentWeights(self.penalty, self.reward_scale, self.corridor_width)

    def resolved_mu_lower(self, spacing: float) -> float:
        """``mu_lower``, or ``MU_LOWER_FACTOR`` x the median sample spacing when unset."""
        if self.mu_lower is not None:
            return self.mu_lower
        if not spacing > 0:
            raise ConfigError("correspondence.mu_lower is unset and no sample spacing is known")
        return MU_LOWER_FACTOR * spacing


@dataclass(frozen=True)
class ReconstructionSection:
    eval_pixel_size: float = EVAL_PIXEL_SIZE
    mesh: bool = True

    def __post_init__(self):
        if not self.eval_pixel_size > 0:
            raise ValueError("reconstruction.eval_pixel_size must be positive")


SECTIONS = ("run", "extraction", "correspondence", "metamorphosis", "reconstruction", "scene")


def _check_keys(section: str, raw: Dict[str, Any], cls) -> None:
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        msg = f"Unknown configuration key(s) in '{section}': {', '.join(unknown)}"
        logger.error(msg)
        raise ConfigError(msg)


def _mapping(section: str, value: Any) -> Dict[str, Any]:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"Configuration section '{section}' must be a mapping")
    return dict(value)


def _build(section: str, cls, raw: Dict[str, Any]):
    _check_keys(section, raw, cls)
    try:
        return cls(**raw)
    except (TypeError, ValueError) as err:
        logger.error("Invalid '%s' configuration: %s", section, err)
        raise ConfigError(str(err)) from err


def _extraction(raw: Dict[str, Any]) -> ExtractionParams:
    raw = dict(raw)
    snake_raw = _mapping("extraction.snake", raw.pop("snake", None))
    snake = _build("extraction.snake", SnakeParams, snake_raw)
    if "t_orient_deg" in raw:
        raw["t_orient"] = math.radians(float(raw.pop("t_orient_deg")))
    return _build("extraction", ExtractionParams, {**raw, "snake": snake})


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


@dataclass(frozen=True)
class PipelineConfig:
    """Validated configuration of a whole run."""

    run: RunSection = field(default_factory=RunSection)
    extraction: ExtractionParams = field(default_factory=ExtractionParams)
    correspondence: CorrespondenceSection = field(default_factory=CorrespondenceSection)
    metamorphosis: MorphParams = field(default_factory=MorphParams)
    reconstruction: ReconstructionSection = field(default_factory=ReconstructionSection)
    scene: Optional[SceneSpec] = None

    @classmethod
    def from_dict(cls, raw: Optional[Dict[str, Any]]) -> "PipelineConfig":
        """Build and validate a config from a raw mapping.

        Args:
            raw: Mapping as loaded from YAML; missing sections take defaults

        Returns:
            PipelineConfig: The validated configuration

        Raises:
            ConfigError: On unknown keys or a violated parameter constraint
        """
        raw = _mapping("<root>", raw)
        unknown = sorted(set(raw) - set(SECTIONS))
        if unknown:
            msg = f"Unknown configuration section(s): {', '.join(unknown)}"
            logger.error(msg)
            raise ConfigError(msg)

        scene_raw = raw.get("scene")
        return cls(
            run=_build("run", RunSection, _mapping("run", raw.get("run"))),
            extraction=_extraction(_mapping("extraction", raw.get("extraction"))),
            correspondence=_build("correspondence", CorrespondenceSection, _mapping("correspondence", raw.get("correspondence"))),
            metamorphosis=_build("metamorphosis", MorphParams, _mapping("metamorphosis", raw.get("metamorphosis"))),
            reconstruction=_build("reconstruction", ReconstructionSection, _mapping("reconstruction", raw.get("reconstruction"))),
            scene=_build("scene", SceneSpec, _mapping("scene", scene_raw)) if scene_raw is not None else None,
        )

    @classmethod
    def load(cls, config_path: Optional[str]) -> "PipelineConfig":
        """Load from YAML, or the defaults when no path is given."""
        if config_path is None:
            return cls()
        try:
            raw = load_config(config_path)
        except yaml.YAMLError as err:
            raise ConfigError(f"Invalid YAML in {config_path}: {err}") from err
        return cls.from_dict(raw)

    def with_overrides(self, seed: Optional[int] = None, threads: Optional[int] = None) -> "PipelineConfig":
        run = self.run
        if seed is not None:
            run = replace(run, seed=int(seed))
        if threads is not None:
            try:
                run = replace(run, threads=int(threads))
            except ValueError as err:
                raise ConfigError(str(err)) from err
        return replace(self, run=run)

    def as_dict(self) -> Dict[str, Any]:
        out = {
            "run": _plain(asdict(self.run)),
            "extraction": _plain(asdict(self.extraction)),
            "correspondence": asdict(self.correspondence),
            "metamorphosis": asdict(self.metamorphosis),
            "reconstruction": asdict(self.reconstruction),
        }
        if self.scene is not None:
            out["scene"] = self.scene.as_dict()
        return out


def config_digest(config: PipelineConfig) -> str:
    """SHA-256 of the canonical JSON form of a validated config.

    ``run.threads`` is left out; stage files written with any worker count
    share one digest.
    """
    raw = config.as_dict()
    raw["run"].pop("threads", None)
    text = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
