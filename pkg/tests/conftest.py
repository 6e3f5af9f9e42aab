"""
Pytest configuration and fixtures for the boundary model tests.
"""
import logging
import math
from pathlib import Path
from typing import Callable, List, Sequence

import numpy as np
import pytest

from core.geometry import Contour, SamplePoint
from metamorphosis.trajectories import PARTICLE, TrajectoryBundle
from reconstruction.synthetic import hex_lattice
from utils.config import PipelineConfig

# Project root directory
PROJECT_ROOT = Path(__file__).parent.parent

# Ensure logs directory exists
LOGS_DIR = PROJECT_ROOT / 'logs'
LOGS_DIR.mkdir(exist_ok=True)

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.StreamHandler(),
        logging.FileHandler(LOGS_DIR / 'test_run.log')
    ]
)
logger = logging.getLogger(__name__)

ENV_DIR = PROJECT_ROOT / "environments"


def circle(radius: float, center=(0.0, 0.0), n: int = 128, frame_tag: str = "world") -> Contour:
    """Counter-clockwise regular polygon approximating a circle."""
    t = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    pts = np.column_stack([center[0] + radius * np.cos(t), center[1] + radius * np.sin(t)])
    return Contour(pts, True, frame_tag)


def square(half: float, center=(0.0, 0.0), frame_tag: str = "world") -> Contour:
    cx, cy = center
    return Contour(
        np.array([[cx - half, cy - half], [cx + half, cy - half], [cx + half, cy + half], [cx - half, cy + half]]),
        True,
        frame_tag,
    )


def labeled_lattice(
    inside: Callable[[np.ndarray], np.ndarray],
    half_width: float = 60.0,
    spacing: float = 5.0,
    z: float = 100.0,
    jitter: float = 0.0,
    seed: int = 0,
) -> List[SamplePoint]:
    """Hex-lattice samples labeled g1 where ``inside`` holds and g2 elsewhere."""
    pts = hex_lattice(half_width, spacing)
    if jitter > 0:
        pts = pts + np.random.default_rng(seed).normal(0.0, jitter, size=pts.shape)
    flags = inside(pts)
    return [SamplePoint(float(x), float(y), z, "g1" if f else "g2") for (x, y), f in zip(pts, flags)]


def disc_membership(radius: float, center=(0.0, 0.0)):
    return lambda p: np.hypot(p[:, 0] - center[0], p[:, 1] - center[1]) <= radius


def radial_bundle(r0=20.0, r1=50.0, n=64, z_top=100.0, z_bottom=90.0, levels=9, shift=(0.0, 0.0)) -> TrajectoryBundle:
    """Straight radial trajectories between two circles, the lower one moved by ``shift``."""
    angles = np.linspace(0, 2 * math.pi, n, endpoint=False)
    radii = np.linspace(r0, r1, levels)
    drift = np.linspace(0.0, 1.0, levels)[:, None] * np.asarray(shift, dtype=float)
    traj = np.stack([np.column_stack([radii * math.cos(a), radii * math.sin(a)]) + drift for a in angles])
    return TrajectoryBundle(
        geozone="g1",
        z_top=z_top,
        z_bottom=z_bottom,
        levels=levels,
        trajectories=traj,
        provenance=[PARTICLE] * n,
        groups=[(0, 0)] * n,
        ring_position=angles / (2 * math.pi),
        sources={0: circle(r0, n=n)},
        targets={0: circle(r1, shift, n=n)},
    )


@pytest.fixture
def make_circle():
    return circle


@pytest.fixture
def make_square():
    return square


@pytest.fixture
def lattice_scene():
    return labeled_lattice


@pytest.fixture
def disc_samples() -> List[SamplePoint]:
    """A single disc of radius 30 m sampled every 5 m."""
    return labeled_lattice(disc_membership(30.0))


@pytest.fixture
def fast_config() -> PipelineConfig:
    """Smaller grids and fewer steps so end-to-end runs stay short."""
    return PipelineConfig.from_dict({
        "run": {"threads": 2, "depths": [2.5, 5.0, 10.0]},
        "extraction": {"grid_target": 120, "gvf_iters": 200, "snake": {"n_points": 120, "max_iters": 400}},
        "correspondence": {"grid_target": 120},
        "metamorphosis": {"max_steps": 800, "min_particles": 32},
        "reconstruction": {"eval_pixel_size": 0.5},
    })


@pytest.fixture
def out_dir(tmp_path) -> Path:
    path = tmp_path / "out"
    try:
        yield path
    finally:
        for handler in logging.getLogger().handlers:
            handler.flush()


@pytest.fixture
def run_cli():
    """Call the CLI in-process and return its exit code."""
    from pipeline.cli import main

    def _run(args: Sequence[str]) -> int:
        logger.info("pipeline %s", " ".join(args))
        try:
            return main(list(args))
        except SystemExit as exc:
            return int(exc.code or 0)

    return _run
