"""Shared fixtures: one-time kernel warm-up and scene helpers.

The compiled backend pays a one-off JIT cost per process.  Timed tests
measure steady-state compute, so every kernel is exercised once up
front; with the pure-numpy backend the warm-up is a no-op-cost pass
through the same code paths.
"""

from __future__ import annotations

import pytest

from cycledepth.core import PoseSE3
from cycledepth.optim import TrainConfig, Trainer
from cycledepth.synth import SceneSequence, SceneSpec, generate_scene
from cycledepth.warp import compute_correspondence, cycle_warp


def make_scene(surface: str = "plane", seed: int = 0, n_frames: int = 2,
               height: int = 64, width: int = 64, **kw) -> SceneSequence:
    spec = SceneSpec(surface=surface, seed=seed, n_frames=n_frames,
                     height=height, width=width, **kw)
    return generate_scene(spec)


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    """Compile every dispatched kernel once before any timed test runs."""
    scene = make_scene(height=24, width=24)
    cfg = TrainConfig(warmup_steps=1, followup_steps=1, warmup_chunks=1,
                      followup_chunks=1)
    tr = Trainer(scene.images, scene.intrinsics, cfg)
    tr.run()  # correspondence, sampling, box/ssim, grid up/adjoint, backward
    # Identity short-circuit path and the public cycle (nearest gather).
    compute_correspondence(scene.depths[0], scene.intrinsics, PoseSE3())
    cycle_warp(scene.images[0], scene.images[1], scene.depths[0],
               scene.depths[1], scene.intrinsics, scene.pose_between(0, 1),
               use_stm=True)
    yield
