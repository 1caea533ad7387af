"""End-to-end runs: scene, perturbation, training, evaluation, comparison.

A "run" fixes one scene (surface + seed), one brightness variant, and
one training configuration, and produces per-frame depth metrics.  A
"comparison" shares a single warm-up between a cycle-trained arm and a
forward-only baseline arm, then branches; because training is
deterministic, each arm's result is identical to a from-scratch run
with that arm's configuration.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .config import RunConfig
from .core import PoseSE3, se3_compose
from .evaluate import DepthMetrics, ate, depth_metrics
from .optim import Trainer
from .synth import SceneSequence, apply_variant, generate_scene

__all__ = [
    "RunResult",
    "CompareCell",
    "derive_seed",
    "prepare_frames",
    "run_training",
    "run_comparison",
    "comparison_grid",
    "ARM_BASELINE",
    "ARM_CYCLE",
]

ARM_BASELINE = "baseline"
ARM_CYCLE = "pcc"


@dataclass(frozen=True)
class RunResult:
    """Outcome of one training run."""

    config: RunConfig
    scene: SceneSequence
    frames: list[DepthMetrics]
    mean_abs_rel: float
    ate_mean: float | None
    ate_snippets: list[float] | None
    wall_clock_sec: float
    trainer: Trainer


@dataclass(frozen=True)
class CompareCell:
    """Both arms of one (surface, seed, variant) cell."""

    surface: str
    seed: int
    variant: str
    baseline: "RunResult"
    cycle: "RunResult"


def derive_seed(*parts: int | str) -> int:
    """Stable sub-seed from a tuple of ints and short strings."""
    ints = []
    for p in parts:
        if isinstance(p, str):
            ints.extend(p.encode())
        else:
            ints.append(int(p) & 0xFFFFFFFF)
    return int(np.random.SeedSequence(ints).generate_state(1)[0])


def prepare_frames(cfg: RunConfig):
    """Generate the scene and apply the configured brightness variant."""
    scene = generate_scene(replace(cfg.scene, seed=derive_seed(cfg.seed, "scene",
                                                               cfg.scene.seed)))
    rng = np.random.default_rng(derive_seed(cfg.seed, "perturb"))
    frames = apply_variant(scene.images, cfg.variant, rng,
                           spot_count=cfg.spot_count,
                           sigma_range=cfg.spot_sigma,
                           amp_range=cfg.spot_amp)
    return scene, frames


def _evaluate(trainer: Trainer, scene: SceneSequence,
              cfg: RunConfig) -> tuple[list[DepthMetrics], float]:
    frames = []
    for k in range(scene.n_frames):
        pred = trainer.predict_depth(k)
        gt = scene.depths[k]
        m = depth_metrics(pred.depth, gt.depth, gt.valid, cap=cfg.depth_cap,
                          scale=True)
        frames.append(m)
    mean_abs_rel = float(np.mean([m.abs_rel for m in frames]))
    return frames, mean_abs_rel


def _pose_eval(trainer: Trainer, scene: SceneSequence):
    """Chained predicted trajectory vs ground truth, when long enough."""
    if scene.n_frames < 5:
        return None, None
    poses = [PoseSE3()]
    for i in range(scene.n_frames - 1):
        step = trainer.predict_pose((i, i + 1))
        poses.append(se3_compose(step, poses[-1]))
    mean, per = ate(poses, list(scene.poses), snippet_len=5)
    return mean, per


def _finish(trainer: Trainer, scene: SceneSequence, cfg: RunConfig,
            t0: float) -> RunResult:
    frames, mean_abs_rel = _evaluate(trainer, scene, cfg)
    ate_mean, ate_snippets = _pose_eval(trainer, scene)
    return RunResult(config=cfg, scene=scene, frames=frames,
                     mean_abs_rel=mean_abs_rel, ate_mean=ate_mean,
                     ate_snippets=ate_snippets,
                     wall_clock_sec=time.perf_counter() - t0, trainer=trainer)


def run_training(cfg: RunConfig, callback=None) -> RunResult:
    """One full two-phase run under the configured objective."""
    t0 = time.perf_counter()
    scene, frames = prepare_frames(cfg)
    trainer = Trainer(frames, scene.intrinsics, cfg.train)
    trainer.run(callback=callback)
    return _finish(trainer, scene, cfg, t0)


def run_comparison(cfg: RunConfig) -> CompareCell:
    """Train both arms of one cell off a shared warm-up.

    The warm-up phase is identical under both objectives, so the arms
    branch from one warm-up trajectory; determinism makes each arm equal
    to its own full run.
    """
    t0 = time.perf_counter()
    scene, frames = prepare_frames(cfg)
    cycle_cfg = replace(cfg.train, use_cycle=True)
    trainer = Trainer(frames, scene.intrinsics, cycle_cfg)
    trainer.run(cycle_cfg.warmup_steps)
    base_arm = trainer.branch(use_cycle=False, use_stm=False,
                              use_perception=False, use_ema=False)
    cycle_arm = trainer.branch()
    base_arm.run()
    cycle_arm.run()
    base_res = _finish(base_arm, scene, cfg, t0)
    cyc_res = _finish(cycle_arm, scene, cfg, t0)
    return CompareCell(surface=cfg.scene.surface, seed=cfg.seed,
                       variant=cfg.variant, baseline=base_res, cycle=cyc_res)


def _cell_config(base: RunConfig, surface: str, seed: int,
                 variant: str) -> RunConfig:
    return replace(base, scene=replace(base.scene, surface=surface),
                   seed=seed, variant=variant)


def _run_cell(args) -> CompareCell:
    base, surface, seed, variant = args
    return run_comparison(_cell_config(base, surface, seed, variant))


def comparison_grid(base: RunConfig, surfaces: list[str], seeds: list[int],
                    variants: list[str], jobs: int = 1,
                    callback=None) -> list[CompareCell]:
    """Run the full (surface, seed, variant) grid, optionally in parallel.

    Results come back in grid order regardless of job count.
    """
    tasks = [(base, surface, seed, variant)
             for surface in surfaces for seed in seeds for variant in variants]
    if jobs <= 1:
        cells = []
        for t in tasks:
            cell = _run_cell(t)
            if callback is not None:
                callback(cell)
            cells.append(cell)
        return cells
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        cells = []
        for cell in pool.map(_run_cell, tasks):
            if callback is not None:
                callback(cell)
            cells.append(cell)
        return cells
