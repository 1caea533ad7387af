"""Command-line entry points.

Subcommands: gen (render a scene to disk), perturb (brightness-perturb a
directory of frames), train (one full run), eval (re-score a checkpoint),
compare (cycle arm vs forward-only baseline over a scene grid).

Exit codes: 0 success, 2 configuration or usage error, 3 numerical
failure (degenerate scene, empty mask, diverged loss), 4 I/O failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, fileio, kernels
from .config import (ConfigError, apply_overrides, config_from_dict,
                     config_to_dict, load_config)
from .evaluate import error_map
from .loss import EmptyMaskError
from .optim import Trainer
from .protocol import (ARM_BASELINE, ARM_CYCLE, CompareCell, RunResult,
                       _finish, comparison_grid, prepare_frames, run_training)
from .synth import SURFACES, VARIANTS, DegenerateSceneError, apply_variant

log = logging.getLogger("cycledepth")

REPORT_SCHEMA_ID = "cycledepth-report-v1"


def _common(parser: argparse.ArgumentParser, jobs: bool = False) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--set", dest="overrides", action="append",
                        default=[], metavar="KEY=VALUE",
                        help="dotted-path config override, repeatable")
    parser.add_argument("--seed", type=int, default=None,
                        help="run seed (overrides the config's)")
    parser.add_argument("--out", required=True, help="output directory")
    if jobs:
        parser.add_argument("--jobs", type=int, default=1,
                            help="worker processes (1 = run inline)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cycledepth",
        description="Brightness-robust depth and pose recovery by "
                    "cycle-consistent photometric optimization.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="render a synthetic scene to disk")
    _common(g)

    pe = sub.add_parser("perturb", help="brightness-perturb a frame directory")
    _common(pe)
    pe.add_argument("--frames", required=True,
                    help="directory holding frame_*.png")
    pe.add_argument("--variant", default="global",
                    choices=[v for v in VARIANTS if v != "clean"])

    t = sub.add_parser("train", help="run the two-phase optimization")
    _common(t)

    e = sub.add_parser("eval", help="evaluate a saved checkpoint")
    _common(e)
    e.add_argument("--checkpoint", required=True)

    c = sub.add_parser("compare", help="cycle arm vs forward-only baseline")
    _common(c, jobs=True)
    c.add_argument("--surfaces", default=",".join(SURFACES),
                   help="comma list of surfaces")
    c.add_argument("--variants", default="clean,global_local",
                   help="comma list of brightness variants")
    c.add_argument("--seeds", type=int, default=10,
                   help="number of seeds per cell")
    return p


def _write_run_artifacts(out: Path, res: RunResult) -> list[Path]:
    """Write every artifact of a single run; returns the files written."""
    files = []
    trainer, scene, cfg = res.trainer, res.scene, res.config

    rows = [[r.step, r.phase, r.loss, r.loss_photometric, r.loss_feature]
            for r in trainer.history]
    fileio.save_csv(out / "loss.csv",
                    ["step", "phase", "loss", "loss_photometric",
                     "loss_feature"], rows)
    files.append(out / "loss.csv")

    arrays, meta = trainer.state_arrays()
    meta["config"] = config_to_dict(cfg)
    fileio.save_checkpoint(out / "checkpoint.bin", arrays, meta)
    files.append(out / "checkpoint.bin")

    for k in range(scene.n_frames):
        pred = trainer.predict_depth(k)
        gt = scene.depths[k]
        fileio.save_depth(out / f"depth_pred_{k:03d}.pfm", pred)
        fileio.save_depth(out / f"depth_gt_{k:03d}.pfm", gt)
        scaled = pred.depth * res.frames[k].scale
        fileio.save_png16(out / f"error_map_{k:03d}.png",
                          error_map(scaled, gt.depth, gt.valid))
        fileio.save_png16(out / f"input_{k:03d}.png", trainer.images[k])
        files += [out / f"depth_pred_{k:03d}.pfm",
                  out / f"depth_gt_{k:03d}.pfm",
                  out / f"error_map_{k:03d}.png",
                  out / f"input_{k:03d}.png"]

    report = run_report(res)
    fileio.save_json(out / "report.json", report)
    files.append(out / "report.json")
    return files


def run_report(res: RunResult) -> dict:
    """Report dict for one run; wall-clock is informational only and is
    excluded when comparing reports for reproducibility."""
    return {
        "schema": REPORT_SCHEMA_ID,
        "backend": kernels.backend_name(),
        "config": config_to_dict(res.config),
        "variant": res.config.variant,
        "seed": res.config.seed,
        "frames": [m.as_dict() for m in res.frames],
        "mean_abs_rel": res.mean_abs_rel,
        "ate": None if res.ate_mean is None else {
            "mean": res.ate_mean, "snippets": res.ate_snippets},
        "final_loss": res.trainer.history[-1].loss if res.trainer.history
        else None,
        "wall_clock_sec": res.wall_clock_sec,
    }


def cmd_gen(args) -> int:
    cfg = load_config(args.config, args.overrides, args.seed)
    out = Path(args.out)
    scene, frames = prepare_frames(cfg)
    files = []
    for k in range(scene.n_frames):
        fileio.save_png16(out / f"frame_{k:03d}.png", frames[k])
        fileio.save_depth(out / f"depth_{k:03d}.pfm", scene.depths[k])
        files += [out / f"frame_{k:03d}.png", out / f"depth_{k:03d}.pfm"]
    fileio.save_json(out / "scene.json", {
        "config": config_to_dict(cfg),
        "intrinsics": {"fx": scene.intrinsics.fx, "fy": scene.intrinsics.fy,
                       "cx": scene.intrinsics.cx, "cy": scene.intrinsics.cy},
        "poses": [p.to_matrix().tolist() for p in scene.poses],
    })
    files.append(out / "scene.json")
    fileio.write_manifest(out, files)
    log.info("wrote %d frames to %s", scene.n_frames, out)
    return 0


def cmd_perturb(args) -> int:
    cfg = load_config(args.config, args.overrides, args.seed)
    src = Path(args.frames)
    paths = sorted(src.glob("frame_*.png"))
    if not paths:
        raise ConfigError(f"no frame_*.png files under {src}")
    images = tuple(fileio.load_png16(p) for p in paths)
    rng = np.random.default_rng(cfg.seed)
    perturbed = apply_variant(images, args.variant, rng,
                              spot_count=cfg.spot_count,
                              sigma_range=cfg.spot_sigma,
                              amp_range=cfg.spot_amp)
    out = Path(args.out)
    files = []
    for p, img in zip(paths, perturbed):
        fileio.save_png16(out / p.name, img)
        files.append(out / p.name)
    fileio.save_json(out / "perturb.json", {
        "variant": args.variant, "seed": cfg.seed,
        "source": [p.name for p in paths],
    })
    files.append(out / "perturb.json")
    fileio.write_manifest(out, files)
    log.info("perturbed %d frames (%s) into %s", len(paths), args.variant, out)
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.overrides, args.seed)
    out = Path(args.out)
    total = cfg.train.warmup_steps + cfg.train.followup_steps

    def progress(rec):
        if rec.step % 500 == 0 or rec.step == total:
            log.info("step %d/%d [%s] loss %.6f", rec.step, total, rec.phase,
                     rec.loss)

    res = run_training(cfg, callback=progress)
    files = _write_run_artifacts(out, res)
    fileio.write_manifest(out, files)
    log.info("mean abs rel %.4f; artifacts in %s", res.mean_abs_rel, out)
    return 0


def cmd_eval(args) -> int:
    arrays, meta = fileio.load_checkpoint(args.checkpoint)
    if args.config is None and "config" in meta:
        cfg = config_from_dict(meta["config"])
        if args.overrides:
            cfg = apply_overrides(cfg, args.overrides)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
            cfg.validate()
    else:
        cfg = load_config(args.config, args.overrides, args.seed)
    scene, frames = prepare_frames(cfg)
    trainer = Trainer(frames, scene.intrinsics, cfg.train)
    trainer.restore_state(arrays, meta)
    res = _finish(trainer, scene, cfg, time.perf_counter())
    out = Path(args.out)
    files = []
    for k in range(scene.n_frames):
        pred = trainer.predict_depth(k)
        gt = scene.depths[k]
        scaled = pred.depth * res.frames[k].scale
        fileio.save_png16(out / f"error_map_{k:03d}.png",
                          error_map(scaled, gt.depth, gt.valid))
        files.append(out / f"error_map_{k:03d}.png")
    fileio.save_json(out / "metrics.json", run_report(res))
    files.append(out / "metrics.json")
    fileio.write_manifest(out, files)
    log.info("mean abs rel %.4f; metrics in %s", res.mean_abs_rel, out)
    return 0


def cmd_compare(args) -> int:
    cfg = load_config(args.config, args.overrides, args.seed)
    surfaces = [s for s in args.surfaces.split(",") if s]
    variants = [v for v in args.variants.split(",") if v]
    for s in surfaces:
        if s not in SURFACES:
            raise ConfigError(f"unknown surface {s!r}")
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}")
    if args.seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    seeds = list(range(args.seeds))
    out = Path(args.out)

    def progress(cell: CompareCell):
        log.info("%s seed %d %s: baseline %.4f vs cycle %.4f",
                 cell.surface, cell.seed, cell.variant,
                 cell.baseline.mean_abs_rel, cell.cycle.mean_abs_rel)

    cells = comparison_grid(cfg, surfaces, seeds, variants, jobs=args.jobs,
                            callback=progress)

    files = []
    rows = []
    for cell in cells:
        for arm, res in ((ARM_BASELINE, cell.baseline), (ARM_CYCLE, cell.cycle)):
            rows.append([cell.surface, cell.seed, cell.variant, arm,
                         res.mean_abs_rel]
                        + [m.abs_rel for m in res.frames])
            cell_dir = out / "cells" / \
                f"{cell.surface}_s{cell.seed:02d}_{cell.variant}" / arm
            for k in range(res.scene.n_frames):
                pred = res.trainer.predict_depth(k)
                gt = res.scene.depths[k]
                scaled = pred.depth * res.frames[k].scale
                fileio.save_png16(cell_dir / f"error_map_{k:03d}.png",
                                  error_map(scaled, gt.depth, gt.valid))
                files.append(cell_dir / f"error_map_{k:03d}.png")
    n_frames = cells[0].baseline.scene.n_frames if cells else 0
    header = ["surface", "seed", "variant", "arm", "mean_abs_rel"] \
        + [f"abs_rel_frame{k}" for k in range(n_frames)]
    fileio.save_csv(out / "compare.csv", header, rows)
    files.append(out / "compare.csv")

    summary = summarize_cells(cells)
    summary["schema"] = "cycledepth-compare-v1"
    summary["backend"] = kernels.backend_name()
    summary["config"] = config_to_dict(cfg)
    fileio.save_json(out / "summary.json", summary)
    files.append(out / "summary.json")
    fileio.write_manifest(out, files)
    for line in format_summary(summary):
        log.info("%s", line)
    return 0


def summarize_cells(cells: list[CompareCell]) -> dict:
    """Aggregate per (surface, variant): means, win counts over seeds."""
    groups: dict[tuple[str, str], list[CompareCell]] = {}
    for c in cells:
        groups.setdefault((c.surface, c.variant), []).append(c)
    table = []
    for (surface, variant), group in sorted(groups.items()):
        wins = sum(1 for c in group
                   if c.cycle.mean_abs_rel < c.baseline.mean_abs_rel)
        table.append({
            "surface": surface,
            "variant": variant,
            "n_seeds": len(group),
            "baseline_abs_rel": float(np.mean(
                [c.baseline.mean_abs_rel for c in group])),
            "cycle_abs_rel": float(np.mean(
                [c.cycle.mean_abs_rel for c in group])),
            "cycle_wins": wins,
        })
    return {"cells": table}


def format_summary(summary: dict) -> list[str]:
    lines = ["surface    variant       baseline   cycle      wins"]
    for row in summary["cells"]:
        lines.append(
            f"{row['surface']:<10} {row['variant']:<13} "
            f"{row['baseline_abs_rel']:<10.4f} {row['cycle_abs_rel']:<10.4f} "
            f"{row['cycle_wins']}/{row['n_seeds']}")
    return lines


_COMMANDS = {
    "gen": cmd_gen,
    "perturb": cmd_perturb,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        log.error("configuration error: %s", e)
        return 2
    except (FloatingPointError, EmptyMaskError, DegenerateSceneError) as e:
        log.error("numerical failure: %s", e)
        return 3
    except OSError as e:
        log.error("I/O failure: %s", e)
        return 4


if __name__ == "__main__":
    sys.exit(main())
