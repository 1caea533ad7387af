"""Depth and trajectory evaluation.

Depth metrics follow the usual monocular-depth convention: per-frame
median scaling (the recovered scale is unobservable), an upper depth
cap applied to both maps, and the abs rel / sq rel / rmse / rmse log /
threshold-ratio suite averaged over valid pixels.

Trajectory error is the scale-aligned absolute trajectory error over
all overlapping five-frame snippets: each snippet is translated to start
at the origin, a single least-squares scale aligns predicted to true
positions, and the RMS residual is averaged over snippets.  No rotation
alignment is applied.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Image, PoseSE3, se3_inverse

__all__ = [
    "DepthMetrics",
    "Trajectory",
    "median_scale",
    "depth_metrics",
    "ate",
    "error_map",
]


@dataclass(frozen=True)
class DepthMetrics:
    """Standard depth error suite plus the scale that was applied."""

    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    a1: float
    a2: float
    a3: float
    scale: float
    count: int

    def as_dict(self) -> dict:
        return {
            "abs_rel": self.abs_rel,
            "sq_rel": self.sq_rel,
            "rmse": self.rmse,
            "rmse_log": self.rmse_log,
            "a1": self.a1,
            "a2": self.a2,
            "a3": self.a3,
            "scale": self.scale,
            "count": self.count,
        }


@dataclass(frozen=True)
class Trajectory:
    """A camera path as world-to-camera poses, in frame order."""

    poses: tuple[PoseSE3, ...]

    def __len__(self) -> int:
        return len(self.poses)

    def positions(self) -> np.ndarray:
        """Camera centers in world coordinates, shape (N, 3)."""
        return np.array([se3_inverse(p).translation for p in self.poses])


def _lower_median(values: np.ndarray) -> float:
    """Median as the lower-middle order statistic, sorted[(n-1)//2]."""
    v = np.sort(np.asarray(values).ravel())
    if v.size == 0:
        raise ValueError("median of empty set")
    return float(v[(v.size - 1) // 2])


def median_scale(pred: np.ndarray, gt: np.ndarray,
                 mask: np.ndarray) -> tuple[np.ndarray, float]:
    """Scale `pred` so its masked median matches the ground truth's."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty mask")
    s = _lower_median(gt[mask]) / _lower_median(pred[mask])
    return pred * s, float(s)


def depth_metrics(pred: np.ndarray, gt: np.ndarray,
                  mask: np.ndarray | None = None,
                  cap: float | None = None,
                  scale: bool = True) -> DepthMetrics:
    """Error suite over masked pixels; both maps must be positive there.

    With `scale`, predictions are median-aligned to the ground truth
    first.  With `cap`, both maps are then clamped from above.
    Threshold ratios use strict comparison against 1.25^k.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    if mask is None:
        mask = np.ones(pred.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool) & np.isfinite(pred) & np.isfinite(gt)
    if not mask.any():
        raise ValueError("no valid pixels to evaluate")
    p = pred[mask]
    g = gt[mask]
    if np.any(p <= 0) or np.any(g <= 0):
        raise ValueError("depths must be positive on the mask")
    s = 1.0
    if scale:
        _, s = median_scale(p, g, np.ones(p.shape, dtype=bool))
        p = p * s
    if cap is not None:
        p = np.minimum(p, cap)
        g = np.minimum(g, cap)
    thresh = np.maximum(g / p, p / g)
    diff = g - p
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff * diff / g)),
        rmse=float(np.sqrt(np.mean(diff * diff))),
        rmse_log=float(np.sqrt(np.mean((np.log(g) - np.log(p)) ** 2))),
        a1=float(np.mean(thresh < 1.25)),
        a2=float(np.mean(thresh < 1.25 ** 2)),
        a3=float(np.mean(thresh < 1.25 ** 3)),
        scale=float(s),
        count=int(mask.sum()),
    )


def ate(pred: Sequence[PoseSE3] | Trajectory,
        gt: Sequence[PoseSE3] | Trajectory,
        snippet_len: int = 5) -> tuple[float, list[float]]:
    """Scale-aligned ATE over overlapping snippets.

    Returns (mean over snippets, per-snippet values).  Each snippet of
    `snippet_len` consecutive frames is translated so both paths start
    at the origin; one non-negative scale minimizing the squared
    position residual aligns predicted to true; the snippet value is the
    RMS residual over its frames.
    """
    pred_t = pred if isinstance(pred, Trajectory) else Trajectory(tuple(pred))
    gt_t = gt if isinstance(gt, Trajectory) else Trajectory(tuple(gt))
    if len(pred_t) != len(gt_t):
        raise ValueError("trajectories differ in length")
    n = len(pred_t)
    if snippet_len < 2:
        raise ValueError("snippets need at least two frames")
    if n < snippet_len:
        raise ValueError(
            f"need at least {snippet_len} frames for one snippet, got {n}")
    pp = pred_t.positions()
    gg = gt_t.positions()
    values = []
    for i in range(n - snippet_len + 1):
        p = pp[i:i + snippet_len] - pp[i]
        g = gg[i:i + snippet_len] - gg[i]
        denom = float(np.sum(p * p))
        s = float(np.sum(p * g)) / denom if denom > 0 else 1.0
        resid = s * p - g
        values.append(float(np.sqrt(np.mean(np.sum(resid * resid, axis=1)))))
    return float(np.mean(values)), values


def error_map(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray,
              vmax: float = 0.3) -> Image:
    """Per-pixel abs rel as a blue-to-red image on a fixed [0, vmax] range.

    The ramp is quantized to 256 levels; invalid pixels are black.
    Callers wanting median-aligned maps should scale `pred` first.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    err = np.zeros(pred.shape, dtype=np.float64)
    safe_gt = np.where(mask, gt, 1.0)
    err = np.where(mask, np.abs(pred - gt) / np.abs(safe_gt), 0.0)
    t = np.clip(err / vmax, 0.0, 1.0)
    level = np.minimum(np.floor(t * 256.0), 255.0) / 255.0
    rgb = np.stack([level, np.zeros_like(level), 1.0 - level], axis=-1)
    rgb = np.where(mask[..., None], rgb, 0.0)
    return Image(data=rgb)
