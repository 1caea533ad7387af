"""Direct optimization of depth grids and pose twists.

Instead of a learned predictor, depth is parameterized per frame as a
coarse grid of log-depth values bilinearly upsampled to the raster, and
relative motion as an independent 6-vector twist per ordered frame pair.
Both are fit by momentum gradient descent on image-reconstruction
losses, in two phases:

* warm-up: classic forward photometric loss; for every ordered pair the
  destination view is reconstructed from the other frame's pixels and
  compared against the real destination image.
* follow-up: cycle loss; a shadow copy of the parameters (frozen or
  slowly tracking the active ones, see `ema_alpha`) drives the forward
  half of the cycle with no gradient, the active parameters drive the
  backward half, and the comparison is target versus twice-warped
  target, optionally with structure transplanting and a feature-level
  term.  Source intensities then no longer anchor the loss, which is
  what makes the objective robust to brightness changes between frames.

A forward-only baseline (use_cycle off) simply continues the warm-up
objective through the follow-up phase.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import kernels
from .core import (DepthMap, Image, Intrinsics, PoseSE3, se3_exp,
                   so3_exp_jacobian)
from .freq import _structure_phasor, _transplant_phasor
from .loss import _perception_raw, _photometric_raw, feature_extract
from .warp import DEFAULT_ZNEAR

__all__ = [
    "TrainConfig",
    "ParamState",
    "StepRecord",
    "Trainer",
    "ConfigError",
]


class ConfigError(ValueError):
    """Raised for inconsistent training configurations."""


@dataclass(frozen=True)
class TrainConfig:
    """Knobs for the two-phase optimization.

    Learning rates are per parameter group: the base `lr` is scaled by
    `lr_grid` for log-depth grids and by `lr_rot` / `lr_trans` for the
    rotation / translation halves of each twist.  Each phase is split
    into equal chunks (`warmup_chunks` / `followup_chunks`) and the rate
    decays by `lr_decay` per chunk within its phase; the follow-up phase
    restarts the decay from `followup_lr_scale` times the base rate.
    The shadow parameters blend toward the active ones every `ema_every`
    follow-up steps with weight `ema_alpha` on the old shadow; with
    `use_ema` off the shadow stays frozen at its warm-up snapshot.
    """

    warmup_steps: int = 2000
    followup_steps: int = 1000
    lr: float = 1.0
    momentum: float = 0.9
    lr_grid: float = 0.12
    lr_rot: float = 2e-6
    lr_trans: float = 0.02
    lr_decay: float = 0.9
    warmup_chunks: int = 20
    followup_chunks: int = 10
    followup_lr_scale: float = 0.5
    grid_cell: int = 8
    nominal_depth: float = 100.0
    use_cycle: bool = True
    use_stm: bool = True
    use_perception: bool = True
    use_ema: bool = True
    ema_alpha: float = 0.75
    ema_every: int = 200
    perception_weight: float = 1.0
    warmup_direction: str = "forward"

    def validate(self) -> None:
        if self.warmup_steps < 0 or self.followup_steps < 0:
            raise ConfigError("step counts must be non-negative")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.grid_cell < 1:
            raise ConfigError("grid_cell must be >= 1")
        if self.nominal_depth <= 0:
            raise ConfigError("nominal_depth must be positive")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError("lr_decay must be in (0, 1]")
        if self.warmup_chunks < 1 or self.followup_chunks < 1:
            raise ConfigError("chunk counts must be >= 1")
        if self.followup_lr_scale <= 0:
            raise ConfigError("followup_lr_scale must be positive")
        if not 0.0 <= self.ema_alpha <= 1.0:
            raise ConfigError("ema_alpha must be in [0, 1]")
        if self.ema_every < 1:
            raise ConfigError("ema_every must be >= 1")
        if self.use_stm and not self.use_cycle:
            raise ConfigError("structure transplanting requires the cycle loss")
        if self.use_perception and not self.use_cycle:
            raise ConfigError("the feature term requires the cycle loss")
        if self.warmup_direction not in ("forward", "backward"):
            raise ConfigError("warmup_direction must be forward or backward")


def _grid_shape(h: int, w: int, cell: int) -> tuple[int, int]:
    return math.ceil(h / cell) + 1, math.ceil(w / cell) + 1


@dataclass
class ParamState:
    """All optimizable parameters: per-frame grids, per-ordered-pair twists."""

    log_grids: dict[int, np.ndarray] = field(default_factory=dict)
    twists: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)

    def clone(self) -> "ParamState":
        return ParamState(
            log_grids={k: v.copy() for k, v in self.log_grids.items()},
            twists={k: v.copy() for k, v in self.twists.items()},
        )


@dataclass(frozen=True)
class StepRecord:
    """One optimization step's bookkeeping."""

    step: int
    phase: str
    loss: float
    loss_photometric: float
    loss_feature: float


class Trainer:
    """Fits depth grids and twists to one image sequence.

    `images` are the (possibly brightness-perturbed) frames actually
    optimized against.  Ordered pairs are all adjacent (i, i+1) and
    (i+1, i).  Gradients are accumulated over every pair before a single
    momentum update per step, so per-step results do not depend on pair
    order.
    """

    def __init__(self, images: Sequence[Image], intrinsics: Intrinsics,
                 config: TrainConfig):
        config.validate()
        if len(images) < 2:
            raise ConfigError("need at least two frames")
        shape = (images[0].height, images[0].width)
        for im in images:
            if (im.height, im.width) != shape:
                raise ConfigError("frames must share dimensions")
        self.images = list(images)
        self.intrinsics = intrinsics
        self.config = config
        self.height, self.width = shape
        self.pairs = []
        for i in range(len(images) - 1):
            self.pairs.append((i, i + 1))
            self.pairs.append((i + 1, i))

        gh, gw = _grid_shape(self.height, self.width, config.grid_cell)
        init = math.log(config.nominal_depth)
        self.active = ParamState(
            log_grids={i: np.full((gh, gw), init) for i in range(len(images))},
            twists={p: np.zeros(6) for p in self.pairs},
        )
        self.shadow = self.active.clone()
        self.velocity = ParamState(
            log_grids={i: np.zeros((gh, gw)) for i in range(len(images))},
            twists={p: np.zeros(6) for p in self.pairs},
        )
        self.features = [feature_extract(im) for im in self.images]
        self.steps_done = 0
        self._synced = False
        self._all_valid = np.ones(shape, dtype=bool)
        # The cycle's forward half depends only on the images and the
        # shadow parameters, so its reconstruction is reused until the
        # shadow moves; the structure phasors never change at all.
        self._phasors = [_structure_phasor(im.data) for im in self.images]
        self._shadow_version = 0
        self._fwd_cache: dict[tuple[int, int], tuple] = {}
        self.history: list[StepRecord] = []

    # -- prediction --------------------------------------------------------

    def _state(self, which: str) -> ParamState:
        if which == "active":
            return self.active
        if which == "ema":
            return self.shadow
        raise KeyError(f"unknown parameter set {which!r}")

    def predict_depth(self, frame: int, which: str = "active") -> DepthMap:
        """Depth map for a frame id from the chosen parameter set."""
        state = self._state(which)
        if frame not in state.log_grids:
            raise KeyError(f"unknown frame id {frame}")
        return DepthMap(depth=self._depth_raw(state, frame))

    def predict_pose(self, pair: tuple[int, int],
                     which: str = "active") -> PoseSE3:
        """Relative pose for an ordered pair from the chosen parameter set."""
        state = self._state(which)
        if pair not in state.twists:
            raise KeyError(f"unknown frame pair {pair}")
        return se3_exp(state.twists[pair])

    # -- internals -----------------------------------------------------------
    # The hot loop works on bare arrays and calls the kernels directly;
    # the validated value types are for the public surface.

    def _depth_raw(self, state: ParamState, frame: int) -> np.ndarray:
        log_depth = kernels.grid_up(state.log_grids[frame], self.height,
                                    self.width, float(self.config.grid_cell))
        return np.exp(log_depth)

    def _corr_twist(self, depth: np.ndarray, twist: np.ndarray):
        """Correspondence plus the rotation jacobian for one twist."""
        rot, drot = so3_exp_jacobian(twist[:3])
        intr = self.intrinsics
        coords, valid = kernels.correspondence(
            depth, self._all_valid, intr.fx, intr.fy, intr.cx, intr.cy,
            rot, twist[3:], DEFAULT_ZNEAR)
        return rot, drot, coords, valid

    def _warp_grad(self, src: np.ndarray, coords, valid, g, depth,
                   rot, drot, twist):
        intr = self.intrinsics
        return kernels.warp_backward(src, coords, valid, g, depth, rot,
                                     drot, twist[3:], intr.fx, intr.fy,
                                     intr.cx, intr.cy)

    def _forward_terms(self, dst: int, src: int, grads: "ParamState"):
        """Forward photometric loss for one ordered pair, into `grads`."""
        twist = self.active.twists[(dst, src)]
        depth = self._depth_raw(self.active, dst)
        rot, drot, coords, valid = self._corr_twist(depth, twist)
        warped = kernels.bilinear_sample(self.images[src].data, coords, valid)
        value, g = _photometric_raw(self.images[dst].data, warped, valid,
                                    want_grad=True)
        d_depth, d_twist = self._warp_grad(self.images[src].data, coords,
                                           valid, g, depth, rot, drot, twist)
        self._accumulate(grads, dst, (dst, src), d_depth, d_twist, depth)
        return value.scalar

    def _cycle_terms(self, t: int, s: int, grads: "ParamState"):
        """Cycle loss (and optional feature term) for one ordered pair."""
        cfg = self.config
        # Forward half, shadow parameters, no gradient: rebuild the source
        # view from target pixels.
        cached = self._fwd_cache.get((t, s))
        if cached is not None and cached[0] == self._shadow_version:
            _, mid, fwd_valid = cached
        else:
            t_depth_s = self._depth_raw(self.shadow, s)
            _, _, fwd_coords, fwd_valid = self._corr_twist(
                t_depth_s, self.shadow.twists[(s, t)])
            mid = kernels.bilinear_sample(self.images[t].data, fwd_coords,
                                          fwd_valid)
            if cfg.use_stm:
                mid = _transplant_phasor(mid, self._phasors[s])
            self._fwd_cache[(t, s)] = (self._shadow_version, mid, fwd_valid)
        # Backward half, active parameters, gradient on.
        twist = self.active.twists[(t, s)]
        depth_t = self._depth_raw(self.active, t)
        rot, drot, coords, valid = self._corr_twist(depth_t, twist)
        # A cycle pixel is usable only when every texel its bilinear read
        # blends was produced by the forward reconstruction; mid is zero
        # outside fwd_valid and those zeros must not leak into the loss.
        h, w = valid.shape
        u0 = np.clip(np.floor(coords[..., 0]).astype(np.int64), 0, w - 1)
        v0 = np.clip(np.floor(coords[..., 1]).astype(np.int64), 0, h - 1)
        u1 = np.minimum(u0 + 1, w - 1)
        v1 = np.minimum(v0 + 1, h - 1)
        cycle_valid = valid & (fwd_valid[v0, u0] & fwd_valid[v0, u1]
                               & fwd_valid[v1, u0] & fwd_valid[v1, u1])

        warped = kernels.bilinear_sample(mid, coords, valid)
        pht, g_pht = _photometric_raw(self.images[t].data, warped,
                                      cycle_valid, want_grad=True)
        pcp_scalar = 0.0
        if cfg.use_perception:
            feat_warp = kernels.bilinear_sample(self.features[s], coords,
                                                valid)
            pcp, g_pcp = _perception_raw(self.features[t], feat_warp, valid,
                                         want_grad=True)
            pcp_scalar = pcp.scalar
            # Both halves sample the same source grid through the same
            # field, so one fused backward pass serves image and features.
            stack_img = np.concatenate([mid, self.features[s]], axis=2)
            g_stack = np.concatenate(
                [g_pht, cfg.perception_weight * g_pcp], axis=2)
        else:
            stack_img = mid
            g_stack = g_pht
        d_depth, d_twist = self._warp_grad(stack_img, coords, valid, g_stack,
                                           depth_t, rot, drot, twist)
        self._accumulate(grads, t, (t, s), d_depth, d_twist, depth_t)
        return pht.scalar, pcp_scalar

    def _accumulate(self, grads: ParamState, frame: int,
                    pair: tuple[int, int], d_depth: np.ndarray,
                    d_twist: np.ndarray, depth: np.ndarray) -> None:
        # Chain through depth = exp(upsampled log grid).
        d_log = d_depth * depth
        gh, gw = grads.log_grids[frame].shape
        grads.log_grids[frame] += kernels.grid_up_adjoint(
            d_log, gh, gw, float(self.config.grid_cell))
        grads.twists[pair] += d_twist

    def _zero_like_params(self) -> ParamState:
        return ParamState(
            log_grids={k: np.zeros_like(v)
                       for k, v in self.active.log_grids.items()},
            twists={k: np.zeros_like(v)
                    for k, v in self.active.twists.items()},
        )

    def current_lr(self) -> float:
        """Base learning rate in effect for the step about to run."""
        cfg = self.config
        if self.steps_done < cfg.warmup_steps:
            chunk = max(1, math.ceil(cfg.warmup_steps / cfg.warmup_chunks))
            return cfg.lr * cfg.lr_decay ** (self.steps_done // chunk)
        fstep = self.steps_done - cfg.warmup_steps
        chunk = max(1, math.ceil(cfg.followup_steps / cfg.followup_chunks))
        return cfg.lr * cfg.followup_lr_scale \
            * cfg.lr_decay ** (fstep // chunk)

    def _apply(self, grads: ParamState, lr: float) -> None:
        cfg = self.config
        for k, g in grads.log_grids.items():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite grid gradient, frame {k}")
            v = self.velocity.log_grids[k]
            v *= cfg.momentum
            v += g
            self.active.log_grids[k] -= lr * cfg.lr_grid * v
        for k, g in grads.twists.items():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite twist gradient, pair {k}")
            v = self.velocity.twists[k]
            v *= cfg.momentum
            v += g
            self.active.twists[k][:3] -= lr * cfg.lr_rot * v[:3]
            self.active.twists[k][3:] -= lr * cfg.lr_trans * v[3:]

    # -- the phases ----------------------------------------------------------

    @property
    def total_steps(self) -> int:
        return self.config.warmup_steps + self.config.followup_steps

    @property
    def phase(self) -> str:
        if self.steps_done < self.config.warmup_steps:
            return "warmup"
        return "followup"

    def _sync_shadow(self) -> None:
        self.shadow = self.active.clone()
        self._synced = True
        self._shadow_version += 1

    def _ema_update(self) -> None:
        a = self.config.ema_alpha
        for k, v in self.shadow.log_grids.items():
            v *= a
            v += (1.0 - a) * self.active.log_grids[k]
        for k, v in self.shadow.twists.items():
            v *= a
            v += (1.0 - a) * self.active.twists[k]
        self._shadow_version += 1

    def step(self) -> StepRecord:
        """Run one optimization step of whichever phase is due."""
        cfg = self.config
        if self.steps_done >= self.total_steps:
            raise RuntimeError("training is already complete")
        phase = self.phase
        if phase == "followup" and not self._synced:
            # Phase boundary: duplicate the parameters into the shadow
            # copy and start the new phase with fresh optimizer state.
            self._sync_shadow()
            self.velocity = self._zero_like_params()
        lr = self.current_lr()
        grads = self._zero_like_params()
        pht_total = 0.0
        pcp_total = 0.0
        if phase == "warmup" or not cfg.use_cycle:
            # "forward" compares at the source grid (reconstruct s from t
            # for the pair (t, s)); "backward" compares at the target
            # grid.  With both orderings of every pair in play the two
            # settings accumulate the same per-step gradient.
            if cfg.warmup_direction == "forward":
                ordered = [(s, t) for (t, s) in self.pairs]
            else:
                ordered = list(self.pairs)
            for dst, src in ordered:
                pht_total += self._forward_terms(dst, src, grads)
        else:
            for t, s in self.pairs:
                p, q = self._cycle_terms(t, s, grads)
                pht_total += p
                pcp_total += q
        self._apply(grads, lr)
        self.steps_done += 1
        if phase == "followup" and cfg.use_ema and cfg.use_cycle:
            k = self.steps_done - cfg.warmup_steps
            if k % cfg.ema_every == 0:
                self._ema_update()
        n = len(self.pairs)
        pht_total /= n
        pcp_total /= n
        total = pht_total + cfg.perception_weight * pcp_total
        if not np.isfinite(total):
            raise FloatingPointError("loss diverged")
        rec = StepRecord(step=self.steps_done, phase=phase, loss=total,
                         loss_photometric=pht_total, loss_feature=pcp_total)
        self.history.append(rec)
        return rec

    def run(self, steps: int | None = None,
            callback=None) -> list[StepRecord]:
        """Run `steps` more steps (default: to completion)."""
        if steps is None:
            steps = self.total_steps - self.steps_done
        out = []
        for _ in range(steps):
            rec = self.step()
            if callback is not None:
                callback(rec)
            out.append(rec)
        return out

    # -- checkpointing -------------------------------------------------------

    def state_arrays(self) -> tuple[dict[str, np.ndarray], dict]:
        """Flatten all parameter sets to named arrays plus a meta block."""
        arrays: dict[str, np.ndarray] = {}
        sets = (("active", self.active), ("shadow", self.shadow),
                ("velocity", self.velocity))
        for label, state in sets:
            for k, v in state.log_grids.items():
                arrays[f"{label}/grid/{k}"] = v
            for (a, b), v in state.twists.items():
                arrays[f"{label}/twist/{a}:{b}"] = v
        meta = {
            "steps_done": self.steps_done,
            "synced": self._synced,
            "n_frames": len(self.images),
            "height": self.height,
            "width": self.width,
        }
        return arrays, meta

    def restore_state(self, arrays: dict[str, np.ndarray],
                      meta: dict) -> None:
        """Load parameters written by `state_arrays` into this trainer."""
        if meta.get("n_frames") != len(self.images) \
                or meta.get("height") != self.height \
                or meta.get("width") != self.width:
            raise ConfigError("checkpoint does not match this sequence")
        sets = {"active": self.active, "shadow": self.shadow,
                "velocity": self.velocity}
        for name, value in arrays.items():
            label, kind, key = name.split("/")
            state = sets[label]
            if kind == "grid":
                tgt = state.log_grids[int(key)]
            else:
                a, b = key.split(":")
                tgt = state.twists[(int(a), int(b))]
            if tgt.shape != value.shape:
                raise ConfigError(f"checkpoint array {name} has shape "
                                  f"{value.shape}, expected {tgt.shape}")
            tgt[...] = value
        self.steps_done = int(meta["steps_done"])
        self._synced = bool(meta["synced"])
        self._shadow_version += 1

    def branch(self, **config_overrides) -> "Trainer":
        """Deep copy of the trainer, optionally with config changes.

        The copy shares nothing mutable with the original; branching at
        the warm-up boundary gives several follow-up arms one identical
        warm-up history.
        """
        clone = copy.copy(self)
        clone.config = replace(self.config, **config_overrides)
        clone.config.validate()
        clone.active = self.active.clone()
        clone.shadow = self.shadow.clone()
        clone.velocity = self.velocity.clone()
        clone.history = list(self.history)
        clone.images = list(self.images)
        clone.features = list(self.features)
        clone.pairs = list(self.pairs)
        clone._fwd_cache = {}
        return clone
