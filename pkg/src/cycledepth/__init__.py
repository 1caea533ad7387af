"""Brightness-robust self-supervised depth and pose recovery.

The package optimizes per-frame depth grids and frame-pair twists
against photometric objectives on synthetic two-view scenes.  The key
objective is a cycle-consistent reconstruction: the target image is
warped into the source view and back, so the quantity compared against
the target keeps the target's own brightness and the optimization is
insensitive to exposure or illumination changes in the source frame.
"""

from .core import (DepthMap, Image, Intrinsics, PoseSE3, hat, se3_apply,
                   se3_compose, se3_exp, se3_inverse, so3_exp, so3_log, vee)
from .evaluate import DepthMetrics, Trajectory, ate, depth_metrics, \
    error_map, median_scale
from .freq import FrequencyDecomposition, fft2, ifft2, structure_transplant
from .loss import (ALPHA, EmptyMaskError, LossValue, feature_extract,
                   perception_loss, photometric_loss, ssim)
from .optim import ConfigError, ParamState, TrainConfig, Trainer
from .synth import (DegenerateSceneError, SceneSequence, SceneSpec,
                    apply_variant, generate_scene, perturb_global,
                    perturb_local)
from .warp import (CycleWarpResult, WarpField, bilinear_sample,
                   compute_correspondence, cycle_warp, warp_gradients,
                   warp_image)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "Image", "DepthMap", "Intrinsics", "PoseSE3",
    "hat", "vee", "so3_exp", "so3_log",
    "se3_exp", "se3_compose", "se3_inverse", "se3_apply",
    "WarpField", "CycleWarpResult", "compute_correspondence",
    "bilinear_sample", "warp_image", "cycle_warp", "warp_gradients",
    "FrequencyDecomposition", "fft2", "ifft2", "structure_transplant",
    "ALPHA", "LossValue", "EmptyMaskError", "ssim", "photometric_loss",
    "feature_extract", "perception_loss",
    "SceneSpec", "SceneSequence", "DegenerateSceneError", "generate_scene",
    "perturb_global", "perturb_local", "apply_variant",
    "TrainConfig", "ParamState", "Trainer", "ConfigError",
    "DepthMetrics", "Trajectory", "median_scale", "depth_metrics", "ate",
    "error_map",
]
