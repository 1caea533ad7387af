"""Differentiable cross-view warping and the cycle warp.

Orientation convention: `warp_image(src, dst_depth, pose)` reconstructs
the destination view out of source pixels.  For every destination pixel
p, the destination depth and the destination-to-source pose send p to a
subpixel location in the source image, which is sampled bilinearly.  The
output therefore lives on the destination grid and inherits none of the
source's pixel layout.

The cycle warp chains two reconstructions, target -> source -> target,
so the final image is geometrically resampled twice but keeps the target
frame's intensities; source intensities never enter unless structure
transplanting mixes them in deliberately.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import (DepthMap, Image, Intrinsics, PoseSE3, se3_inverse,
                   so3_exp_jacobian, so3_log)
from .freq import structure_transplant

__all__ = [
    "DEFAULT_ZNEAR",
    "WarpField",
    "CycleWarpResult",
    "compute_correspondence",
    "bilinear_sample",
    "gather_nearest",
    "warp_image",
    "cycle_warp",
    "warp_gradients",
]

# Points closer than this to the source camera plane are treated as
# behind it; avoids division blow-ups at grazing geometry.
DEFAULT_ZNEAR = 1e-6


@dataclass(frozen=True)
class WarpField:
    """Per-pixel correspondence: coords (H, W, 2) as (u, v), valid (H, W).

    Coordinates are finite and inside the source image wherever valid;
    invalid entries are zeroed and must not be dereferenced.
    """

    coords: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        v = np.asarray(self.valid, dtype=bool)
        if c.ndim != 3 or c.shape[2] != 2 or v.shape != c.shape[:2]:
            raise ValueError(
                f"bad field shapes coords={c.shape} valid={v.shape}")
        if c[v].size and not np.all(np.isfinite(c[v])):
            raise ValueError("valid coordinates must be finite")
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "valid", v)

    @property
    def height(self) -> int:
        return self.coords.shape[0]

    @property
    def width(self) -> int:
        return self.coords.shape[1]


@dataclass(frozen=True)
class CycleWarpResult:
    """Everything the cycle produces, on the grids where it lives.

    warped      target-grid image after the full cycle
    forward     source-grid reconstruction built from target pixels
    mid         image actually warped back (equals `forward` unless
                structure transplanting replaced it)
    forward_field   correspondence used by the forward step (source grid)
    backward_field  correspondence used by the backward step (target grid)
    valid       target-grid mask: backward-valid pixels whose backward
                landing point was itself forward-valid
    """

    warped: Image
    forward: Image
    mid: Image
    forward_field: WarpField
    backward_field: WarpField
    valid: np.ndarray


def compute_correspondence(depth: DepthMap, intrinsics: Intrinsics,
                           pose: PoseSE3,
                           znear: float = DEFAULT_ZNEAR) -> WarpField:
    """Map destination pixels into the source view.

    `depth` lives on the destination grid and `pose` carries destination
    camera points into source camera points.  An exactly-identity pose
    short-circuits to the pixel grid itself, so no roundoff is incurred.
    """
    if pose.is_identity:
        coords, valid = kernels.identity_correspondence(
            depth.height, depth.width, depth.valid)
    else:
        coords, valid = kernels.correspondence(
            depth.depth, depth.valid,
            intrinsics.fx, intrinsics.fy, intrinsics.cx, intrinsics.cy,
            pose.rotation, pose.translation, znear)
    return WarpField(coords=coords, valid=valid)


def bilinear_sample(image: Image, field: WarpField) -> Image:
    """Sample `image` at the field's coordinates; invalid pixels become 0."""
    if (field.height, field.width) != (image.height, image.width):
        # Destination and source rasters share dimensions in this package.
        raise ValueError("field and image dimensions differ")
    out = kernels.bilinear_sample(image.data, field.coords, field.valid)
    return Image(data=out)


def gather_nearest(mask: np.ndarray, field: WarpField) -> np.ndarray:
    """Pull a boolean source-grid mask through the field, nearest neighbor.

    Returns False wherever the field itself is invalid.
    """
    h, w = mask.shape
    u = np.clip(np.rint(field.coords[..., 0]).astype(np.int64), 0, w - 1)
    v = np.clip(np.rint(field.coords[..., 1]).astype(np.int64), 0, h - 1)
    return field.valid & mask[v, u]


def warp_image(source: Image, dst_depth: DepthMap, intrinsics: Intrinsics,
               pose_dst_to_src: PoseSE3,
               znear: float = DEFAULT_ZNEAR) -> tuple[Image, WarpField]:
    """Reconstruct the destination view from source pixels.

    Returns the reconstruction (destination grid) together with the
    correspondence field used to build it.
    """
    field = compute_correspondence(dst_depth, intrinsics, pose_dst_to_src,
                                   znear)
    return bilinear_sample(source, field), field


def cycle_warp(target: Image, source: Image, target_depth: DepthMap,
               source_depth: DepthMap, intrinsics: Intrinsics,
               pose_target_to_source: PoseSE3, use_stm: bool = False,
               znear: float = DEFAULT_ZNEAR) -> CycleWarpResult:
    """Warp target pixels to the source view and back again.

    Step one reconstructs the source view from target pixels; step two
    optionally swaps that reconstruction's spectral structure for the
    real source image's, then step three warps the result back onto the
    target grid.  The output is directly comparable with `target`: its
    intensities came from `target` (modulo resampling), so a brightness
    change applied to `source` alone cannot move it.
    """
    pose_s_to_t = se3_inverse(pose_target_to_source)
    forward, forward_field = warp_image(target, source_depth, intrinsics,
                                        pose_s_to_t, znear)
    mid = forward
    if use_stm:
        mid = structure_transplant(forward, source)
    warped, backward_field = warp_image(mid, target_depth, intrinsics,
                                        pose_target_to_source, znear)
    valid = gather_nearest(forward_field.valid, backward_field)
    return CycleWarpResult(warped=warped, forward=forward, mid=mid,
                           forward_field=forward_field,
                           backward_field=backward_field, valid=valid)


def warp_gradients(source: Image, dst_depth: DepthMap,
                   intrinsics: Intrinsics, pose_dst_to_src: PoseSE3,
                   g_warped: np.ndarray,
                   field: WarpField | None = None,
                   znear: float = DEFAULT_ZNEAR
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Backpropagate a warped-image gradient to depth and pose.

    `g_warped` holds dLoss/dWarped on the destination grid.  The pose
    gradient is expressed in the 6-vector twist whose exponential is the
    given pose (rotation vector from the matrix log, translation taken
    verbatim).  Returns (d_depth (H, W), d_twist (6,)); entries at
    invalid field pixels are zero.
    """
    omega = so3_log(pose_dst_to_src.rotation)
    return _warp_backward_twist(source, dst_depth, intrinsics, omega,
                                pose_dst_to_src.translation, g_warped,
                                field, znear)


def _warp_backward_twist(source: Image | np.ndarray, dst_depth: DepthMap,
                         intrinsics: Intrinsics, omega: np.ndarray,
                         trans: np.ndarray, g_warped: np.ndarray,
                         field: WarpField | None = None,
                         znear: float = DEFAULT_ZNEAR
                         ) -> tuple[np.ndarray, np.ndarray]:
    """Twist-parameterized backward pass; shares work when `field` is given."""
    src = source.data if isinstance(source, Image) else \
        np.ascontiguousarray(source, dtype=np.float64)
    rot, drot = so3_exp_jacobian(omega)
    if field is None:
        coords, valid = kernels.correspondence(
            dst_depth.depth, dst_depth.valid,
            intrinsics.fx, intrinsics.fy, intrinsics.cx, intrinsics.cy,
            rot, trans, znear)
    else:
        coords, valid = field.coords, field.valid
    g = np.ascontiguousarray(g_warped, dtype=np.float64)
    if g.shape != src.shape:
        raise ValueError(
            f"gradient shape {g.shape} does not match image {src.shape}")
    d_depth, d_twist = kernels.warp_backward(
        src, coords, valid, g, dst_depth.depth, rot, drot,
        np.ascontiguousarray(trans), intrinsics.fx, intrinsics.fy,
        intrinsics.cx, intrinsics.cy)
    return d_depth, d_twist
