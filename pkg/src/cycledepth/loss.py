"""Photometric and perceptual losses with hand-derived gradients.

The structural term uses 3x3 box-window statistics.  Window moments are
computed over valid samples only (mask-aware counts), so zeros filled
into invalid pixels by warping never pollute neighboring windows, and
the backward pass is the exact adjoint of the same masked windows.

Public entry points take the package's Image type; the `_raw` variants
work on bare arrays and are what the optimizer's hot loop calls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import Image

__all__ = [
    "ALPHA",
    "SSIM_C1",
    "SSIM_C2",
    "EmptyMaskError",
    "LossValue",
    "ssim",
    "photometric_loss",
    "photometric_loss_grad",
    "feature_extract",
    "perception_loss",
    "perception_loss_grad",
]

# Structural/absolute mixing weight and SSIM stabilizers.
ALPHA = 0.85
SSIM_C1 = 1e-4
SSIM_C2 = 9e-4


class EmptyMaskError(ValueError):
    """Raised when a loss is asked for over zero valid pixels."""


@dataclass(frozen=True)
class LossValue:
    """A scalar loss with its per-pixel map and the mask it was taken over.

    `scalar` equals the mean of `per_pixel` over `valid` (count entries).
    """

    scalar: float
    per_pixel: np.ndarray
    valid: np.ndarray
    count: int


def _check_pair(a: Image, b: Image, mask: np.ndarray | None) -> np.ndarray:
    if a.data.shape != b.data.shape:
        raise ValueError(f"image shapes differ: {a.data.shape} vs {b.data.shape}")
    if mask is None:
        mask = np.ones((a.height, a.width), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (a.height, a.width):
        raise ValueError(f"mask shape {mask.shape} does not match image")
    return mask


def _box_stack(x: np.ndarray) -> np.ndarray:
    """3x3 clipped box sum applied per channel of an (H, W, C) stack."""
    out = np.empty_like(x)
    for c in range(x.shape[2]):
        out[..., c] = kernels.box_sum3(np.ascontiguousarray(x[..., c]))
    return out


def _ssim_stack(a: np.ndarray, b: np.ndarray, m: np.ndarray):
    """Per-pixel SSIM for all channels plus the terms its backward needs.

    `a`, `b` are (H, W, C); `m` is the float mask (H, W).
    """
    n = kernels.box_sum3(m)
    n_safe = np.maximum(n, 1.0)[..., None]
    mm = m[..., None]
    inv_n = 1.0 / n_safe
    mu_a = _box_stack(mm * a) * inv_n
    mu_b = _box_stack(mm * b) * inv_n
    e_aa = _box_stack(mm * (a * a)) * inv_n
    e_bb = _box_stack(mm * (b * b)) * inv_n
    e_ab = _box_stack(mm * (a * b)) * inv_n
    var_a = e_aa - mu_a * mu_a
    var_b = e_bb - mu_b * mu_b
    cov = e_ab - mu_a * mu_b
    n1 = 2.0 * mu_a * mu_b + SSIM_C1
    n2 = 2.0 * cov + SSIM_C2
    d1 = mu_a * mu_a + mu_b * mu_b + SSIM_C1
    d2 = var_a + var_b + SSIM_C2
    s = (n1 * n2) / (d1 * d2)
    return s, (inv_n, mu_a, mu_b, n1, n2, d1, d2)


def ssim(a: Image, b: Image, mask: np.ndarray | None = None) -> np.ndarray:
    """Per-channel SSIM map of shape (H, W, C), 3x3 masked box windows."""
    m = _check_pair(a, b, mask).astype(np.float64)
    return _ssim_stack(a.data, b.data, m)[0]


def photometric_loss(ref: Image, warped: Image,
                     mask: np.ndarray | None = None) -> LossValue:
    """Structural-plus-absolute difference between `ref` and `warped`.

    per_pixel = ALPHA * mean_c (1 - SSIM_c)/2 + (1 - ALPHA) * mean_c |diff_c|,
    averaged over `mask`.
    """
    m = _check_pair(ref, warped, mask)
    value, _ = _photometric_raw(ref.data, warped.data, m, want_grad=False)
    return value


def photometric_loss_grad(ref: Image, warped: Image,
                          mask: np.ndarray | None = None
                          ) -> tuple[LossValue, np.ndarray]:
    """Loss plus its gradient with respect to `warped`, shape (H, W, C)."""
    m = _check_pair(ref, warped, mask)
    return _photometric_raw(ref.data, warped.data, m, want_grad=True)


def _photometric_raw(a: np.ndarray, b: np.ndarray, mask: np.ndarray,
                     want_grad: bool):
    m = mask.astype(np.float64)
    count = int(mask.sum())
    if count == 0:
        raise EmptyMaskError("no valid pixels to average the loss over")
    loss_sum, per_pixel, grad = kernels.photometric_grad(
        a, b, m, count, ALPHA, SSIM_C1, SSIM_C2)
    value = LossValue(scalar=loss_sum / count, per_pixel=per_pixel,
                      valid=mask.copy(), count=count)
    return value, (grad if want_grad else None)


def feature_extract(image: Image) -> np.ndarray:
    """Fixed feature stack of shape (H, W, 4): no learned filters.

    Channels: grayscale, x gradient, y gradient, and the gradient
    magnitude of a 2x2 block-averaged grayscale upsampled back with
    nearest neighbor.  Gradients are central differences inside, one
    sided at the borders.
    """
    gray = image.data.mean(axis=2)
    gx, gy = _image_gradients(gray)
    pooled = _block_pool2(gray)
    pgx, pgy = _image_gradients(pooled)
    pmag = np.sqrt(pgx * pgx + pgy * pgy)
    coarse = _nearest_up2(pmag, gray.shape[0], gray.shape[1])
    return np.stack([gray, gx, gy, coarse], axis=-1)


def _image_gradients(f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h, w = f.shape
    gx = np.zeros_like(f)
    gy = np.zeros_like(f)
    if w > 1:
        gx[:, 1:w - 1] = (f[:, 2:] - f[:, :w - 2]) * 0.5
        gx[:, 0] = f[:, 1] - f[:, 0]
        gx[:, w - 1] = f[:, w - 1] - f[:, w - 2]
    if h > 1:
        gy[1:h - 1, :] = (f[2:, :] - f[:h - 2, :]) * 0.5
        gy[0, :] = f[1, :] - f[0, :]
        gy[h - 1, :] = f[h - 1, :] - f[h - 2, :]
    return gx, gy


def _block_pool2(f: np.ndarray) -> np.ndarray:
    h, w = f.shape
    if h < 2 or w < 2:
        return f.copy()
    ph, pw = h // 2, w // 2
    g = f[:ph * 2, :pw * 2]
    return 0.25 * (g[0::2, 0::2] + g[0::2, 1::2]
                   + g[1::2, 0::2] + g[1::2, 1::2])


def _nearest_up2(f: np.ndarray, h: int, w: int) -> np.ndarray:
    ph, pw = f.shape
    j = np.minimum(np.arange(h) // 2, ph - 1)
    i = np.minimum(np.arange(w) // 2, pw - 1)
    return f[np.ix_(j, i)]


def perception_loss(ref_features: np.ndarray, warped_features: np.ndarray,
                    mask: np.ndarray) -> LossValue:
    """Mean absolute feature difference over `mask`."""
    value, _ = _perception_raw(ref_features, warped_features, mask,
                               want_grad=False)
    return value


def perception_loss_grad(ref_features: np.ndarray,
                         warped_features: np.ndarray, mask: np.ndarray
                         ) -> tuple[LossValue, np.ndarray]:
    """Loss plus gradient with respect to `warped_features`."""
    return _perception_raw(ref_features, warped_features, mask,
                           want_grad=True)


def _perception_raw(ref_features: np.ndarray, warped: np.ndarray,
                    mask: np.ndarray, want_grad: bool):
    ref_features = np.asarray(ref_features, dtype=np.float64)
    warped = np.asarray(warped, dtype=np.float64)
    if ref_features.shape != warped.shape or ref_features.ndim != 3:
        raise ValueError("feature stacks must share an (H, W, C) shape")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != ref_features.shape[:2]:
        raise ValueError("mask shape does not match features")
    count = int(mask.sum())
    if count == 0:
        raise EmptyMaskError("no valid pixels to average the loss over")
    loss_sum, per_pixel, grad = kernels.l1_grad(
        ref_features, warped, mask.astype(np.float64), count)
    value = LossValue(scalar=loss_sum / count, per_pixel=per_pixel,
                      valid=mask.copy(), count=count)
    return value, (grad if want_grad else None)
