"""Pure numpy implementations of the per-pixel hot kernels.

This module is the reference backend: every function here has a numba
twin in `_numba_impl` with an identical signature and matching arithmetic
order, so the two backends agree to floating-point reduction tolerance.
All functions take and return plain float64/bool arrays; wrapping into
the dataclass types happens one level up.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "correspondence",
    "identity_correspondence",
    "bilinear_sample",
    "warp_backward",
    "box_sum3",
    "photometric_grad",
    "l1_grad",
    "grid_up",
    "grid_up_adjoint",
]


def identity_correspondence(h: int, w: int, valid_in: np.ndarray):
    """Exact pixel-grid coordinates for the identity pose."""
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    coords = np.stack([uu, vv], axis=-1)
    valid = valid_in.copy()
    coords[~valid] = 0.0
    return coords, valid


def correspondence(depth, valid_in, fx, fy, cx, cy, rot, t, znear):
    """Project target pixels into the source view.

    For each target pixel p with depth D(p), computes the source-image
    coordinates of K (R D(p) K^-1 p + t).  Returns (coords, valid) where
    coords has shape (H, W, 2) holding (u, v) and valid marks pixels with
    valid input depth, depth in front of the source camera, and in-bounds
    projection.  Coordinates of invalid pixels are zeroed.
    """
    h, w = depth.shape
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    dx = (uu - cx) / fx
    dy = (vv - cy) / fy
    x = depth * dx
    y = depth * dy
    z = depth
    xp = rot[0, 0] * x + rot[0, 1] * y + rot[0, 2] * z + t[0]
    yp = rot[1, 0] * x + rot[1, 1] * y + rot[1, 2] * z + t[1]
    zp = rot[2, 0] * x + rot[2, 1] * y + rot[2, 2] * z + t[2]
    valid = valid_in & (zp > znear)
    with np.errstate(divide="ignore", invalid="ignore"):
        us = fx * (xp / zp) + cx
        vs = fy * (yp / zp) + cy
    valid = valid & (us >= 0.0) & (us <= w - 1.0) & (vs >= 0.0) & (vs <= h - 1.0)
    coords = np.empty((h, w, 2), dtype=np.float64)
    coords[..., 0] = np.where(valid, us, 0.0)
    coords[..., 1] = np.where(valid, vs, 0.0)
    return coords, valid


def bilinear_sample(img, coords, valid):
    """Sample `img` at `coords` with bilinear weights; zeros where invalid.

    Neighbor indices are clamped to the image, which only matters on the
    far edge where the fractional weight is exactly zero, so sampling at
    integer coordinates reproduces pixel values bit-for-bit.
    """
    h, w, _ = img.shape
    u = coords[..., 0]
    v = coords[..., 1]
    u0 = np.clip(np.floor(u).astype(np.int64), 0, w - 1)
    v0 = np.clip(np.floor(v).astype(np.int64), 0, h - 1)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = u - u0
    fv = v - v0
    top = (1.0 - fu)[..., None] * img[v0, u0] + fu[..., None] * img[v0, u1]
    bot = (1.0 - fu)[..., None] * img[v1, u0] + fu[..., None] * img[v1, u1]
    out = (1.0 - fv)[..., None] * top + fv[..., None] * bot
    out[~valid] = 0.0
    return out


def warp_backward(img, coords, valid, g_out, depth, rot, drot, t,
                  fx, fy, cx, cy):
    """Backpropagate a warped-image gradient to depth and twist.

    `img` is the sampled source image, `coords`/`valid` the correspondence
    field produced from (depth, rot, t), `g_out` the loss gradient w.r.t.
    the warped image, and `drot` the (3, 3, 3) partials of `rot` w.r.t.
    the rotation-vector components.  Returns (d_depth, d_twist) with
    d_twist ordered (wx, wy, wz, tx, ty, tz).  Gradients at invalid
    pixels are zero; the far-edge clamp contributes zero slope.
    """
    h, w, _ = img.shape
    u = coords[..., 0]
    v = coords[..., 1]
    u0 = np.clip(np.floor(u).astype(np.int64), 0, w - 1)
    v0 = np.clip(np.floor(v).astype(np.int64), 0, h - 1)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = u - u0
    fv = v - v0
    i00 = img[v0, u0]
    i01 = img[v0, u1]
    i10 = img[v1, u0]
    i11 = img[v1, u1]
    dwdu = (1.0 - fv)[..., None] * (i01 - i00) + fv[..., None] * (i11 - i10)
    dwdv = (1.0 - fu)[..., None] * (i10 - i00) + fu[..., None] * (i11 - i01)
    g_u = np.where(valid, np.sum(g_out * dwdu, axis=-1), 0.0)
    g_v = np.where(valid, np.sum(g_out * dwdv, axis=-1), 0.0)

    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    dx = (uu - cx) / fx
    dy = (vv - cy) / fy
    x = depth * dx
    y = depth * dy
    z = depth
    xp = rot[0, 0] * x + rot[0, 1] * y + rot[0, 2] * z + t[0]
    yp = rot[1, 0] * x + rot[1, 1] * y + rot[1, 2] * z + t[1]
    zp = rot[2, 0] * x + rot[2, 1] * y + rot[2, 2] * z + t[2]
    zp_safe = np.where(valid, zp, 1.0)
    inv_z = 1.0 / zp_safe
    # Rows of d(u, v)/d(camera point): u = fx xp/zp + cx, v = fy yp/zp + cy.
    au = fx * inv_z
    cu = -fx * xp * inv_z * inv_z
    bv = fy * inv_z
    cv = -fy * yp * inv_z * inv_z
    # d(camera point)/d(depth) = R @ K^-1 p.
    rdx = rot[0, 0] * dx + rot[0, 1] * dy + rot[0, 2]
    rdy = rot[1, 0] * dx + rot[1, 1] * dy + rot[1, 2]
    rdz = rot[2, 0] * dx + rot[2, 1] * dy + rot[2, 2]
    d_depth = g_u * (au * rdx + cu * rdz) + g_v * (bv * rdy + cv * rdz)
    d_depth = np.where(valid, d_depth, 0.0)

    d_twist = np.zeros(6, dtype=np.float64)
    for i in range(3):
        dri = drot[i]
        px = dri[0, 0] * x + dri[0, 1] * y + dri[0, 2] * z
        py = dri[1, 0] * x + dri[1, 1] * y + dri[1, 2] * z
        pz = dri[2, 0] * x + dri[2, 1] * y + dri[2, 2] * z
        contrib = g_u * (au * px + cu * pz) + g_v * (bv * py + cv * pz)
        d_twist[i] = np.sum(np.where(valid, contrib, 0.0))
    d_twist[3] = np.sum(g_u * au)
    d_twist[4] = np.sum(g_v * bv)
    d_twist[5] = np.sum(g_u * cu + g_v * cv)
    return d_depth, d_twist


def box_sum3(x):
    """Sum over the 3x3 neighborhood clipped at the image border."""
    h, w = x.shape
    rows = np.empty_like(x)
    if h == 1:
        rows[0] = x[0].copy()
    else:
        rows[0] = x[0] + x[1]
        rows[1:h - 1] = (x[0:h - 2] + x[1:h - 1]) + x[2:h]
        rows[h - 1] = x[h - 2] + x[h - 1]
    out = np.empty_like(x)
    if w == 1:
        out[:, 0] = rows[:, 0].copy()
    else:
        out[:, 0] = rows[:, 0] + rows[:, 1]
        out[:, 1:w - 1] = (rows[:, 0:w - 2] + rows[:, 1:w - 1]) + rows[:, 2:w]
        out[:, w - 1] = rows[:, w - 2] + rows[:, w - 1]
    return out


def photometric_grad(a, b, m, count, alpha, c1, c2):
    """Structural-plus-absolute loss terms and gradient w.r.t. `b`.

    `a`, `b` are (H, W, C); `m` is the float-valued mask (H, W) and
    `count` its number of nonzeros.  Window moments use 3x3 box sums over
    valid samples only (per-window counts), so masked-out pixels never
    pollute neighboring windows, and the backward pass is the exact
    adjoint of the same masked windows.

    Returns (loss_sum, per_pixel, grad): the per-pixel map is
    alpha * mean_c (1 - SSIM_c)/2 + (1 - alpha) * mean_c |a - b|, zeroed
    off-mask, and loss_sum is its sum over the mask.
    """
    h, w, channels = a.shape
    n = box_sum3(m)
    inv_n = (1.0 / np.maximum(n, 1.0))[..., None]
    mm = m[..., None]
    mu_a = _box_channels(mm * a) * inv_n
    mu_b = _box_channels(mm * b) * inv_n
    e_aa = _box_channels(mm * (a * a)) * inv_n
    e_bb = _box_channels(mm * (b * b)) * inv_n
    e_ab = _box_channels(mm * (a * b)) * inv_n
    var_a = e_aa - mu_a * mu_a
    var_b = e_bb - mu_b * mu_b
    cov = e_ab - mu_a * mu_b
    n1 = 2.0 * mu_a * mu_b + c1
    n2 = 2.0 * cov + c2
    d1 = mu_a * mu_a + mu_b * mu_b + c1
    d2 = var_a + var_b + c2
    s = (n1 * n2) / (d1 * d2)

    mask = m > 0.0
    diff = a - b
    per_pixel = (alpha * 0.5) * (1.0 - s).sum(axis=2) \
        + (1.0 - alpha) * np.abs(diff).sum(axis=2)
    per_pixel = np.where(mask, per_pixel / channels, 0.0)
    loss_sum = float(per_pixel[mask].sum())

    w_pix = (m / (count * channels))[..., None]
    g_s = (-0.5 * alpha) * w_pix
    inv_dd = 1.0 / (d1 * d2)
    ds_dmu_b = (2.0 * mu_a) * (n2 - n1) * inv_dd \
        - s * (2.0 * mu_b) * (1.0 / d1 - 1.0 / d2)
    ds_de_ab = 2.0 * n1 * inv_dd
    ds_de_bb = -s / d2
    # Adjoint of the masked window means: spread back through the same
    # 3x3 windows with the per-window 1/n weight, then gate by the mask.
    t_mu = _box_channels(g_s * ds_dmu_b * inv_n)
    t_ab = _box_channels(g_s * ds_de_ab * inv_n)
    t_bb = _box_channels(g_s * ds_de_bb * inv_n)
    grad = mm * (t_mu + a * t_ab + 2.0 * b * t_bb) \
        - (1.0 - alpha) * np.sign(diff) * w_pix
    return loss_sum, per_pixel, grad


def _box_channels(x):
    out = np.empty_like(x)
    for c in range(x.shape[2]):
        out[..., c] = box_sum3(np.ascontiguousarray(x[..., c]))
    return out


def l1_grad(a, b, m, count):
    """Masked mean absolute difference and its gradient w.r.t. `b`.

    Same conventions as `photometric_grad`; returns
    (loss_sum, per_pixel, grad).
    """
    channels = a.shape[2]
    mask = m > 0.0
    diff = a - b
    per_pixel = np.where(mask, np.abs(diff).sum(axis=2) / channels, 0.0)
    loss_sum = float(per_pixel[mask].sum())
    grad = -np.sign(diff) * (m[..., None] / (count * channels))
    return loss_sum, per_pixel, grad


def grid_up(grid, h, w, cell):
    """Bilinearly upsample grid node values to an (h, w) raster.

    Node (i, j) sits at pixel (u, v) = (i * cell, j * cell); the grid must
    be large enough that every pixel lies inside the node lattice.
    """
    gh, gw = grid.shape
    if (gw - 1) * cell < w - 1 or (gh - 1) * cell < h - 1:
        raise ValueError("grid does not cover the raster")
    u = np.arange(w, dtype=np.float64) / cell
    v = np.arange(h, dtype=np.float64) / cell
    i0 = np.minimum(u.astype(np.int64), gw - 1)
    j0 = np.minimum(v.astype(np.int64), gh - 1)
    i1 = np.minimum(i0 + 1, gw - 1)
    j1 = np.minimum(j0 + 1, gh - 1)
    fu = u - i0
    fv = v - j0
    top = (1.0 - fu)[None, :] * grid[j0][:, i0] + fu[None, :] * grid[j0][:, i1]
    bot = (1.0 - fu)[None, :] * grid[j1][:, i0] + fu[None, :] * grid[j1][:, i1]
    return (1.0 - fv)[:, None] * top + fv[:, None] * bot


def grid_up_adjoint(g, gh, gw, cell):
    """Adjoint of `grid_up`: scatter raster gradients onto grid nodes."""
    h, w = g.shape
    u = np.arange(w, dtype=np.float64) / cell
    v = np.arange(h, dtype=np.float64) / cell
    i0 = np.minimum(u.astype(np.int64), gw - 1)
    j0 = np.minimum(v.astype(np.int64), gh - 1)
    i1 = np.minimum(i0 + 1, gw - 1)
    j1 = np.minimum(j0 + 1, gh - 1)
    fu = u - i0
    fv = v - j0
    out = np.zeros((gh, gw), dtype=np.float64)
    wu0 = (1.0 - fu)[None, :]
    wu1 = fu[None, :]
    wv0 = (1.0 - fv)[:, None]
    wv1 = fv[:, None]
    jj0 = np.broadcast_to(j0[:, None], (h, w))
    jj1 = np.broadcast_to(j1[:, None], (h, w))
    ii0 = np.broadcast_to(i0[None, :], (h, w))
    ii1 = np.broadcast_to(i1[None, :], (h, w))
    np.add.at(out, (jj0, ii0), g * (wv0 * wu0))
    np.add.at(out, (jj0, ii1), g * (wv0 * wu1))
    np.add.at(out, (jj1, ii0), g * (wv1 * wu0))
    np.add.at(out, (jj1, ii1), g * (wv1 * wu1))
    return out
