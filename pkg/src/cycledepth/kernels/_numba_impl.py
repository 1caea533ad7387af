"""Numba-compiled twins of the numpy kernels.

Loops are serial (no prange) so accumulation order is fixed and results
are reproducible run to run.  fastmath stays off for the same reason.
Arithmetic mirrors `_numpy_impl` expression by expression; the backends
agree bitwise on per-pixel outputs and to reduction tolerance on sums.
"""

from __future__ import annotations

import numpy as np
from numba import njit

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

_JIT = dict(cache=True, fastmath=False, nogil=True)


def identity_correspondence(h: int, w: int, valid_in: np.ndarray):
    """Exact pixel-grid coordinates for the identity pose."""
    return _identity_correspondence(h, w, valid_in)


@njit(**_JIT)
def _identity_correspondence(h, w, valid_in):
    coords = np.zeros((h, w, 2), dtype=np.float64)
    valid = np.empty((h, w), dtype=np.bool_)
    for j in range(h):
        for i in range(w):
            valid[j, i] = valid_in[j, i]
            if valid_in[j, i]:
                coords[j, i, 0] = float(i)
                coords[j, i, 1] = float(j)
    return coords, valid


def correspondence(depth, valid_in, fx, fy, cx, cy, rot, t, znear):
    """See `_numpy_impl.correspondence`."""
    return _correspondence(depth, valid_in, fx, fy, cx, cy,
                           np.ascontiguousarray(rot), np.ascontiguousarray(t),
                           znear)


@njit(**_JIT)
def _correspondence(depth, valid_in, fx, fy, cx, cy, rot, t, znear):
    h, w = depth.shape
    coords = np.zeros((h, w, 2), dtype=np.float64)
    valid = np.zeros((h, w), dtype=np.bool_)
    for j in range(h):
        for i in range(w):
            if not valid_in[j, i]:
                continue
            d = depth[j, i]
            dx = (i - cx) / fx
            dy = (j - cy) / fy
            x = d * dx
            y = d * dy
            z = d
            xp = rot[0, 0] * x + rot[0, 1] * y + rot[0, 2] * z + t[0]
            yp = rot[1, 0] * x + rot[1, 1] * y + rot[1, 2] * z + t[1]
            zp = rot[2, 0] * x + rot[2, 1] * y + rot[2, 2] * z + t[2]
            if zp <= znear:
                continue
            us = fx * (xp / zp) + cx
            vs = fy * (yp / zp) + cy
            if us >= 0.0 and us <= w - 1.0 and vs >= 0.0 and vs <= h - 1.0:
                coords[j, i, 0] = us
                coords[j, i, 1] = vs
                valid[j, i] = True
    return coords, valid


def bilinear_sample(img, coords, valid):
    """See `_numpy_impl.bilinear_sample`."""
    return _bilinear_sample(np.ascontiguousarray(img), coords, valid)


@njit(**_JIT)
def _bilinear_sample(img, coords, valid):
    h, w, c = img.shape
    out = np.zeros((h, w, c), dtype=np.float64)
    for j in range(h):
        for i in range(w):
            if not valid[j, i]:
                continue
            u = coords[j, i, 0]
            v = coords[j, i, 1]
            u0 = int(np.floor(u))
            v0 = int(np.floor(v))
            if u0 < 0:
                u0 = 0
            elif u0 > w - 1:
                u0 = w - 1
            if v0 < 0:
                v0 = 0
            elif v0 > h - 1:
                v0 = h - 1
            u1 = min(u0 + 1, w - 1)
            v1 = min(v0 + 1, h - 1)
            fu = u - u0
            fv = v - v0
            for k in range(c):
                top = (1.0 - fu) * img[v0, u0, k] + fu * img[v0, u1, k]
                bot = (1.0 - fu) * img[v1, u0, k] + fu * img[v1, u1, k]
                out[j, i, k] = (1.0 - fv) * top + fv * bot
    return out


def warp_backward(img, coords, valid, g_out, depth, rot, drot, t,
                  fx, fy, cx, cy):
    """See `_numpy_impl.warp_backward`."""
    return _warp_backward(np.ascontiguousarray(img), coords, valid,
                          np.ascontiguousarray(g_out), depth,
                          np.ascontiguousarray(rot),
                          np.ascontiguousarray(drot),
                          np.ascontiguousarray(t), fx, fy, cx, cy)


@njit(**_JIT)
def _warp_backward(img, coords, valid, g_out, depth, rot, drot, t,
                   fx, fy, cx, cy):
    h, w, c = img.shape
    d_depth = np.zeros((h, w), dtype=np.float64)
    d_twist = np.zeros(6, dtype=np.float64)
    for j in range(h):
        for i in range(w):
            if not valid[j, i]:
                continue
            u = coords[j, i, 0]
            v = coords[j, i, 1]
            u0 = int(np.floor(u))
            v0 = int(np.floor(v))
            if u0 < 0:
                u0 = 0
            elif u0 > w - 1:
                u0 = w - 1
            if v0 < 0:
                v0 = 0
            elif v0 > h - 1:
                v0 = h - 1
            u1 = min(u0 + 1, w - 1)
            v1 = min(v0 + 1, h - 1)
            fu = u - u0
            fv = v - v0
            g_u = 0.0
            g_v = 0.0
            for k in range(c):
                i00 = img[v0, u0, k]
                i01 = img[v0, u1, k]
                i10 = img[v1, u0, k]
                i11 = img[v1, u1, k]
                dwdu = (1.0 - fv) * (i01 - i00) + fv * (i11 - i10)
                dwdv = (1.0 - fu) * (i10 - i00) + fu * (i11 - i01)
                g_u += g_out[j, i, k] * dwdu
                g_v += g_out[j, i, k] * dwdv
            d = depth[j, i]
            dx = (i - cx) / fx
            dy = (j - cy) / fy
            x = d * dx
            y = d * dy
            z = d
            xp = rot[0, 0] * x + rot[0, 1] * y + rot[0, 2] * z + t[0]
            yp = rot[1, 0] * x + rot[1, 1] * y + rot[1, 2] * z + t[1]
            zp = rot[2, 0] * x + rot[2, 1] * y + rot[2, 2] * z + t[2]
            inv_z = 1.0 / zp
            au = fx * inv_z
            cu = -fx * xp * inv_z * inv_z
            bv = fy * inv_z
            cv = -fy * yp * inv_z * inv_z
            rdx = rot[0, 0] * dx + rot[0, 1] * dy + rot[0, 2]
            rdy = rot[1, 0] * dx + rot[1, 1] * dy + rot[1, 2]
            rdz = rot[2, 0] * dx + rot[2, 1] * dy + rot[2, 2]
            d_depth[j, i] = g_u * (au * rdx + cu * rdz) \
                + g_v * (bv * rdy + cv * rdz)
            for m in range(3):
                px = drot[m, 0, 0] * x + drot[m, 0, 1] * y + drot[m, 0, 2] * z
                py = drot[m, 1, 0] * x + drot[m, 1, 1] * y + drot[m, 1, 2] * z
                pz = drot[m, 2, 0] * x + drot[m, 2, 1] * y + drot[m, 2, 2] * z
                d_twist[m] += g_u * (au * px + cu * pz) \
                    + g_v * (bv * py + cv * pz)
            d_twist[3] += g_u * au
            d_twist[4] += g_v * bv
            d_twist[5] += g_u * cu + g_v * cv
    return d_depth, d_twist


def box_sum3(x):
    """See `_numpy_impl.box_sum3`."""
    return _box_sum3(np.ascontiguousarray(x))


@njit(**_JIT)
def _box_sum3(x):
    h, w = x.shape
    rows = np.empty((h, w), dtype=np.float64)
    for i in range(w):
        if h == 1:
            rows[0, i] = x[0, i]
        else:
            rows[0, i] = x[0, i] + x[1, i]
            rows[h - 1, i] = x[h - 2, i] + x[h - 1, i]
    for j in range(1, h - 1):
        for i in range(w):
            rows[j, i] = (x[j - 1, i] + x[j, i]) + x[j + 1, i]
    out = np.empty((h, w), dtype=np.float64)
    for j in range(h):
        if w == 1:
            out[j, 0] = rows[j, 0]
        else:
            out[j, 0] = rows[j, 0] + rows[j, 1]
            for i in range(1, w - 1):
                out[j, i] = (rows[j, i - 1] + rows[j, i]) + rows[j, i + 1]
            out[j, w - 1] = rows[j, w - 2] + rows[j, w - 1]
    return out


def photometric_grad(a, b, m, count, alpha, c1, c2):
    """See `_numpy_impl.photometric_grad`."""
    return _photometric_grad(np.ascontiguousarray(a),
                             np.ascontiguousarray(b),
                             np.ascontiguousarray(m), count, alpha, c1, c2)


@njit(**_JIT)
def _photometric_grad(a, b, m, count, alpha, c1, c2):
    h, w, channels = a.shape
    n = _box_sum3(m)
    inv_n = np.empty((h, w), dtype=np.float64)
    for j in range(h):
        for i in range(w):
            ns = n[j, i]
            if ns < 1.0:
                ns = 1.0
            inv_n[j, i] = 1.0 / ns
    sum_s = np.zeros((h, w), dtype=np.float64)
    sum_d = np.zeros((h, w), dtype=np.float64)
    grad = np.empty((h, w, channels), dtype=np.float64)
    ma = np.empty((h, w), dtype=np.float64)
    mb = np.empty((h, w), dtype=np.float64)
    maa = np.empty((h, w), dtype=np.float64)
    mbb = np.empty((h, w), dtype=np.float64)
    mab = np.empty((h, w), dtype=np.float64)
    f_mu = np.empty((h, w), dtype=np.float64)
    f_ab = np.empty((h, w), dtype=np.float64)
    f_bb = np.empty((h, w), dtype=np.float64)
    denom = float(count * channels)
    for k in range(channels):
        for j in range(h):
            for i in range(w):
                mm = m[j, i]
                av = a[j, i, k]
                bv = b[j, i, k]
                ma[j, i] = mm * av
                mb[j, i] = mm * bv
                maa[j, i] = mm * (av * av)
                mbb[j, i] = mm * (bv * bv)
                mab[j, i] = mm * (av * bv)
        bma = _box_sum3(ma)
        bmb = _box_sum3(mb)
        baa = _box_sum3(maa)
        bbb = _box_sum3(mbb)
        bab = _box_sum3(mab)
        for j in range(h):
            for i in range(w):
                invn = inv_n[j, i]
                mu_a = bma[j, i] * invn
                mu_b = bmb[j, i] * invn
                e_aa = baa[j, i] * invn
                e_bb = bbb[j, i] * invn
                e_ab = bab[j, i] * invn
                var_a = e_aa - mu_a * mu_a
                var_b = e_bb - mu_b * mu_b
                cov = e_ab - mu_a * mu_b
                n1 = 2.0 * mu_a * mu_b + c1
                n2 = 2.0 * cov + c2
                d1 = mu_a * mu_a + mu_b * mu_b + c1
                d2 = var_a + var_b + c2
                s = (n1 * n2) / (d1 * d2)
                diff = a[j, i, k] - b[j, i, k]
                sum_s[j, i] += 1.0 - s
                sum_d[j, i] += abs(diff)
                w_pix = m[j, i] / denom
                g_s = (-0.5 * alpha) * w_pix
                inv_dd = 1.0 / (d1 * d2)
                ds_dmu_b = (2.0 * mu_a) * (n2 - n1) * inv_dd \
                    - s * (2.0 * mu_b) * (1.0 / d1 - 1.0 / d2)
                ds_de_ab = 2.0 * n1 * inv_dd
                ds_de_bb = -s / d2
                f_mu[j, i] = g_s * ds_dmu_b * invn
                f_ab[j, i] = g_s * ds_de_ab * invn
                f_bb[j, i] = g_s * ds_de_bb * invn
        t_mu = _box_sum3(f_mu)
        t_ab = _box_sum3(f_ab)
        t_bb = _box_sum3(f_bb)
        for j in range(h):
            for i in range(w):
                diff = a[j, i, k] - b[j, i, k]
                sgn = 0.0
                if diff > 0.0:
                    sgn = 1.0
                elif diff < 0.0:
                    sgn = -1.0
                w_pix = m[j, i] / denom
                grad[j, i, k] = m[j, i] * (t_mu[j, i]
                                           + a[j, i, k] * t_ab[j, i]
                                           + 2.0 * b[j, i, k] * t_bb[j, i]) \
                    - (1.0 - alpha) * sgn * w_pix
    per_pixel = np.zeros((h, w), dtype=np.float64)
    loss_sum = 0.0
    for j in range(h):
        for i in range(w):
            if m[j, i] > 0.0:
                pp = ((alpha * 0.5) * sum_s[j, i]
                      + (1.0 - alpha) * sum_d[j, i]) / channels
                per_pixel[j, i] = pp
                loss_sum += pp
    return loss_sum, per_pixel, grad


def l1_grad(a, b, m, count):
    """See `_numpy_impl.l1_grad`."""
    return _l1_grad(np.ascontiguousarray(a), np.ascontiguousarray(b),
                    np.ascontiguousarray(m), count)


@njit(**_JIT)
def _l1_grad(a, b, m, count):
    h, w, channels = a.shape
    per_pixel = np.zeros((h, w), dtype=np.float64)
    grad = np.empty((h, w, channels), dtype=np.float64)
    denom = float(count * channels)
    loss_sum = 0.0
    for j in range(h):
        for i in range(w):
            w_pix = m[j, i] / denom
            acc = 0.0
            for k in range(channels):
                diff = a[j, i, k] - b[j, i, k]
                acc += abs(diff)
                sgn = 0.0
                if diff > 0.0:
                    sgn = 1.0
                elif diff < 0.0:
                    sgn = -1.0
                grad[j, i, k] = -sgn * w_pix
            if m[j, i] > 0.0:
                pp = acc / channels
                per_pixel[j, i] = pp
                loss_sum += pp
    return loss_sum, per_pixel, grad


def grid_up(grid, h, w, cell):
    """See `_numpy_impl.grid_up`."""
    gh, gw = grid.shape
    if (gw - 1) * cell < w - 1 or (gh - 1) * cell < h - 1:
        raise ValueError("grid does not cover the raster")
    return _grid_up(np.ascontiguousarray(grid), h, w, cell)


@njit(**_JIT)
def _grid_up(grid, h, w, cell):
    gh, gw = grid.shape
    out = np.empty((h, w), dtype=np.float64)
    for j in range(h):
        v = j / cell
        j0 = min(int(v), gh - 1)
        j1 = min(j0 + 1, gh - 1)
        fv = v - j0
        for i in range(w):
            u = i / cell
            i0 = min(int(u), gw - 1)
            i1 = min(i0 + 1, gw - 1)
            fu = u - i0
            top = (1.0 - fu) * grid[j0, i0] + fu * grid[j0, i1]
            bot = (1.0 - fu) * grid[j1, i0] + fu * grid[j1, i1]
            out[j, i] = (1.0 - fv) * top + fv * bot
    return out


def grid_up_adjoint(g, gh, gw, cell):
    """See `_numpy_impl.grid_up_adjoint`."""
    return _grid_up_adjoint(np.ascontiguousarray(g), gh, gw, cell)


@njit(**_JIT)
def _grid_up_adjoint(g, gh, gw, cell):
    h, w = g.shape
    out = np.zeros((gh, gw), dtype=np.float64)
    # Four passes (one per bilinear corner) so the per-node accumulation
    # order matches the numpy backend's scatter-add order.
    for corner in range(4):
        for j in range(h):
            v = j / cell
            j0 = min(int(v), gh - 1)
            j1 = min(j0 + 1, gh - 1)
            fv = v - j0
            for i in range(w):
                u = i / cell
                i0 = min(int(u), gw - 1)
                i1 = min(i0 + 1, gw - 1)
                fu = u - i0
                if corner == 0:
                    out[j0, i0] += g[j, i] * ((1.0 - fv) * (1.0 - fu))
                elif corner == 1:
                    out[j0, i1] += g[j, i] * ((1.0 - fv) * fu)
                elif corner == 2:
                    out[j1, i0] += g[j, i] * (fv * (1.0 - fu))
                else:
                    out[j1, i1] += g[j, i] * (fv * fu)
    return out
