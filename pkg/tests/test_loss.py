"""Loss-layer checks against sliding-window oracles and closed forms.

The structural similarity map is recomputed with a literal per-pixel
window walker, the mixed loss against hand-evaluated constants, and
every gradient against central finite differences.
"""

from __future__ import annotations

import numpy as np
import pytest

from cycledepth.core import Image
from cycledepth.loss import (ALPHA, SSIM_C1, SSIM_C2, EmptyMaskError,
                             feature_extract, perception_loss,
                             perception_loss_grad, photometric_loss,
                             photometric_loss_grad, ssim)


def ssim_oracle(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Literal 3x3 masked-window SSIM, one window at a time."""
    h, w, channels = a.shape
    out = np.empty((h, w, channels))
    for v in range(h):
        for u in range(w):
            idx = [(y, x)
                   for y in range(max(0, v - 1), min(h, v + 2))
                   for x in range(max(0, u - 1), min(w, u + 2))
                   if mask[y, x]]
            n = max(len(idx), 1)
            for c in range(channels):
                va = np.array([a[y, x, c] for y, x in idx])
                vb = np.array([b[y, x, c] for y, x in idx])
                mu_a = va.sum() / n
                mu_b = vb.sum() / n
                var_a = (va * va).sum() / n - mu_a * mu_a
                var_b = (vb * vb).sum() / n - mu_b * mu_b
                cov = (va * vb).sum() / n - mu_a * mu_b
                n1 = 2 * mu_a * mu_b + SSIM_C1
                n2 = 2 * cov + SSIM_C2
                d1 = mu_a * mu_a + mu_b * mu_b + SSIM_C1
                d2 = var_a + var_b + SSIM_C2
                out[v, u, c] = (n1 * n2) / (d1 * d2)
    return out


def const_image(h: int, w: int, value: float, channels: int = 1) -> Image:
    return Image(data=np.full((h, w, channels), value))


def rand_pair(h: int, w: int, c: int, seed: int):
    rng = np.random.default_rng(seed)
    return Image(data=rng.random((h, w, c))), Image(data=rng.random((h, w, c)))


def test_ssim_constant_images_closed_form():
    # Box-window moments carry ~1e-16 cancellation noise that the small
    # C2 denominator amplifies about a thousandfold, hence the 1e-12.
    p, q = 0.5, 0.6
    s = ssim(const_image(8, 8, p), const_image(8, 8, q))
    want = (2 * p * q + SSIM_C1) / (p * p + q * q + SSIM_C1)
    assert np.abs(s - want).max() < 1e-12


def test_ssim_identical_images_is_one():
    a, _ = rand_pair(10, 10, 3, seed=0)
    assert np.array_equal(ssim(a, a), np.ones((10, 10, 3)))


def test_ssim_matches_window_oracle_full_mask():
    a, b = rand_pair(16, 16, 1, seed=1)
    got = ssim(a, b)
    want = ssim_oracle(a.data, b.data, np.ones((16, 16), dtype=bool))
    assert np.abs(got - want).max() < 1e-10


def test_ssim_matches_window_oracle_with_mask():
    rng = np.random.default_rng(2)
    a, b = rand_pair(16, 16, 3, seed=3)
    mask = rng.random((16, 16)) > 0.3
    got = ssim(a, b, mask)
    want = ssim_oracle(a.data, b.data, mask)
    assert np.abs(got - want).max() < 1e-10


def test_masked_pixels_cannot_pollute_the_loss():
    a, b = rand_pair(12, 12, 1, seed=4)
    rng = np.random.default_rng(5)
    mask = rng.random((12, 12)) > 0.4
    base = photometric_loss(a, b, mask)
    # Arbitrary garbage strictly outside the mask must change nothing.
    wild = b.data.copy()
    wild[~mask] = 1e6
    after = photometric_loss(a, Image(data=wild), mask)
    assert after.scalar == base.scalar
    assert np.array_equal(after.per_pixel, base.per_pixel)


def test_photometric_constant_hand_case():
    # All windows identical, so the scalar equals the per-pixel value:
    # alpha * (1 - s)/2 + (1 - alpha) * |0.5 - 0.6| with the constant-window
    # similarity s = (2 p q + C1) C2 / ((p^2 + q^2 + C1) C2).
    p, q = 0.5, 0.6
    s = (2 * p * q + SSIM_C1) / (p * p + q * q + SSIM_C1)
    want = ALPHA * 0.5 * (1.0 - s) + (1.0 - ALPHA) * abs(p - q)
    got = photometric_loss(const_image(16, 16, p), const_image(16, 16, q))
    assert got.scalar == pytest.approx(want, abs=1e-12)
    assert got.count == 256
    assert np.abs(got.per_pixel - want).max() < 1e-12


def test_photometric_identical_images_is_zero():
    a, _ = rand_pair(12, 12, 3, seed=6)
    out = photometric_loss(a, a)
    assert out.scalar == 0.0
    assert np.array_equal(out.per_pixel, np.zeros((12, 12)))


def test_photometric_scalar_is_masked_mean_of_per_pixel():
    a, b = rand_pair(14, 14, 3, seed=7)
    rng = np.random.default_rng(8)
    mask = rng.random((14, 14)) > 0.25
    out = photometric_loss(a, b, mask)
    assert out.count == int(mask.sum())
    assert out.scalar == pytest.approx(out.per_pixel[mask].mean(), rel=1e-12)
    assert np.all(out.per_pixel[~mask] == 0.0)


def test_photometric_is_symmetric():
    a, b = rand_pair(12, 12, 3, seed=9)
    assert photometric_loss(a, b).scalar == photometric_loss(b, a).scalar


def test_photometric_monotone_in_offset():
    # Constant reference vs increasingly offset copy: the loss must rise.
    prev = -1.0
    for eps in np.linspace(0.0, 0.3, 13):
        cur = photometric_loss(const_image(8, 8, 0.5),
                               const_image(8, 8, 0.5 + eps)).scalar
        assert cur > prev or (eps == 0.0 and cur == 0.0)
        prev = cur


def test_photometric_gradient_matches_finite_differences():
    a, b = rand_pair(16, 16, 1, seed=10)
    rng = np.random.default_rng(11)
    mask = rng.random((16, 16)) > 0.2
    out, grad = photometric_loss_grad(a, b, mask)
    assert grad.shape == b.data.shape
    h = 1e-6
    for _ in range(40):
        v = int(rng.integers(0, 16))
        u = int(rng.integers(0, 16))
        bp = b.data.copy()
        bm = b.data.copy()
        bp[v, u, 0] += h
        bm[v, u, 0] -= h
        fd = (photometric_loss(a, Image(data=bp), mask).scalar
              - photometric_loss(a, Image(data=bm), mask).scalar) / (2 * h)
        g = grad[v, u, 0]
        if max(abs(g), abs(fd)) < 1e-12:
            continue
        rel = abs(g - fd) / max(abs(g), abs(fd))
        assert rel < 1e-5, f"pixel ({v},{u}): analytic {g:.3e} vs fd {fd:.3e}"


def test_empty_mask_raises():
    a, b = rand_pair(6, 6, 1, seed=12)
    with pytest.raises(EmptyMaskError):
        photometric_loss(a, b, np.zeros((6, 6), dtype=bool))
    feats = feature_extract(a)
    with pytest.raises(EmptyMaskError):
        perception_loss(feats, feats, np.zeros((6, 6), dtype=bool))


def test_shape_mismatch_raises():
    a = const_image(6, 6, 0.5)
    b = const_image(6, 7, 0.5)
    with pytest.raises(ValueError):
        photometric_loss(a, b)


def test_feature_extract_shape_and_gray():
    rng = np.random.default_rng(13)
    img = Image(data=rng.random((12, 14, 3)))
    f = feature_extract(img)
    assert f.shape == (12, 14, 4)
    assert np.abs(f[..., 0] - img.data.mean(axis=2)).max() < 1e-15


def test_feature_extract_ramp_hand_case():
    # Gray ramp 0.01 * x: unit-slope gradients everywhere (one-sided
    # differences agree with central ones on a linear ramp), zero in y,
    # and the block-pooled magnitude doubles the per-cell step.
    h, w = 8, 12
    uu = np.arange(w, dtype=np.float64)[None, :].repeat(h, axis=0)
    img = Image(data=(0.01 * uu)[..., None])
    f = feature_extract(img)
    assert np.abs(f[..., 1] - 0.01).max() < 1e-15
    assert np.abs(f[..., 2]).max() == 0.0
    inner = f[1:-1, 2:-2, 3]
    assert np.abs(inner - 0.02).max() < 1e-15


def test_feature_extract_matches_reimplementation():
    rng = np.random.default_rng(14)
    for h, w in [(16, 16), (15, 17)]:
        img = Image(data=rng.random((h, w, 3)))
        f = feature_extract(img)
        gray = img.data.mean(axis=2)

        def grads(x):
            hh, ww = x.shape
            gx = np.zeros_like(x)
            gy = np.zeros_like(x)
            gx[:, 1:-1] = (x[:, 2:] - x[:, :-2]) * 0.5
            gx[:, 0] = x[:, 1] - x[:, 0]
            gx[:, -1] = x[:, -1] - x[:, -2]
            gy[1:-1, :] = (x[2:, :] - x[:-2, :]) * 0.5
            gy[0, :] = x[1, :] - x[0, :]
            gy[-1, :] = x[-1, :] - x[-2, :]
            return gx, gy

        gx, gy = grads(gray)
        assert np.abs(f[..., 1] - gx).max() < 1e-15
        assert np.abs(f[..., 2] - gy).max() < 1e-15
        ph, pw = h // 2, w // 2
        pooled = np.zeros((ph, pw))
        for j in range(ph):
            for i in range(pw):
                pooled[j, i] = gray[2 * j:2 * j + 2, 2 * i:2 * i + 2].mean()
        pgx, pgy = grads(pooled)
        pmag = np.hypot(pgx, pgy)
        up = pmag[np.minimum(np.arange(h) // 2, ph - 1)[:, None],
                  np.minimum(np.arange(w) // 2, pw - 1)[None, :]]
        assert np.abs(f[..., 3] - up).max() < 1e-12


def test_perception_loss_is_masked_mean_absolute_difference():
    rng = np.random.default_rng(15)
    fa = rng.random((10, 10, 4))
    fb = rng.random((10, 10, 4))
    mask = rng.random((10, 10)) > 0.3
    out = perception_loss(fa, fb, mask)
    want = np.abs(fa - fb).mean(axis=2)[mask].mean()
    assert out.scalar == pytest.approx(want, rel=1e-12)
    assert out.count == int(mask.sum())


def test_perception_gradient_matches_finite_differences():
    rng = np.random.default_rng(16)
    fa = rng.random((8, 8, 4))
    fb = rng.random((8, 8, 4))
    mask = rng.random((8, 8)) > 0.2
    _, grad = perception_loss_grad(fa, fb, mask)
    h = 1e-7
    for _ in range(30):
        v = int(rng.integers(0, 8))
        u = int(rng.integers(0, 8))
        c = int(rng.integers(0, 4))
        fp = fb.copy()
        fm = fb.copy()
        fp[v, u, c] += h
        fm[v, u, c] -= h
        fd = (perception_loss(fa, fp, mask).scalar
              - perception_loss(fa, fm, mask).scalar) / (2 * h)
        assert grad[v, u, c] == pytest.approx(fd, abs=1e-9)
