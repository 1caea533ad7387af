"""Synthetic scene pairs with ground truth and brightness perturbations.

Scenes are height-field surfaces over the world xy plane, observed by a
camera sliding along a fixed per-frame motion.  The world frame is the
first camera's frame.  Texture is procedural and anchored to world
coordinates, so every view samples the same physical pattern and clean
renders of the same scene are photometrically consistent by construction.

Brightness perturbations operate on the value channel of the hexcone
HSV model: a global multiplicative factor per frame, plus optional local
Gaussian spots, both clamped to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (DepthMap, Image, Intrinsics, PoseSE3, se3_compose,
                   se3_exp, se3_inverse)

__all__ = [
    "SceneSpec",
    "SceneSequence",
    "DegenerateSceneError",
    "SURFACES",
    "generate_scene",
    "rgb_to_hsv",
    "hsv_to_rgb",
    "perturb_global",
    "perturb_local",
    "sample_brightness_factor",
    "apply_variant",
    "VARIANTS",
]

SURFACES = ("plane", "incline", "bumps")
VARIANTS = ("clean", "global", "global_local")


class DegenerateSceneError(ValueError):
    """Raised when a frame sees too little of the surface."""


@dataclass(frozen=True)
class SceneSpec:
    """Parameters for one synthetic scene.

    Linear units are arbitrary but consistent (think millimeters);
    `baseline_twist` is the frame-to-frame camera motion (rotation
    vector, then translation) mapping frame k points into frame k+1.
    """

    height: int = 64
    width: int = 64
    focal: float = 72.0
    surface: str = "plane"
    nominal_depth: float = 100.0
    incline_slope: tuple[float, float] = (0.18, 0.12)
    bump_count: int = 4
    bump_amp: tuple[float, float] = (4.0, 8.0)
    bump_sigma: tuple[float, float] = (10.0, 18.0)
    n_frames: int = 2
    baseline_twist: tuple[float, ...] = (0.004, -0.003, 0.002, 4.0, -2.0, 1.5)
    texture_kind: str = "noise"
    texture_octaves: int = 3
    texture_wavelength: float = 10.0
    texture_contrast: tuple[float, float] = (0.15, 0.75)
    max_invalid_fraction: float = 0.3
    seed: int = 0

    def intrinsics(self) -> Intrinsics:
        return Intrinsics(fx=self.focal, fy=self.focal,
                          cx=(self.width - 1) / 2.0,
                          cy=(self.height - 1) / 2.0)


@dataclass(frozen=True)
class SceneSequence:
    """Rendered frames with ground truth.

    `poses[k]` maps world (= frame 0 camera) points into frame k camera
    points; `pose_between(i, j)` gives the frame i -> frame j transform
    used as ground truth for the ordered pair (i, j).
    """

    spec: SceneSpec
    images: tuple[Image, ...]
    depths: tuple[DepthMap, ...]
    poses: tuple[PoseSE3, ...]
    intrinsics: Intrinsics

    @property
    def n_frames(self) -> int:
        return len(self.images)

    def pose_between(self, i: int, j: int) -> PoseSE3:
        return se3_compose(self.poses[j], se3_inverse(self.poses[i]))


# -- procedural texture ----------------------------------------------------

_MIX1 = np.uint64(0x9E3779B97F4A7C15)
_MIX2 = np.uint64(0xC2B2AE3D27D4EB4F)
_MIX3 = np.uint64(0x94D049BB133111EB)


def _hash01(ix: np.ndarray, iy: np.ndarray, salt: int) -> np.ndarray:
    """Deterministic lattice hash to [0, 1) floats."""
    salted = (salt * int(_MIX3)) & 0xFFFFFFFFFFFFFFFF
    h = ix.astype(np.int64).astype(np.uint64) * _MIX1
    h = h ^ (iy.astype(np.int64).astype(np.uint64) * _MIX2)
    h = h ^ np.uint64(salted)
    h = h ^ (h >> np.uint64(30))
    h = h * _MIX2
    h = h ^ (h >> np.uint64(27))
    h = h * _MIX3
    h = h ^ (h >> np.uint64(31))
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 2 ** 53)


def _value_noise(x: np.ndarray, y: np.ndarray, wavelength: float,
                 salt: int) -> np.ndarray:
    """Smoothstep-interpolated lattice noise in [0, 1]."""
    u = x / wavelength
    v = y / wavelength
    i0 = np.floor(u).astype(np.int64)
    j0 = np.floor(v).astype(np.int64)
    fu = u - i0
    fv = v - j0
    su = fu * fu * (3.0 - 2.0 * fu)
    sv = fv * fv * (3.0 - 2.0 * fv)
    n00 = _hash01(i0, j0, salt)
    n01 = _hash01(i0 + 1, j0, salt)
    n10 = _hash01(i0, j0 + 1, salt)
    n11 = _hash01(i0 + 1, j0 + 1, salt)
    top = n00 + su * (n01 - n00)
    bot = n10 + su * (n11 - n10)
    return top + sv * (bot - top)


def _octave_noise(x, y, wavelength, octaves, salt):
    total = np.zeros_like(x)
    norm = 0.0
    amp = 1.0
    wl = wavelength
    for k in range(octaves):
        total = total + amp * _value_noise(x, y, wl, salt + 1013 * k)
        norm += amp
        amp *= 0.5
        wl *= 0.5
    return total / norm


def _default_texture(spec: SceneSpec, salt: int):
    lo, hi = spec.texture_contrast

    def paint(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        chans = []
        for c in range(3):
            v = _octave_noise(x, y, spec.texture_wavelength,
                              spec.texture_octaves, salt + 7919 * c)
            if spec.texture_kind == "checker":
                cell = spec.texture_wavelength / 2.0
                par = (np.floor(x / cell) + np.floor(y / cell)) % 2.0
                v = 0.5 * (0.25 + 0.5 * par) + 0.5 * v
            chans.append(lo + (hi - lo) * v)
        return np.stack(chans, axis=-1)

    return paint


# -- surfaces ---------------------------------------------------------------


def _make_height_field(spec: SceneSpec, rng: np.random.Generator):
    """Return (height_fn, is_planar, plane_normal, plane_offset).

    The surface is z = height(x, y) in world coordinates; planar cases
    expose (n, c) with n . X = c for the closed-form ray hit.
    """
    d0 = spec.nominal_depth
    sx, sy = spec.incline_slope
    if spec.surface == "plane":
        return (lambda x, y: np.full_like(x, d0)), (0.0, 0.0, 1.0), d0
    if spec.surface == "incline":
        return (lambda x, y: d0 + sx * x + sy * y), (-sx, -sy, 1.0), d0
    if spec.surface == "bumps":
        bx = sx * 0.5
        by = sy * 0.5
        count = spec.bump_count
        # Bumps live inside the part of the surface the frames can see.
        extent = d0 * max(spec.width, spec.height) / (2.0 * spec.focal)
        cxs = rng.uniform(-extent, extent, size=count)
        cys = rng.uniform(-extent, extent, size=count)
        amps = rng.uniform(spec.bump_amp[0], spec.bump_amp[1], size=count)
        amps *= rng.choice((-1.0, 1.0), size=count)
        sigmas = rng.uniform(spec.bump_sigma[0], spec.bump_sigma[1],
                             size=count)

        def height(x, y):
            z = d0 + bx * x + by * y
            for k in range(count):
                r2 = (x - cxs[k]) ** 2 + (y - cys[k]) ** 2
                z = z - amps[k] * np.exp(-r2 / (2.0 * sigmas[k] ** 2))
            return z

        return height, None, None
    raise ValueError(f"unknown surface {spec.surface!r}, "
                     f"expected one of {SURFACES}")


def _trace_frame(spec: SceneSpec, pose_w_to_c: PoseSE3, height_fn,
                 plane_n, plane_c):
    """Intersect each pixel ray with the surface.

    Returns (lam, hit) where lam is the camera-frame depth (the ray
    direction has unit z in camera coordinates) and hit marks pixels
    whose ray crossed the surface inside the search bracket.
    """
    h, w = spec.height, spec.width
    intr = spec.intrinsics()
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    d = np.stack([(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy,
                  np.ones_like(uu)], axis=-1)
    inv = se3_inverse(pose_w_to_c)
    a = d @ inv.rotation.T          # world direction per pixel
    b = inv.translation             # world camera center

    if plane_n is not None:
        n = np.asarray(plane_n)
        denom = a @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = (plane_c - b @ n) / denom
        hit = (np.abs(denom) > 1e-12) & (lam > 0) & np.isfinite(lam)
        lam = np.where(hit, lam, 1.0)
        return lam, hit

    # Height field: f(lam) = z(lam) - height(x(lam), y(lam)) is monotone
    # for the parameter ranges this module allows, so bisection on a wide
    # fixed bracket converges deterministically.
    d0 = spec.nominal_depth
    lo = np.full((h, w), 0.2 * d0)
    hi = np.full((h, w), 5.0 * d0)

    def f(lam):
        x = lam * a[..., 0] + b[0]
        y = lam * a[..., 1] + b[1]
        z = lam * a[..., 2] + b[2]
        return z - height_fn(x, y)

    flo = f(lo)
    fhi = f(hi)
    hit = (flo < 0.0) & (fhi > 0.0)
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        take_hi = fm > 0.0
        hi = np.where(take_hi, mid, hi)
        lo = np.where(take_hi, lo, mid)
    lam = 0.5 * (lo + hi)
    lam = np.where(hit, lam, 1.0)
    return lam, hit


def generate_scene(spec: SceneSpec, texture_fn=None) -> SceneSequence:
    """Render a scene sequence with ground-truth depth and poses.

    `texture_fn(x, y) -> (..., 3)` paints world xy coordinates; when
    omitted a procedural multi-octave noise texture seeded from the spec
    is used.  Raises DegenerateSceneError when a frame misses the
    surface on more than `max_invalid_fraction` of its pixels.
    """
    if spec.n_frames < 2:
        raise ValueError("need at least two frames")
    if spec.surface not in SURFACES:
        raise ValueError(f"unknown surface {spec.surface!r}")
    rng = np.random.default_rng(spec.seed)
    tex_salt = int(rng.integers(0, 2 ** 31))
    height_fn, plane_n, plane_c = _make_height_field(spec, rng)
    if texture_fn is None:
        texture_fn = _default_texture(spec, tex_salt)

    step = se3_exp(np.asarray(spec.baseline_twist, dtype=np.float64))
    poses = [PoseSE3()]
    for _ in range(spec.n_frames - 1):
        poses.append(se3_compose(step, poses[-1]))

    images = []
    depths = []
    for k, pose in enumerate(poses):
        lam, hit = _trace_frame(spec, pose, height_fn, plane_n, plane_c)
        bad = 1.0 - float(hit.mean())
        if bad > spec.max_invalid_fraction:
            raise DegenerateSceneError(
                f"frame {k}: {bad:.1%} of pixels miss the surface")
        intr = spec.intrinsics()
        uu, vv = np.meshgrid(np.arange(spec.width, dtype=np.float64),
                             np.arange(spec.height, dtype=np.float64))
        d = np.stack([(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy,
                      np.ones_like(uu)], axis=-1)
        inv = se3_inverse(pose)
        a = d @ inv.rotation.T
        x = lam * a[..., 0] + inv.translation[0]
        y = lam * a[..., 1] + inv.translation[1]
        rgb = np.clip(texture_fn(x, y), 0.0, 1.0)
        rgb = np.where(hit[..., None], rgb, 0.0)
        images.append(Image(data=rgb))
        depths.append(DepthMap(depth=np.where(hit, lam, 1.0), valid=hit))
    return SceneSequence(spec=spec, images=tuple(images),
                         depths=tuple(depths), poses=tuple(poses),
                         intrinsics=spec.intrinsics())


# -- brightness model -------------------------------------------------------


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Hexcone RGB -> HSV, hue in [0, 1); expects (..., 3) in [0, 1]."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = np.max(rgb, axis=-1)
    c = v - np.min(rgb, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(v > 0.0, c / np.where(v > 0.0, v, 1.0), 0.0)
        hr = np.mod((g - b) / c, 6.0)
        hg = (b - r) / c + 2.0
        hb = (r - g) / c + 4.0
    h = np.where(c > 0.0,
                 np.where(v == r, hr, np.where(v == g, hg, hb)),
                 0.0) / 6.0
    h = np.where(c > 0.0, np.mod(h, 1.0), 0.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    """Hexcone HSV -> RGB; hue wraps modulo 1."""
    hsv = np.asarray(hsv, dtype=np.float64)
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    h6 = np.mod(h, 1.0) * 6.0
    c = v * s
    x = c * (1.0 - np.abs(np.mod(h6, 2.0) - 1.0))
    m = v - c
    sector = np.floor(h6).astype(np.int64) % 6
    z = np.zeros_like(c)
    r = np.choose(sector, [c, x, z, z, x, c])
    g = np.choose(sector, [x, c, c, x, z, z])
    b = np.choose(sector, [z, z, x, c, c, x])
    return np.stack([r + m, g + m, b + m], axis=-1)


def perturb_global(image: Image, k: float) -> Image:
    """Scale the HSV value channel by `k`, clamped to [0, 1].

    A factor of exactly 1 is a no-op and returns the image unchanged, so
    clean pipelines stay bit-identical.
    """
    if k < 0:
        raise ValueError("brightness factor must be non-negative")
    if k == 1.0:
        return image
    if image.channels == 1:
        return Image(data=np.clip(image.data * k, 0.0, 1.0))
    hsv = rgb_to_hsv(image.data)
    hsv[..., 2] = np.clip(hsv[..., 2] * k, 0.0, 1.0)
    return Image(data=np.clip(hsv_to_rgb(hsv), 0.0, 1.0))


def perturb_local(image: Image, rng: np.random.Generator, count: int = 10,
                  sigma_range: tuple[float, float] = (6.0, 14.0),
                  amp_range: tuple[float, float] = (0.12, 0.30)) -> Image:
    """Add `count` Gaussian brightness spots of either sign to the value
    channel, clamped to [0, 1]."""
    if count < 0:
        raise ValueError("spot count must be >= 0")
    if count == 0:
        return image
    h, w = image.height, image.width
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    bump = np.zeros((h, w), dtype=np.float64)
    for _ in range(count):
        cu = rng.uniform(0, w - 1)
        cv = rng.uniform(0, h - 1)
        sigma = rng.uniform(*sigma_range)
        amp = rng.uniform(*amp_range) * rng.choice((-1.0, 1.0))
        r2 = (uu - cu) ** 2 + (vv - cv) ** 2
        bump += amp * np.exp(-r2 / (2.0 * sigma * sigma))
    if image.channels == 1:
        return Image(data=np.clip(image.data + bump[..., None], 0.0, 1.0))
    hsv = rgb_to_hsv(image.data)
    hsv[..., 2] = np.clip(hsv[..., 2] + bump, 0.0, 1.0)
    return Image(data=np.clip(hsv_to_rgb(hsv), 0.0, 1.0))


def sample_brightness_factor(rng: np.random.Generator,
                             inner: float = 0.1,
                             outer: float = 0.2) -> float:
    """Draw k uniformly from [1-outer, 1-inner] union [1+inner, 1+outer]."""
    k = rng.uniform(1.0 + inner, 1.0 + outer)
    # Mirror half the draws below 1, keeping the same magnitude band.
    if rng.random() < 0.5:
        k = 2.0 - k
    return float(k)


def apply_variant(images: tuple[Image, ...], variant: str,
                  rng: np.random.Generator, spot_count: int = 10,
                  sigma_range: tuple[float, float] = (6.0, 14.0),
                  amp_range: tuple[float, float] = (0.12, 0.30)
                  ) -> tuple[Image, ...]:
    """Perturb each frame independently according to the variant name.

    Adjacent frames take opposite-signed global factors (the side of
    frame 0 is random) so every draw realizes frame-to-frame brightness
    inconsistency; magnitudes stay independent per frame.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}, expected {VARIANTS}")
    if variant == "clean":
        return tuple(images)
    out = []
    bright = None
    for img in images:
        k = sample_brightness_factor(rng)
        if bright is None:
            bright = k > 1.0
        elif (k > 1.0) == bright:
            k = 2.0 - k
        bright = k > 1.0
        cur = perturb_global(img, k)
        if variant == "global_local":
            cur = perturb_local(cur, rng, count=spot_count,
                                sigma_range=sigma_range, amp_range=amp_range)
        out.append(cur)
    return tuple(out)
