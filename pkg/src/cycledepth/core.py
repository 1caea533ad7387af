"""Core value types and SE(3) math.

Conventions used throughout the package:

* Images are float64 arrays of shape (H, W, C) with C in {1, 3}, values
  nominally in [0, 1] but not clamped by the container.
* Depth maps are float64 arrays of shape (H, W) holding metric depth along
  the camera z axis, with a boolean validity mask of the same shape.
* Pixel coordinates are (u, v) with u along columns (x) and v along rows
  (y); the pixel center of column i, row j is exactly (u, v) = (i, j).
* A twist is a plain float64 6-vector (wx, wy, wz, tx, ty, tz): rotation
  vector first, translation second.  The exponential map applies Rodrigues
  to the rotation block and copies the translation block verbatim, so the
  translation component of a twist is the translation of the resulting
  pose, not an se(3) velocity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Image",
    "DepthMap",
    "Intrinsics",
    "PoseSE3",
    "hat",
    "vee",
    "so3_exp",
    "so3_log",
    "so3_exp_jacobian",
    "se3_exp",
    "se3_compose",
    "se3_inverse",
    "se3_apply",
]

# Rotation angle below which closed-form Rodrigues coefficients switch to
# their Taylor series to avoid 0/0.
_SMALL_ANGLE = 1e-8


def _readonly(a: np.ndarray, dtype=np.float64) -> np.ndarray:
    """Return a C-contiguous read-only float view-or-copy of `a`.

    Arrays that are already contiguous, of the right dtype, and frozen
    are adopted as-is; anything still writable is copied so no caller
    can mutate a value type from the outside.
    """
    if (isinstance(a, np.ndarray) and a.dtype == dtype
            and a.flags.c_contiguous and not a.flags.writeable):
        return a
    out = np.ascontiguousarray(a, dtype=dtype)
    if out is a:
        out = out.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Image:
    """Immutable raster image, float64, shape (H, W, C), C in {1, 3}."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 3 or d.shape[2] not in (1, 3):
            raise ValueError(f"image data must be (H, W, 1|3), got {d.shape}")
        if d.shape[0] < 1 or d.shape[1] < 1:
            raise ValueError(f"image must be non-empty, got {d.shape}")
        object.__setattr__(self, "data", _readonly(d))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel metric depth with validity mask.

    Every valid entry must be finite and strictly positive; invalid
    entries are unconstrained and must never be read.
    """

    depth: np.ndarray
    valid: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError(f"depth must be (H, W), got {d.shape}")
        v = self.valid
        if v is None:
            v = np.ones(d.shape, dtype=bool)
        v = np.asarray(v, dtype=bool)
        if v.shape != d.shape:
            raise ValueError(f"valid mask {v.shape} does not match depth {d.shape}")
        dv = d[v]
        if dv.size and not (np.all(np.isfinite(dv)) and np.all(dv > 0)):
            raise ValueError("valid depth entries must be finite and > 0")
        object.__setattr__(self, "depth", _readonly(d))
        vv = np.ascontiguousarray(v)
        if vv is v:
            vv = vv.copy()
        vv.setflags(write=False)
        object.__setattr__(self, "valid", vv)

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera intrinsics (no distortion)."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (np.isfinite(self.fx) and np.isfinite(self.fy)
                and np.isfinite(self.cx) and np.isfinite(self.cy)):
            raise ValueError("intrinsics must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be > 0")

    def to_matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class PoseSE3:
    """Rigid transform x -> R @ x + t, rotation kept orthonormal."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be (3, 3), got {r.shape}")
        if t.shape != (3,):
            raise ValueError(f"translation must be (3,), got {t.shape}")
        err = np.abs(r @ r.T - np.eye(3)).max()
        if err > 1e-9 or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError(f"rotation is not orthonormal (deviation {err:.3e})")
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        object.__setattr__(self, "rotation", _readonly(r))
        object.__setattr__(self, "translation", _readonly(t))

    def to_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @property
    def is_identity(self) -> bool:
        return (np.array_equal(self.rotation, np.eye(3))
                and np.array_equal(self.translation, np.zeros(3)))


def hat(w: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix such that hat(w) @ x = cross(w, x)."""
    w = np.asarray(w, dtype=np.float64)
    return np.array(
        [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]],
        dtype=np.float64,
    )


def vee(m: np.ndarray) -> np.ndarray:
    """Inverse of hat for skew-symmetric matrices."""
    return np.array([m[2, 1], m[0, 2], m[1, 0]], dtype=np.float64)


def _rodrigues_coeffs(theta: float) -> tuple[float, float]:
    """Return (A, B) with R = I + A hat(w) + B hat(w)^2."""
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0, 0.5 - t2 / 24.0
    return np.sin(theta) / theta, (1.0 - np.cos(theta)) / (theta * theta)


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rotation matrix for rotation vector `w` (Rodrigues)."""
    w = np.asarray(w, dtype=np.float64)
    theta = float(np.linalg.norm(w))
    a, b = _rodrigues_coeffs(theta)
    k = hat(w)
    return np.eye(3) + a * k + b * (k @ k)


def so3_log(r: np.ndarray) -> np.ndarray:
    """Rotation vector of rotation matrix `r`, angle in [0, pi]."""
    r = np.asarray(r, dtype=np.float64)
    cos_theta = np.clip((np.trace(r) - 1.0) * 0.5, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    if theta < _SMALL_ANGLE:
        return vee(r - r.T) * 0.5
    if np.pi - theta < 1e-6:
        # Near pi the antisymmetric part vanishes; recover the axis from
        # the symmetric part instead: (R + R^T)/2 - cos(t) I = (1-cos(t)) nn^T.
        m = ((r + r.T) * 0.5 - cos_theta * np.eye(3)) / (1.0 - cos_theta)
        k = int(np.argmax(np.diag(m)))
        axis = m[:, k] / np.sqrt(max(m[k, k], 1e-30))
        axis = axis / np.linalg.norm(axis)
        s = vee(r - r.T)
        if np.dot(s, axis) < 0:
            axis = -axis
        return axis * theta
    return vee(r - r.T) * (theta / (2.0 * np.sin(theta)))


def so3_exp_jacobian(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotation matrix and its partials w.r.t. the rotation vector.

    Returns (R, dR) with dR of shape (3, 3, 3): dR[i] = dR/dw_i.  Uses the
    closed form

        dR/dw_i = w_i C1 K + A E_i + w_i C2 K^2 + B (E_i K + K E_i)

    where K = hat(w), E_i = hat(e_i), A = sin(t)/t, B = (1-cos(t))/t^2,
    C1 = (t cos(t) - sin(t))/t^3, C2 = (t sin(t) + 2 cos(t) - 2)/t^4,
    with Taylor fallbacks near t = 0.
    """
    w = np.asarray(w, dtype=np.float64)
    theta = float(np.linalg.norm(w))
    k = hat(w)
    k2 = k @ k
    if theta < 1e-4:
        t2 = theta * theta
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        c1 = -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0
        c2 = -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0
    else:
        st, ct = np.sin(theta), np.cos(theta)
        t2 = theta * theta
        a = st / theta
        b = (1.0 - ct) / t2
        c1 = (theta * ct - st) / (t2 * theta)
        c2 = (theta * st + 2.0 * ct - 2.0) / (t2 * t2)
    r = np.eye(3) + a * k + b * k2
    dr = np.empty((3, 3, 3))
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1.0
        ei = hat(e)
        dr[i] = w[i] * c1 * k + a * ei + w[i] * c2 * k2 + b * (ei @ k + k @ ei)
    return r, dr


def se3_exp(twist: np.ndarray) -> PoseSE3:
    """Pose from a 6-vector twist: Rodrigues rotation, verbatim translation."""
    twist = np.asarray(twist, dtype=np.float64)
    if twist.shape != (6,):
        raise ValueError(f"twist must be a 6-vector, got {twist.shape}")
    if not np.all(np.isfinite(twist)):
        raise ValueError("twist must be finite")
    return PoseSE3(rotation=so3_exp(twist[:3]), translation=twist[3:].copy())


def se3_compose(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    """Compose poses: (a o b)(x) = a(b(x))."""
    return PoseSE3(
        rotation=a.rotation @ b.rotation,
        translation=a.rotation @ b.translation + a.translation,
    )


def se3_inverse(p: PoseSE3) -> PoseSE3:
    """Inverse pose: inverse(p)(p(x)) = x."""
    rt = p.rotation.T
    return PoseSE3(rotation=rt, translation=-(rt @ p.translation))


def se3_apply(p: PoseSE3, points: np.ndarray) -> np.ndarray:
    """Apply pose to points of shape (..., 3)."""
    pts = np.asarray(points, dtype=np.float64)
    return pts @ p.rotation.T + p.translation
