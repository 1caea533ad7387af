"""Frequency-domain decomposition and structure transplanting.

A reconstruction produced by warping keeps the warped frame's intensity
statistics but its fine structure is slightly blurred by resampling.
Transplanting swaps the blurry phase spectrum for the real image's while
keeping the reconstruction's amplitude spectrum, yielding an image with
the reconstruction's brightness character and the real image's edges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Image

__all__ = [
    "FrequencyDecomposition",
    "fft2",
    "ifft2",
    "structure_transplant",
]


@dataclass(frozen=True)
class FrequencyDecomposition:
    """Per-channel 2D spectrum split into amplitude and phase.

    Both arrays have the image's (H, W, C) shape; `amplitude` is
    non-negative and `phase` is in radians.
    """

    amplitude: np.ndarray
    phase: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.amplitude, dtype=np.float64)
        p = np.asarray(self.phase, dtype=np.float64)
        if a.shape != p.shape or a.ndim != 3:
            raise ValueError(
                f"amplitude {a.shape} and phase {p.shape} must match (H, W, C)")
        if a.size and a.min() < 0:
            raise ValueError("amplitude must be non-negative")
        object.__setattr__(self, "amplitude", a)
        object.__setattr__(self, "phase", p)


def fft2(image: Image) -> FrequencyDecomposition:
    """Per-channel 2D DFT of the image, as (amplitude, phase)."""
    spec = np.fft.fft2(image.data, axes=(0, 1))
    return FrequencyDecomposition(amplitude=np.abs(spec),
                                  phase=np.angle(spec))


def ifft2(dec: FrequencyDecomposition) -> tuple[Image, float]:
    """Invert a decomposition back to an image.

    Returns (image, residue) where residue is the largest imaginary
    magnitude discarded when taking the real part.  For a decomposition
    of a real image, or any amplitude/phase mix of two real images, the
    spectrum keeps conjugate symmetry and the residue sits at roundoff
    level.
    """
    spec = dec.amplitude * np.exp(1j * dec.phase)
    out = np.fft.ifft2(spec, axes=(0, 1))
    residue = float(np.abs(out.imag).max()) if out.size else 0.0
    return Image(data=out.real), residue


def _transplant_raw(amplitude_from: np.ndarray, structure_from: np.ndarray,
                    clamp: bool = True) -> np.ndarray:
    """Half-spectrum transplant for real (H, W, C) arrays.

    Mathematically identical to the full-spectrum path: both inputs are
    real, so the mixed spectrum |A| B/|B| keeps conjugate symmetry and
    the inverse transform of its non-negative-frequency half is the same
    real image.  The unit phasor B/|B| replaces the angle/exp pair; bins
    with zero magnitude get phasor one, matching angle(0) = 0.
    """
    return _transplant_phasor(amplitude_from,
                              _structure_phasor(structure_from), clamp)


def _structure_phasor(structure_from: np.ndarray) -> np.ndarray:
    """Per-channel unit phasors B/|B| of the half spectrum, (C, H, W//2+1).

    Constant for a fixed structure image, so callers that reuse the same
    structure many times can compute this once.
    """
    h, w, c = structure_from.shape
    phasor = np.empty((c, h, w // 2 + 1), dtype=np.complex128)
    for k in range(c):
        fb = np.fft.rfft2(np.ascontiguousarray(structure_from[..., k]))
        mag_b = np.abs(fb)
        np.divide(fb, mag_b, out=phasor[k], where=mag_b > 0.0)
        phasor[k][mag_b == 0.0] = 1.0
    return phasor


def _transplant_phasor(amplitude_from: np.ndarray, phasor: np.ndarray,
                       clamp: bool = True) -> np.ndarray:
    h, w, c = amplitude_from.shape
    out = np.empty((h, w, c), dtype=np.float64)
    for k in range(c):
        fa = np.fft.rfft2(np.ascontiguousarray(amplitude_from[..., k]))
        out[..., k] = np.fft.irfft2(np.abs(fa) * phasor[k], s=(h, w))
    if clamp:
        np.clip(out, 0.0, 1.0, out=out)
    return out


def structure_transplant(amplitude_from: Image, structure_from: Image,
                         clamp: bool = True) -> Image:
    """Combine one image's amplitude spectrum with another's phase.

    The result keeps `amplitude_from`'s global intensity character and
    `structure_from`'s spatial structure.  Transplanting an image with
    itself reproduces it up to FFT roundoff.  With `clamp` the output is
    clipped to [0, 1], which the training pipeline wants; tests that
    check spectral identities should pass clamp=False.
    """
    if amplitude_from.data.shape != structure_from.data.shape:
        raise ValueError(
            f"shape mismatch {amplitude_from.data.shape} vs "
            f"{structure_from.data.shape}")
    amp = fft2(amplitude_from).amplitude
    phase = fft2(structure_from).phase
    out, _ = ifft2(FrequencyDecomposition(amplitude=amp, phase=phase))
    if clamp:
        return Image(data=np.clip(out.data, 0.0, 1.0))
    return out
