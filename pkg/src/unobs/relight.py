"""Relighting an RGB image to a target illuminant.

``relight_hsi`` goes through a reconstructed spectrum: recover the lit HSI,
divide out the source light, re-light with the target and re-render.
Bands where the source light is below ``threshold_frac * max(l)`` are not
divided; their reflectance is interpolated linearly in wavelength from the
nearest usable bands (held flat past either end).

The other three functions work in RGB space and serve as baselines.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ShapeError, UnusableIlluminantError, ZeroGainError
from .hsio import HyperCube, Illuminant, SpectralSensitivity


def _arr(x):
    if isinstance(x, HyperCube):
        return x.data
    if isinstance(x, Illuminant):
        return x.power
    return np.asarray(x, dtype=np.float64)


def _ssf_matrix(ssf):
    return ssf.matrix if isinstance(ssf, SpectralSensitivity) else np.asarray(ssf, dtype=np.float64)


@dataclass
class RelightJob:
    input_rgb: np.ndarray
    source: np.ndarray
    target: np.ndarray
    ssf: SpectralSensitivity
    sr: Callable[[np.ndarray], np.ndarray]
    threshold_frac: float = 0.1
    wavelengths: np.ndarray | None = None

    def __post_init__(self):
        self.input_rgb = _arr(self.input_rgb)
        if self.wavelengths is None and isinstance(self.source, Illuminant):
            self.wavelengths = self.source.wavelengths
        self.source = _arr(self.source)
        self.target = _arr(self.target)
        if self.source.shape != self.target.shape:
            raise ShapeError("source and target illuminants are on different grids")
        if not self.threshold_frac > 0:
            raise ValueError("threshold must be positive")

    @property
    def threshold(self) -> float:
        return self.threshold_frac * float(self.source.max())


def interpolation_matrix(wavelengths, keep) -> np.ndarray:
    """``B x K`` matrix filling every band from the ``K`` kept bands.

    Kept bands map to themselves; the rest interpolate linearly between the
    nearest kept neighbours, held constant beyond the outermost ones.
    """
    keep = np.asarray(keep, dtype=bool)
    idx = np.flatnonzero(keep)
    if idx.size == 0:
        raise UnusableIlluminantError("no band above the illuminant threshold")
    wl = np.asarray(wavelengths, dtype=np.float64)
    eye = np.eye(idx.size)
    return np.stack([np.interp(wl, wl[idx], eye[:, j]) for j in range(idx.size)], axis=1)


def recover_reflectance(lit_hsi, source, threshold, wavelengths=None) -> np.ndarray:
    hsi = _arr(lit_hsi)
    l = _arr(source)
    if hsi.shape[0] != l.size:
        raise ShapeError(f"HSI has {hsi.shape[0]} bands, illuminant {l.size}")
    wl = np.arange(l.size, dtype=np.float64) if wavelengths is None else wavelengths
    keep = l >= threshold
    W = interpolation_matrix(wl, keep)
    refl_kept = hsi[keep] / l[keep][:, None, None]
    return np.tensordot(W, refl_kept, axes=(1, 0))


def relight_hsi(job: RelightJob) -> np.ndarray:
    lit = _arr(job.sr(job.input_rgb))
    P = _ssf_matrix(job.ssf)
    if lit.shape[0] != P.shape[1]:
        raise ShapeError(f"SR output has {lit.shape[0]} bands, SSF expects {P.shape[1]}")
    refl = recover_reflectance(lit, job.source, job.threshold, job.wavelengths)
    relit = refl * job.target[:, None, None]
    return np.tensordot(P, relit, axes=(1, 0))


def rgb_re(input_rgb, source, target, ssf) -> np.ndarray:
    """Per-channel von-Kries style gain ``(P l_target) / (P l_source)``."""
    P = _ssf_matrix(ssf)
    src = P @ _arr(source)
    dst = P @ _arr(target)
    if np.any(src <= 0):
        raise ZeroGainError(f"source illuminant projects to non-positive gains {src}")
    return _arr(input_rgb) * (dst / src)[:, None, None]


def gray_world(input_rgb) -> np.ndarray:
    """Equalize channel means at the image's global mean level."""
    rgb = _arr(input_rgb)
    means = rgb.mean(axis=(1, 2))
    if np.any(means == 0):
        raise ZeroGainError("a channel has zero mean")
    return rgb * (means.mean() / means)[:, None, None]


def perfect_reflector(input_rgb) -> np.ndarray:
    """Scale each channel so its brightest pixel becomes 1."""
    rgb = _arr(input_rgb)
    peaks = rgb.max(axis=(1, 2))
    if np.any(peaks <= 0):
        raise ZeroGainError("a channel has no positive value")
    return rgb / peaks[:, None, None]
