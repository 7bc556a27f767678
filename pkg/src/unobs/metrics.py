"""PSNR, SSIM and SAM for spectral cubes laid out as ``(B, Nx, Ny)``."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, UndefinedMetricError
from .hsio import HyperCube


def _pair(est, ref):
    e = est.data if isinstance(est, HyperCube) else np.asarray(est, dtype=np.float64)
    r = ref.data if isinstance(ref, HyperCube) else np.asarray(ref, dtype=np.float64)
    if e.shape != r.shape:
        raise ShapeError(f"shape mismatch: {e.shape} vs {r.shape}")
    if e.ndim == 2:
        e, r = e[None], r[None]
    return e, r


def spectral_angles(est, ref):
    """Per-pixel angle in degrees, NaN where the reference spectrum is zero.

    Uses ``2 atan2(|a - b|, |a + b|)`` on the unit spectra, which equals the
    clamped arccos of the normalized dot product but keeps full precision
    for nearly parallel spectra.
    """
    e, r = _pair(est, ref)
    ne = np.linalg.norm(e, axis=0)
    nr = np.linalg.norm(r, axis=0)
    valid = nr > 0
    both = valid & (ne > 0)
    ue = np.divide(e, ne, out=np.zeros_like(e), where=both)
    ur = np.divide(r, nr, out=np.zeros_like(r), where=both)
    ang = np.degrees(2.0 * np.arctan2(np.linalg.norm(ue - ur, axis=0),
                                      np.linalg.norm(ue + ur, axis=0)))
    # a zero estimate against a nonzero reference has no direction: count as 90 deg
    ang[valid & ~both] = 90.0
    ang[~valid] = np.nan
    return ang


def sam(est, ref, return_excluded=False):
    """Mean spectral angle in degrees over pixels with a nonzero reference."""
    ang = spectral_angles(est, ref)
    excluded = int(np.isnan(ang).sum())
    if excluded == ang.size:
        raise UndefinedMetricError("every reference spectrum is zero")
    value = float(np.nanmean(ang))
    return (value, excluded) if return_excluded else value


def psnr(est, ref, peak=1.0) -> float:
    """Whole-cube PSNR in dB; ``math.inf`` when the cubes are identical."""
    e, r = _pair(est, ref)
    mse = float(np.mean((e - r) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def band_psnr(est, ref, peak=1.0) -> list:
    e, r = _pair(est, ref)
    return [psnr(e[b], r[b], peak) for b in range(e.shape[0])]


def _filter_valid(img, g1):
    # separable 'valid' correlation of (B, X, Y) with the 1-D window g1
    tmp = sliding_window_view(img, g1.size, axis=1) @ g1
    return sliding_window_view(tmp, g1.size, axis=2) @ g1


def ssim_map(x, y, win_size=11, sigma=1.5, k1=0.01, k2=0.03, peak=1.0):
    if min(x.shape[-2:]) < win_size:
        raise ShapeError(f"image {x.shape[-2:]} smaller than the {win_size}x{win_size} window")
    offsets = np.arange(win_size, dtype=np.float64) - (win_size - 1) / 2.0
    g = np.exp(-(offsets * offsets) / (2.0 * sigma * sigma))
    g /= g.sum()
    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return num / den


def ssim(est, ref, win_size=11, sigma=1.5, k1=0.01, k2=0.03, peak=1.0) -> float:
    """Single-scale SSIM with a Gaussian window, per band, averaged over bands.

    Statistics use the biased (population) form and only fully covered
    window positions are scored.
    """
    e, r = _pair(est, ref)
    m = ssim_map(e, r, win_size, sigma, k1, k2, peak)
    return float(m.mean(axis=(1, 2)).mean())


@dataclass
class EvalReport:
    psnr: float
    ssim: float
    sam: float
    band_psnr: list = field(default_factory=list)
    sam_excluded: int = 0

    @property
    def identical(self) -> bool:
        return math.isinf(self.psnr)


def evaluate(est, ref, peak=1.0) -> EvalReport:
    s, excluded = sam(est, ref, return_excluded=True)
    return EvalReport(psnr=psnr(est, ref, peak), ssim=ssim(est, ref, peak=peak), sam=s,
                      band_psnr=band_psnr(est, ref, peak), sam_excluded=excluded)


def write_report_csv(rows, path) -> None:
    """``rows`` is an iterable of ``(image_name, EvalReport)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image", "psnr", "ssim", "sam"])
        for name, rep in rows:
            w.writerow([name, repr(rep.psnr), repr(rep.ssim), repr(rep.sam)])
