"""Spectral cube containers, HSC1 files, spectral CSV tables and patching."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .errors import DataError, FormatError, ShapeError, TruncationError

HSC1_MAGIC = b"HSC1"
_HEADER = struct.Struct("<4sIIId")


@dataclass
class HyperCube:
    """A ``B x Nx x Ny`` band-sequential cube.

    RGB images and compressed features are stored as 3-band cubes.
    ``scale`` is the on-disk payload scale: payload = data * scale.
    """

    data: np.ndarray
    wavelengths: Optional[np.ndarray] = None
    scale: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[0] < 1:
            raise ShapeError(f"expected a (B, Nx, Ny) array, got shape {self.data.shape}")
        if self.wavelengths is None:
            self.wavelengths = np.arange(self.bands, dtype=np.float64)
        self.wavelengths = np.asarray(self.wavelengths, dtype=np.float64).ravel()
        if self.wavelengths.size != self.bands:
            raise ShapeError(
                f"{self.wavelengths.size} wavelengths for {self.bands} bands")
        if self.bands > 1 and not np.all(np.diff(self.wavelengths) > 0):
            raise DataError("wavelengths must be strictly increasing")
        if not np.all(np.isfinite(self.data)):
            raise DataError("cube contains non-finite values")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise DataError(f"scale must be positive and finite, got {self.scale}")

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def with_data(self, data: np.ndarray) -> "HyperCube":
        """Same wavelength grid and scale, new values."""
        return HyperCube(data, self.wavelengths.copy(), self.scale)


@dataclass
class SpectralSensitivity:
    """Camera SSF ``P`` (3 x B). ``v0``/``v1`` are filled by ``split_ssf``."""

    matrix: np.ndarray
    wavelengths: Optional[np.ndarray] = None
    v0: Optional[np.ndarray] = field(default=None, repr=False)
    v1: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != 3:
            raise ShapeError(f"SSF must be 3 x B, got {self.matrix.shape}")
        if self.wavelengths is None:
            self.wavelengths = np.arange(self.bands, dtype=np.float64)
        self.wavelengths = np.asarray(self.wavelengths, dtype=np.float64)

    @property
    def bands(self) -> int:
        return self.matrix.shape[1]

    def normalized(self) -> "SpectralSensitivity":
        """Rows rescaled so a unit flat spectrum renders as (1, 1, 1)."""
        rows = self.matrix.sum(axis=1, keepdims=True)
        return SpectralSensitivity(self.matrix / rows, self.wavelengths.copy())


@dataclass
class Illuminant:
    wavelengths: np.ndarray
    power: np.ndarray

    def __post_init__(self):
        self.wavelengths = np.asarray(self.wavelengths, dtype=np.float64)
        self.power = np.asarray(self.power, dtype=np.float64)
        if self.power.shape != self.wavelengths.shape:
            raise ShapeError("illuminant power and wavelength grids differ")
        if np.any(self.power < 0) or not self.power.max() > 0:
            raise DataError("illuminant power must be nonnegative with a positive maximum")

    def normalized(self) -> "Illuminant":
        return Illuminant(self.wavelengths.copy(), self.power / self.power.max())


@dataclass(frozen=True)
class PatchSpec:
    size: int = 128
    stride: int = 64
    augment: bool = False

    def validate(self, nx: int, ny: int):
        if not 0 < self.size <= min(nx, ny):
            raise ShapeError(f"patch size {self.size} does not fit a {nx}x{ny} image")
        if not 0 < self.stride <= self.size:
            raise ShapeError(f"stride {self.stride} must lie in (0, {self.size}]")


# ---------------------------------------------------------------- HSC1 files

def encode_hsi(cube: HyperCube) -> bytes:
    b, nx, ny = cube.shape
    header = _HEADER.pack(HSC1_MAGIC, b, nx, ny, float(cube.scale))
    wl = cube.wavelengths.astype("<f4").tobytes()
    payload = (cube.data * cube.scale).astype("<f4").tobytes()
    return header + wl + payload


def decode_hsi(raw: bytes) -> HyperCube:
    if len(raw) < _HEADER.size or raw[:4] != HSC1_MAGIC:
        raise FormatError("not an HSC1 file (bad magic or short header)")
    _, b, nx, ny, scale = _HEADER.unpack_from(raw)
    if b < 1 or not (np.isfinite(scale) and scale > 0):
        raise FormatError(f"malformed HSC1 header: B={b}, scale={scale}")
    expected = _HEADER.size + 4 * b + 4 * b * nx * ny
    if len(raw) != expected:
        raise TruncationError(f"HSC1 payload is {len(raw)} bytes, header implies {expected}")
    off = _HEADER.size
    wl = np.frombuffer(raw, dtype="<f4", count=b, offset=off).astype(np.float64)
    vals = np.frombuffer(raw, dtype="<f4", count=b * nx * ny, offset=off + 4 * b)
    if not np.all(np.isfinite(vals)) or not np.all(np.isfinite(wl)):
        raise DataError("HSC1 payload contains non-finite values")
    data = vals.astype(np.float64).reshape(b, nx, ny) / scale
    return HyperCube(data, wl, scale)


def load_hsi(path) -> HyperCube:
    return decode_hsi(Path(path).read_bytes())


def save_hsi(cube: HyperCube, path) -> None:
    Path(path).write_bytes(encode_hsi(cube))


# ---------------------------------------------------------------- CSV tables

def _read_table(path, header: list[str]) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != header:
        raise FormatError(f"{path}: expected header {','.join(header)}")
    try:
        table = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if table.ndim != 2 or table.shape[1] != len(header):
        raise FormatError(f"{path}: ragged rows")
    return table


def load_ssf(path) -> SpectralSensitivity:
    t = _read_table(path, ["wavelength", "r", "g", "b"])
    return SpectralSensitivity(t[:, 1:].T.copy(), t[:, 0])


def save_ssf(ssf: SpectralSensitivity, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("wavelength,r,g,b\n")
        for w, col in zip(ssf.wavelengths, ssf.matrix.T):
            fh.write(f"{w:g},{float(col[0])!r},{float(col[1])!r},{float(col[2])!r}\n")


def load_illuminant(path) -> Illuminant:
    t = _read_table(path, ["wavelength", "power"])
    return Illuminant(t[:, 0], t[:, 1])


def save_illuminant(illum: Illuminant, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("wavelength,power\n")
        for w, p in zip(illum.wavelengths, illum.power):
            fh.write(f"{w:g},{float(p)!r}\n")


_SHIPPED_ILLUMINANTS = {"A": "cie_a.csv", "D65": "cie_d65.csv", "F6": "cie_f6.csv"}


def shipped_illuminant(name: str, normalize: bool = True) -> Illuminant:
    """CIE A, D65 or F6 on 400-700 nm at 10 nm, max-normalized by default."""
    try:
        fname = _SHIPPED_ILLUMINANTS[name.upper()]
    except KeyError:
        raise FormatError(f"unknown illuminant {name!r}") from None
    with resources.as_file(resources.files("unobs.data") / fname) as p:
        illum = load_illuminant(p)
    return illum.normalized() if normalize else illum


def shipped_ssf(normalize: bool = True) -> SpectralSensitivity:
    """Nikon 5100 sensitivities on 400-700 nm at 10 nm."""
    with resources.as_file(resources.files("unobs.data") / "ssf_nikon5100.csv") as p:
        ssf = load_ssf(p)
    return ssf.normalized() if normalize else ssf


# ---------------------------------------------------------------- rendering

def _render(data: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    # mode-1 product over the band axis; works for (B, ...) arrays
    return np.tensordot(matrix, data, axes=(1, 0))


def synthesize_rgb(hsi: HyperCube, ssf: SpectralSensitivity) -> HyperCube:
    if hsi.bands != ssf.bands:
        raise ShapeError(f"cube has {hsi.bands} bands, SSF has {ssf.bands}")
    return HyperCube(_render(hsi.data, ssf.matrix))


def iter_patches(hsi: HyperCube, spec: PatchSpec, seed: int = 0) -> Iterator[HyperCube]:
    """Row-major crops; with ``augment`` each gets a seeded rot90 and optional flip."""
    _, nx, ny = hsi.shape
    spec.validate(nx, ny)
    rng = np.random.default_rng(seed)
    for x0 in range(0, nx - spec.size + 1, spec.stride):
        for y0 in range(0, ny - spec.size + 1, spec.stride):
            patch = hsi.data[:, x0:x0 + spec.size, y0:y0 + spec.size]
            if spec.augment:
                k = int(rng.integers(4))
                flip = bool(rng.integers(2))
                patch = np.rot90(patch, k, axes=(1, 2))
                if flip:
                    patch = patch[:, :, ::-1]
            yield hsi.with_data(np.ascontiguousarray(patch))


def patch_count(n: int, size: int, stride: int) -> int:
    return (n - size) // stride + 1


def to_display(rgb: np.ndarray, gamma: float = 2.2) -> np.ndarray:
    """Linear (3, Nx, Ny) values to 8-bit (Nx, Ny, 3) with a fixed gamma."""
    lin = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)
    enc = lin ** (1.0 / gamma)
    return np.round(enc * 255.0).astype(np.uint8).transpose(1, 2, 0)


def save_png(rgb: np.ndarray, path) -> None:
    from PIL import Image

    Image.fromarray(to_display(rgb), mode="RGB").save(path, format="PNG", optimize=False)
