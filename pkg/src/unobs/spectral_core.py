"""Observable / unobservable split of a spectrum under a 3-channel camera.

With the SVD ``P = U S V^T`` the last B-3 right singular vectors (``v0``)
span the null space of ``P``: anything along them is invisible to the
camera.  The first three (``v1``) span the row space.  Every HSI
consistent with an RGB image is

    particular(rgb) + v0 @ zeta

for a free (B-3)-channel field ``zeta``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConditioningError, DegenerateSSFError, ShapeError
from .hsio import HyperCube, SpectralSensitivity

RANK_TOL = 1e-9
MAX_COND = 1e8


@dataclass
class FeatureSplit:
    observable: np.ndarray        # (3, Nx, Ny), coordinates along v1
    unobservable_raw: np.ndarray  # (B-3, Nx, Ny), coordinates along v0


@dataclass
class SolutionSpace:
    particular: np.ndarray        # (B, Nx, Ny), RGB-consistent lift
    null_basis: np.ndarray        # (B, B-3)

    def member(self, zeta: np.ndarray) -> np.ndarray:
        return self.particular + np.tensordot(self.null_basis, zeta, axes=(1, 0))


def split_ssf(P) -> SpectralSensitivity:
    """Attach orthonormal null-space (``v0``) and row-space (``v1``) bases."""
    ssf = P if isinstance(P, SpectralSensitivity) else SpectralSensitivity(P)
    mat = ssf.matrix
    if mat.shape[1] <= 3:
        raise ShapeError("need more than 3 bands")
    _, s, vt = np.linalg.svd(mat, full_matrices=True)
    if not s[-1] > RANK_TOL * s[0]:
        raise DegenerateSSFError(
            f"SSF is rank deficient (singular values {s[0]:.3g} .. {s[-1]:.3g})")
    return SpectralSensitivity(mat, ssf.wavelengths, v0=vt[3:].T.copy(), v1=vt[:3].T.copy())


def ensure_split(ssf) -> SpectralSensitivity:
    if isinstance(ssf, SpectralSensitivity) and ssf.v0 is not None:
        return ssf
    return split_ssf(ssf)


def _cube_data(x) -> np.ndarray:
    return x.data if isinstance(x, HyperCube) else np.asarray(x, dtype=np.float64)


def extract_features(hsi, ssf) -> FeatureSplit:
    ssf = ensure_split(ssf)
    data = _cube_data(hsi)
    if data.shape[0] != ssf.bands:
        raise ShapeError(f"cube has {data.shape[0]} bands, SSF has {ssf.bands}")
    return FeatureSplit(
        observable=np.tensordot(ssf.v1.T, data, axes=(1, 0)),
        unobservable_raw=np.tensordot(ssf.v0.T, data, axes=(1, 0)),
    )


def combine_features(split: FeatureSplit, ssf) -> np.ndarray:
    ssf = ensure_split(ssf)
    return (np.tensordot(ssf.v1, split.observable, axes=(1, 0))
            + np.tensordot(ssf.v0, split.unobservable_raw, axes=(1, 0)))


def lift_matrix(ssf) -> np.ndarray:
    """B x 3 matrix ``v1 (P v1)^-1`` mapping an RGB pixel to its row-space spectrum."""
    ssf = ensure_split(ssf)
    pv1 = ssf.matrix @ ssf.v1
    if np.linalg.cond(pv1) >= MAX_COND:
        raise ConditioningError(f"P v1 is ill-conditioned (cond {np.linalg.cond(pv1):.3g})")
    return ssf.v1 @ np.linalg.inv(pv1)


def solution_space(rgb, ssf) -> SolutionSpace:
    ssf = ensure_split(ssf)
    rgb = _cube_data(rgb)
    if rgb.shape[0] != 3:
        raise ShapeError(f"expected a 3-channel image, got {rgb.shape[0]} channels")
    return SolutionSpace(np.tensordot(lift_matrix(ssf), rgb, axes=(1, 0)), ssf.v0)


def reconstruct_solution(rgb, zeta, ssf) -> HyperCube:
    """The member of the RGB-consistent solution set with null coordinates ``zeta``.

    ``zeta`` may be a scalar 0 for the minimum-norm member.
    """
    ssf = ensure_split(ssf)
    space = solution_space(rgb, ssf)
    zeta = np.asarray(zeta, dtype=np.float64)
    if zeta.ndim == 0:
        zeta = np.full((ssf.bands - 3,) + space.particular.shape[1:], float(zeta))
    if zeta.shape != (ssf.bands - 3,) + space.particular.shape[1:]:
        raise ShapeError(f"zeta has shape {zeta.shape}, expected "
                         f"{(ssf.bands - 3,) + space.particular.shape[1:]}")
    return HyperCube(space.member(zeta), ssf.wavelengths)
