"""Closed-form references for checking the learned pipeline.

* synthetic HSIs whose spectra lie on a low-dimensional linear manifold,
* exact reconstruction when that manifold is 3-dimensional,
* the RGB-consistent solution set when it is larger,
* the posterior-mean denoiser for a Gaussian prior, a brute-force quadrature
  version of it, and the affine map DDIM induces under that prior.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConditioningError, DegenerateSSFError, DomainError, ShapeError
from .hsio import HyperCube, SpectralSensitivity
from .spectral_core import MAX_COND, reconstruct_solution

DEFAULT_WAVELENGTHS = np.arange(400.0, 701.0, 10.0)


def _rgb(x):
    return x.data if isinstance(x, HyperCube) else np.asarray(x, dtype=np.float64)


def _P(ssf):
    return ssf.matrix if isinstance(ssf, SpectralSensitivity) else np.asarray(ssf, dtype=np.float64)


# ------------------------------------------------------- synthetic manifolds

@dataclass
class SyntheticManifold:
    """Spectra ``generators @ x`` with ``x >= 0``; ``basis`` is an orthonormal
    basis of the same span."""

    basis: np.ndarray        # (B, L)
    generators: np.ndarray   # (B, L), nonnegative smooth spectra
    seed: int
    wavelengths: np.ndarray

    @property
    def dim(self) -> int:
        return self.basis.shape[1]


def _smooth_spectra(rng, wavelengths, count):
    span = wavelengths[-1] - wavelengths[0]
    out = np.empty((wavelengths.size, count))
    for j in range(count):
        s = np.full(wavelengths.size, rng.uniform(0.02, 0.1))
        for _ in range(rng.integers(1, 4)):
            c = rng.uniform(wavelengths[0] - 0.1 * span, wavelengths[-1] + 0.1 * span)
            w = rng.uniform(0.1, 0.4) * span
            s += rng.uniform(0.3, 1.0) * np.exp(-0.5 * ((wavelengths - c) / w) ** 2)
        out[:, j] = s
    return out


def make_manifold(dim: int, seed: int, wavelengths=None, ssf=None) -> SyntheticManifold:
    """Random smooth nonnegative spectral manifold of dimension ``dim``.

    With ``ssf`` given and ``dim == 3`` the draw is repeated until ``P U`` is
    well conditioned.
    """
    wl = DEFAULT_WAVELENGTHS if wavelengths is None else np.asarray(wavelengths, float)
    if not 1 <= dim <= wl.size:
        raise ShapeError(f"manifold dimension {dim} out of range for {wl.size} bands")
    rng = np.random.default_rng(seed)
    for _ in range(100):
        gen = _smooth_spectra(rng, wl, dim)
        q, r = np.linalg.qr(gen)
        if np.abs(np.diag(r)).min() < 1e-6 * np.abs(np.diag(r)).max():
            continue
        if ssf is not None and dim == 3 and np.linalg.cond(_P(ssf) @ q) >= 1e6:
            continue
        return SyntheticManifold(q, gen, seed, wl)
    raise DegenerateSSFError("could not draw a well-conditioned manifold")


def make_mixture(dims=(3, 4, 5, 6), seed=0, wavelengths=None, ssf=None) -> list:
    return [make_manifold(d, seed * 1000 + i, wavelengths, ssf) for i, d in enumerate(dims)]


def coefficient_fields(dim, size, rng, field_sigma: Optional[float] = 4.0):
    """``(dim, size, size)`` smooth fields in [0, 1]; constant when ``field_sigma`` is None."""
    if field_sigma is None:
        return np.broadcast_to(rng.uniform(0.2, 1.0, (dim, 1, 1)), (dim, size, size)).copy()
    raw = rng.random((dim, size, size))
    out = np.empty_like(raw)
    for j in range(dim):
        f = gaussian_filter(raw[j], field_sigma, mode="wrap")
        lo, hi = f.min(), f.max()
        out[j] = (f - lo) / (hi - lo)
    return out


def sample_manifold_hsi(m: SyntheticManifold, size: int, seed: int,
                        field_sigma: Optional[float] = 4.0) -> HyperCube:
    """A ``size x size`` cube whose every spectrum lies in ``span(m.basis)``,
    scaled so its maximum is 1."""
    rng = np.random.default_rng(seed)
    x = coefficient_fields(m.dim, size, rng, field_sigma)
    cube = np.tensordot(m.generators, x, axes=(1, 0))
    return HyperCube(cube / cube.max(), m.wavelengths)


def mixture_dataset(manifolds, count, size, seed, field_sigma=4.0):
    """``count`` cubes, cube ``i`` drawn from manifold ``i % len(manifolds)``."""
    seeds = np.random.SeedSequence(seed).generate_state(count)
    return [sample_manifold_hsi(manifolds[i % len(manifolds)], size, int(s), field_sigma)
            for i, s in enumerate(seeds)]


# ------------------------------------------------ exact and set-valued SR

def exact_manifold_reconstruct(rgb, U, P) -> HyperCube:
    """``U (P U)^-1 rgb`` per pixel; exact for cubes from a 3-dim manifold."""
    U = np.asarray(U, dtype=np.float64)
    A = _P(P) @ U
    if A.shape != (3, 3):
        raise ShapeError(f"manifold must be 3-dimensional, got {U.shape[1]}")
    if np.linalg.cond(A) >= MAX_COND:
        raise ConditioningError("P U is singular")
    coeffs = np.tensordot(np.linalg.inv(A), _rgb(rgb), axes=(1, 0))
    return HyperCube(np.tensordot(U, coeffs, axes=(1, 0)))


def manifold_null_basis(U, P, tol=1e-10) -> np.ndarray:
    """Orthonormal basis ``N`` (L x (L-3)) of ``null(P U)``."""
    A = _P(P) @ np.asarray(U, dtype=np.float64)
    _, s, vt = np.linalg.svd(A, full_matrices=True)
    rank = int((s > tol * s[0]).sum())
    if rank < 3 or vt.shape[0] - rank < 1:
        raise DomainError(f"P U has rank {rank}; no 3-dim image with a nontrivial null space")
    return vt[rank:].T.copy()


def solution_space_sample(rgb, U, P, zeta) -> HyperCube:
    """Member ``U (P U)^+ rgb + U N zeta`` of the solution set on the manifold."""
    U = np.asarray(U, dtype=np.float64)
    if U.shape[1] <= 3:
        raise ShapeError("solution set sampling needs a manifold of dimension > 3")
    A = _P(P) @ U
    N = manifold_null_basis(U, P)
    rgb = _rgb(rgb)
    zeta = np.asarray(zeta, dtype=np.float64)
    if zeta.ndim == 0:
        zeta = np.full((N.shape[1],) + rgb.shape[1:], float(zeta))
    coeffs = (np.tensordot(np.linalg.pinv(A), rgb, axes=(1, 0))
              + np.tensordot(N, zeta, axes=(1, 0)))
    return HyperCube(np.tensordot(U, coeffs, axes=(1, 0)))


def pseudo_inverse_baseline(rgb, ssf) -> HyperCube:
    """The minimum-norm RGB-consistent HSI (no unobservable information)."""
    return reconstruct_solution(rgb, 0.0, ssf)


# ------------------------------------------------------- Gaussian toy prior

@dataclass
class GaussianToyPrior:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        d = self.mean.size
        if self.cov.shape != (d, d):
            raise ShapeError(f"covariance must be {d}x{d}")
        if not np.allclose(self.cov, self.cov.T):
            raise DomainError("covariance is not symmetric")
        if np.linalg.eigvalsh(self.cov).min() < -1e-12 * max(1.0, abs(self.cov).max()):
            raise DomainError("covariance is not positive semi-definite")

    @property
    def dim(self) -> int:
        return self.mean.size

    def sample(self, n, rng):
        return rng.multivariate_normal(self.mean, self.cov, size=n)


def _abar(sched, t):
    return float(sched.alpha_bar(t))


def gaussian_posterior_mean(prior: GaussianToyPrior, z_t, t, sched) -> np.ndarray:
    """``E[z0 | z_t]`` under ``z_t = sqrt(abar) z0 + sqrt(1 - abar) eps``.

    ``z_t`` has shape ``(..., d)``.
    """
    ab = _abar(sched, t)
    a = np.sqrt(ab)
    d = prior.dim
    cov = prior.cov + 1e-12 * np.eye(d)
    S = a * a * cov + (1.0 - ab) * np.eye(d)
    gain = a * cov @ np.linalg.inv(S)       # Sigma A^T (A Sigma A^T + (1-abar) I)^-1
    z = np.asarray(z_t, dtype=np.float64)
    return prior.mean + (z - a * prior.mean) @ gain.T


def gaussian_posterior_denoiser(prior: GaussianToyPrior, z_t, t, sched) -> np.ndarray:
    """The optimal noise prediction ``(z_t - sqrt(abar) E[z0|z_t]) / sqrt(1 - abar)``."""
    ab = _abar(sched, t)
    z = np.asarray(z_t, dtype=np.float64)
    return (z - np.sqrt(ab) * gaussian_posterior_mean(prior, z, t, sched)) / np.sqrt(1.0 - ab)


def quadrature_posterior_mean(prior: GaussianToyPrior, z_t, t, sched, points=401,
                              width=6.0) -> np.ndarray:
    """Brute-force ``E[z0 | z_t]`` on a tensor grid spanning mean +- width * sd.

    Evaluates prior density times likelihood at every node; independent of
    the closed form above.
    """
    d = prior.dim
    sd = np.sqrt(np.diag(prior.cov))
    axes = [np.linspace(prior.mean[i] - width * sd[i], prior.mean[i] + width * sd[i], points)
            for i in range(d)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    ab = _abar(sched, t)
    diff = grid - prior.mean
    prec = np.linalg.inv(prior.cov)
    log_prior = -0.5 * np.einsum("ni,ij,nj->n", diff, prec, diff)
    resid = np.asarray(z_t, dtype=np.float64) - np.sqrt(ab) * grid
    log_like = -0.5 * np.sum(resid * resid, axis=1) / (1.0 - ab)
    logw = log_prior + log_like
    w = np.exp(logw - logw.max())
    return (w[:, None] * grid).sum(axis=0) / w.sum()


def ddim_gaussian_affine(prior: GaussianToyPrior, sched, timesteps):
    """Deterministic DDIM with the exact denoiser is affine for a Gaussian prior.

    Returns ``(M, c)`` with ``z_out = M z_T + c`` following ``timesteps``
    (descending, ending at the final step before t = 0).  The output
    distribution for ``z_T ~ N(0, I)`` is ``N(c, M M^T)``.
    """
    d = prior.dim
    M = np.eye(d)
    c = np.zeros(d)
    cov = prior.cov + 1e-12 * np.eye(d)
    ts = [int(t) for t in timesteps]
    for i, t in enumerate(ts):
        ab = _abar(sched, t)
        ab_prev = _abar(sched, ts[i + 1]) if i + 1 < len(ts) else 1.0
        a = np.sqrt(ab)
        gain = a * cov @ np.linalg.inv(a * a * cov + (1.0 - ab) * np.eye(d))
        # x0_hat = mu + G (z - a mu);  eps_hat = (z - a x0_hat) / s
        G0 = gain
        g0 = prior.mean - gain @ (a * prior.mean)
        s = np.sqrt(1.0 - ab)
        Ge = (np.eye(d) - a * G0) / s
        ge = -a * g0 / s
        step = np.sqrt(ab_prev) * G0 + np.sqrt(1.0 - ab_prev) * Ge
        off = np.sqrt(ab_prev) * g0 + np.sqrt(1.0 - ab_prev) * ge
        M = step @ M
        c = step @ c + off
    return M, c
