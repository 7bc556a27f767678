"""Self-checks behind ``unobs oracle-check``.

Each suite returns a list of ``{name, pass, value, tol}`` records.
"""
from __future__ import annotations

import math

import numpy as np

from . import hsio, metrics, oracle, spectral_core, uldm


def _check(name, value, tol, ok=None):
    value = float(value)
    passed = bool(value <= tol) if ok is None else bool(ok)
    return {"name": name, "pass": passed, "value": value, "tol": float(tol)}


def ssf_suite(seed=0, count=100, bands=31):
    rng = np.random.default_rng(seed)
    worst_null, worst_orth, worst_rgb = 0.0, 0.0, 0.0
    for _ in range(count):
        P = rng.random((3, bands))
        ssf = spectral_core.split_ssf(P)
        worst_null = max(worst_null, np.linalg.norm(P @ ssf.v0) / np.linalg.norm(P))
        worst_orth = max(worst_orth, abs(ssf.v0.T @ ssf.v0 - np.eye(bands - 3)).max())
        rgb = rng.random((3, 4, 4))
        zeta = rng.standard_normal((bands - 3, 4, 4))
        out = spectral_core.reconstruct_solution(rgb, zeta, ssf)
        worst_rgb = max(worst_rgb, abs(hsio.synthesize_rgb(out, ssf).data - rgb).max())
    return [_check("null_space_residual", worst_null, 1e-10),
            _check("null_basis_orthonormal", worst_orth, 1e-12),
            _check("solution_rgb_consistency", worst_rgb, 1e-8)]


def manifold_suite(seed=0, count=5, size=16):
    ssf = hsio.shipped_ssf()
    m3 = oracle.make_manifold(3, seed, ssf=ssf)
    worst = 0.0
    for k in range(count):
        cube = oracle.sample_manifold_hsi(m3, size, seed + k)
        est = oracle.exact_manifold_reconstruct(hsio.synthesize_rgb(cube, ssf), m3.basis, ssf)
        worst = max(worst, abs(est.data - cube.data).max())
    m6 = oracle.make_manifold(6, seed + 1)
    cube = oracle.sample_manifold_hsi(m6, size, seed)
    rgb = hsio.synthesize_rgb(cube, ssf)
    rng = np.random.default_rng(seed)
    n = m6.dim - 3
    a = oracle.solution_space_sample(rgb, m6.basis, ssf, rng.standard_normal((n, size, size)))
    b = oracle.solution_space_sample(rgb, m6.basis, ssf, rng.standard_normal((n, size, size)))
    rms = math.sqrt(float(np.mean((a.data - b.data) ** 2)))
    render_gap = abs(hsio.synthesize_rgb(a, ssf).data - hsio.synthesize_rgb(b, ssf).data).max()
    return [_check("exact_reconstruction_max_abs", worst, 1e-8),
            _check("solution_set_spread_rms", rms, 1e-2, ok=rms >= 1e-2),
            _check("solution_set_render_gap", render_gap, 1e-10)]


def posterior_suite(seed=0, draws=4000):
    sched = uldm.make_schedule()
    prior = oracle.GaussianToyPrior([0.3, -0.2], [[0.5, 0.2], [0.2, 0.3]])
    rng = np.random.default_rng(seed)
    worst_quad, worst_id = 0.0, 0.0
    for t in (10, 250, 600):
        z = rng.standard_normal(2)
        mean = oracle.gaussian_posterior_mean(prior, z, t, sched)
        worst_quad = max(worst_quad, abs(mean - oracle.quadrature_posterior_mean(
            prior, z, t, sched)).max())
        eps = oracle.gaussian_posterior_denoiser(prior, z, t, sched)
        ab = float(sched.alpha_bar(t))
        worst_id = max(worst_id, abs(math.sqrt(ab) * mean + math.sqrt(1 - ab) * eps - z).max())
    ts = sched.ddim_timesteps(20)
    M, c = oracle.ddim_gaussian_affine(prior, sched, ts)
    eps_fn = lambda x, t, _c: oracle.gaussian_posterior_denoiser(prior, x, t, sched)
    out = uldm.ddim_sample(np.zeros((draws, 2)), eps_fn, sched, seed, 20)
    pred_cov = M @ M.T
    se = np.sqrt(np.diag(pred_cov) / draws)
    mean_z = float(np.max(np.abs(out.mean(axis=0) - c) / se))
    return [_check("posterior_mean_vs_quadrature", worst_quad, 1e-6),
            _check("tweedie_identity", worst_id, 1e-12),
            _check("ddim_mean_vs_affine_prediction_sigmas", mean_z, 3.0)]


def _loop_psnr(e, r):
    tot, n = 0.0, 0
    for v in np.ndindex(e.shape):
        tot += (e[v] - r[v]) ** 2
        n += 1
    return 10 * math.log10(1.0 / (tot / n))


def _loop_sam(e, r):
    angs = []
    for x in range(e.shape[1]):
        for y in range(e.shape[2]):
            a, b = e[:, x, y], r[:, x, y]
            dot = sum(a[i] * b[i] for i in range(a.size))
            na = math.sqrt(sum(v * v for v in a))
            nb = math.sqrt(sum(v * v for v in b))
            angs.append(math.degrees(math.acos(max(-1.0, min(1.0, dot / (na * nb))))))
    return sum(angs) / len(angs)


def loop_ssim(e, r, win=7, sigma=1.5, k1=0.01, k2=0.03):
    """Straight-loop SSIM (valid windows, biased statistics)."""
    off = [i - (win - 1) / 2 for i in range(win)]
    g1 = [math.exp(-o * o / (2 * sigma * sigma)) for o in off]
    s = sum(g1)
    g = [[g1[i] * g1[j] / (s * s) for j in range(win)] for i in range(win)]
    c1, c2 = k1 * k1, k2 * k2
    total, count = 0.0, 0
    for b in range(e.shape[0]):
        band_sum, band_n = 0.0, 0
        for x in range(e.shape[1] - win + 1):
            for y in range(e.shape[2] - win + 1):
                mx = my = sxx = syy = sxy = 0.0
                for i in range(win):
                    for j in range(win):
                        w = g[i][j]
                        a, c = e[b, x + i, y + j], r[b, x + i, y + j]
                        mx += w * a
                        my += w * c
                        sxx += w * a * a
                        syy += w * c * c
                        sxy += w * a * c
                vx, vy, cxy = sxx - mx * mx, syy - my * my, sxy - mx * my
                band_sum += ((2 * mx * my + c1) * (2 * cxy + c2)
                             / ((mx * mx + my * my + c1) * (vx + vy + c2)))
                band_n += 1
        total += band_sum / band_n
        count += 1
    return total / count


def metrics_suite(seed=0):
    rng = np.random.default_rng(seed)
    ref = rng.random((4, 8, 8)) + 0.05
    est = np.clip(ref + 0.05 * rng.standard_normal(ref.shape), 0.01, None)
    return [
        _check("psnr_vs_loop", abs(metrics.psnr(est, ref) - _loop_psnr(est, ref)), 1e-10),
        _check("sam_vs_loop", abs(metrics.sam(est, ref) - _loop_sam(est, ref)), 1e-10),
        _check("ssim_vs_loop", abs(metrics.ssim(est, ref, win_size=7)
                                   - loop_ssim(est, ref, 7)), 1e-10),
        _check("sam_scale_invariance", metrics.sam(3.0 * ref, ref), 1e-10),
        _check("ssim_self", abs(metrics.ssim(ref, ref, win_size=7) - 1.0), 1e-12),
    ]


SUITES = {"ssf": ssf_suite, "manifold": manifold_suite, "posterior": posterior_suite,
          "metrics": metrics_suite}


def run_suite(name, seed=0) -> dict:
    return {"suite": name, "checks": SUITES[name](seed=seed)}
