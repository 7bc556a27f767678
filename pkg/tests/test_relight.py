import numpy as np
import pytest
from hypothesis import given, strategies as st

from unobs import hsio, relight
from unobs.errors import ShapeError, UnusableIlluminantError, ZeroGainError

WL = np.arange(400.0, 701.0, 10.0)


def _scene(rng):
    refl = rng.uniform(0.05, 0.95, (31, 6, 6))
    return refl


def _job(rng, src, dst, ssf, refl, thr=0.1):
    lit = refl * src.power[:, None, None]
    rgb = np.tensordot(ssf.matrix, lit, axes=(1, 0))
    return relight.RelightJob(rgb, src, dst, ssf, lambda _x: lit, thr), lit


def test_same_light_is_identity(rng):
    ssf = hsio.shipped_ssf()
    d65 = hsio.shipped_illuminant("D65")
    job, _ = _job(rng, d65, d65, ssf, _scene(rng))
    out = relight.relight_hsi(job)
    assert np.abs(out - job.input_rgb).max() < 1e-10


def test_oracle_relight_is_exact(rng):
    ssf = hsio.shipped_ssf()
    src, dst = hsio.shipped_illuminant("A"), hsio.shipped_illuminant("D65")
    refl = _scene(rng)
    # below A's dimmest band, so no band is interpolated
    job, _ = _job(rng, src, dst, ssf, refl, thr=0.5 * src.power.min())
    truth = np.tensordot(ssf.matrix, refl * dst.power[:, None, None], axes=(1, 0))
    assert np.abs(relight.relight_hsi(job) - truth).max() < 1e-10


def test_threshold_interpolates_dark_bands():
    l = np.ones(5); l[2] = 0.0
    refl = np.array([1.0, 2.0, 99.0, 4.0, 5.0])[:, None, None]
    out = relight.recover_reflectance(refl * l[:, None, None], l, 0.1, np.arange(5.0))
    assert np.allclose(out[:, 0, 0], [1, 2, 3, 4, 5])


def test_edge_bands_held_flat():
    l = np.array([0.0, 1.0, 1.0, 0.0])
    lit = np.array([0.0, 2.0, 3.0, 0.0])[:, None, None]
    out = relight.recover_reflectance(lit, l, 0.5, np.arange(4.0))
    assert np.allclose(out[:, 0, 0], [2, 2, 3, 3])


def test_interpolation_matrix_identity_on_kept():
    keep = np.array([1, 0, 1, 1, 0], bool)
    W = relight.interpolation_matrix(np.arange(5.0), keep)
    assert W.shape == (5, 3)
    assert np.array_equal(W[keep], np.eye(3))
    assert np.allclose(W.sum(axis=1), 1.0)


def test_no_usable_band():
    with pytest.raises(UnusableIlluminantError):
        relight.recover_reflectance(np.ones((3, 1, 1)), np.zeros(3), 0.1)


def test_band_mismatch(rng):
    ssf = hsio.shipped_ssf()
    d = hsio.shipped_illuminant("D65")
    job = relight.RelightJob(np.ones((3, 2, 2)), d, d, ssf, lambda _x: np.ones((30, 2, 2)))
    with pytest.raises(ShapeError):
        relight.relight_hsi(job)


def test_rgb_re_gain():
    ssf = hsio.shipped_ssf()
    src, dst = hsio.shipped_illuminant("A"), hsio.shipped_illuminant("D65")
    rgb = np.ones((3, 2, 2))
    gains = (ssf.matrix @ dst.power) / (ssf.matrix @ src.power)
    assert np.allclose(relight.rgb_re(rgb, src, dst, ssf)[:, 0, 0], gains)


def test_rgb_re_zero_gain():
    ssf = hsio.shipped_ssf()
    with pytest.raises(ZeroGainError):
        relight.rgb_re(np.ones((3, 1, 1)), np.zeros(31), np.ones(31), ssf)


def test_gray_world_equalizes_means(rng):
    out = relight.gray_world(rng.random((3, 5, 5)) * np.array([1, 2, 3])[:, None, None])
    m = out.mean(axis=(1, 2))
    assert np.allclose(m, m[0])
    with pytest.raises(ZeroGainError):
        relight.gray_world(np.zeros((3, 2, 2)))


def test_perfect_reflector(rng):
    out = relight.perfect_reflector(rng.random((3, 5, 5)) + 0.1)
    assert np.allclose(out.max(axis=(1, 2)), 1.0)
    with pytest.raises(ZeroGainError):
        relight.perfect_reflector(np.zeros((3, 2, 2)))


def test_bad_threshold():
    d = np.ones(31)
    with pytest.raises(ValueError):
        relight.RelightJob(np.ones((3, 1, 1)), d, d, hsio.shipped_ssf(), lambda x: x, 0.0)


@given(st.floats(0.01, 0.9), st.integers(0, 2**31))
def test_oracle_exact_for_any_threshold_when_light_is_flat(thr, seed):
    rng = np.random.default_rng(seed)
    ssf = hsio.shipped_ssf()
    flat = hsio.Illuminant(WL, np.ones(31))
    dst = hsio.shipped_illuminant("F6")
    refl = rng.uniform(0, 1, (31, 2, 2))
    job, _ = _job(rng, flat, dst, ssf, refl, thr)
    truth = np.tensordot(ssf.matrix, refl * dst.power[:, None, None], axes=(1, 0))
    assert np.abs(relight.relight_hsi(job) - truth).max() < 1e-10
