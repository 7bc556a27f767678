import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from unobs import hsio
from unobs.errors import DataError, FormatError, ShapeError, TruncationError
from unobs.hsio import HyperCube, PatchSpec, SpectralSensitivity

WL = np.arange(400.0, 701.0, 10.0)


def _cube(rng, b=31, nx=4, ny=5):
    return HyperCube(rng.random((b, nx, ny)), WL[:b] if b <= 31 else None)


def test_roundtrip_is_byte_identical(tmp_path, rng):
    f = tmp_path / "a.hsc"
    hsio.save_hsi(_cube(rng), f)
    raw = f.read_bytes()
    hsio.save_hsi(hsio.load_hsi(f), tmp_path / "b.hsc")
    assert (tmp_path / "b.hsc").read_bytes() == raw


def test_zero_cube_loads_as_zeros(tmp_path):
    f = tmp_path / "z.hsc"
    hsio.save_hsi(HyperCube(np.zeros((31, 4, 4)), WL), f)
    cube = hsio.load_hsi(f)
    assert cube.bands == 31 and not cube.data.any()


def test_wavelengths_read_back_exactly(tmp_path, rng):
    f = tmp_path / "w.hsc"
    hsio.save_hsi(_cube(rng), f)
    back = hsio.load_hsi(f)
    assert back.bands == 31
    assert np.array_equal(back.wavelengths, WL)


def test_header_layout(rng):
    raw = hsio.encode_hsi(HyperCube(rng.random((2, 3, 4)), scale=2.0))
    magic, b, nx, ny, scale = struct.unpack_from("<4sIIId", raw)
    assert (magic, b, nx, ny, scale) == (b"HSC1", 2, 3, 4, 2.0)
    assert len(raw) == 24 + 4 * 2 + 4 * 24


def test_scale_normalizes_payload(rng):
    data = rng.random((2, 3, 3)).astype(np.float32).astype(np.float64)
    raw = hsio.encode_hsi(HyperCube(data, scale=4.0))
    payload = np.frombuffer(raw, "<f4", offset=24 + 8)
    assert np.allclose(payload.reshape(data.shape), 4.0 * data)
    assert np.allclose(hsio.decode_hsi(raw).data, data, atol=1e-7)


def test_bad_magic():
    with pytest.raises(FormatError):
        hsio.decode_hsi(b"XXXX" + bytes(40))


def test_truncated_payload(rng):
    raw = hsio.encode_hsi(_cube(rng))
    with pytest.raises(TruncationError):
        hsio.decode_hsi(raw[:-4])


def test_nonfinite_payload(rng):
    raw = bytearray(hsio.encode_hsi(HyperCube(np.zeros((1, 2, 2)))))
    raw[-4:] = np.array([np.nan], "<f4").tobytes()
    with pytest.raises(DataError):
        hsio.decode_hsi(bytes(raw))


def test_cube_invariants():
    with pytest.raises(ShapeError):
        HyperCube(np.zeros((4, 4)))
    with pytest.raises(DataError):
        HyperCube(np.zeros((2, 1, 1)), [500.0, 400.0])
    with pytest.raises(DataError):
        HyperCube(np.full((1, 1, 1), np.inf))


@given(arrays(np.float32, (3, 2, 2), elements=st.floats(0, 1, width=32)))
def test_roundtrip_property(data):
    cube = HyperCube(data.astype(np.float64))
    raw = hsio.encode_hsi(cube)
    assert hsio.encode_hsi(hsio.decode_hsi(raw)) == raw


# ------------------------------------------------------------------ tables

def test_ssf_csv_roundtrip(tmp_path, rng):
    ssf = SpectralSensitivity(rng.random((3, 31)), WL)
    hsio.save_ssf(ssf, tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "wavelength,r,g,b"
    back = hsio.load_ssf(tmp_path / "s.csv")
    assert np.array_equal(back.matrix, ssf.matrix)
    assert np.array_equal(back.wavelengths, WL)


def test_illuminant_csv_roundtrip(tmp_path, rng):
    il = hsio.Illuminant(WL, rng.random(31))
    hsio.save_illuminant(il, tmp_path / "l.csv")
    back = hsio.load_illuminant(tmp_path / "l.csv")
    assert np.array_equal(back.power, il.power)


def test_csv_bad_header(tmp_path):
    (tmp_path / "x.csv").write_text("wl,power\n400,1\n")
    with pytest.raises(FormatError):
        hsio.load_illuminant(tmp_path / "x.csv")


@pytest.mark.parametrize("name", ["A", "D65", "F6"])
def test_shipped_illuminants(name):
    il = hsio.shipped_illuminant(name)
    assert il.power.size == 31 and il.power.max() == 1.0
    assert np.array_equal(il.wavelengths, WL)


def test_shipped_d65_shape():
    raw = hsio.shipped_illuminant("D65", normalize=False).power
    # tabulated D65 is 100 at 560 nm
    assert raw[16] == pytest.approx(100.0)


def test_shipped_ssf_renders_flat_as_white():
    ssf = hsio.shipped_ssf()
    assert np.allclose(ssf.matrix.sum(axis=1), 1.0)
    assert np.all(ssf.matrix >= 0)


# ------------------------------------------------------------------ rendering

def test_rgb_identity_ssf(rng):
    P = np.zeros((3, 31))
    P[:, :3] = np.eye(3)
    cube = _cube(rng)
    rgb = hsio.synthesize_rgb(cube, SpectralSensitivity(P))
    assert np.array_equal(rgb.data, cube.data[:3])


def test_rgb_of_zero():
    rgb = hsio.synthesize_rgb(HyperCube(np.zeros((31, 2, 2))), hsio.shipped_ssf())
    assert not rgb.data.any()


def test_rgb_matches_triple_loop(rng):
    cube = _cube(rng, nx=3, ny=2)
    P = rng.random((3, 31))
    out = hsio.synthesize_rgb(cube, SpectralSensitivity(P)).data
    ref = np.zeros((3, 3, 2))
    for c in range(3):
        for x in range(3):
            for y in range(2):
                for b in range(31):
                    ref[c, x, y] += P[c, b] * cube.data[b, x, y]
    assert np.abs(out - ref).max() < 1e-12


def test_rgb_band_mismatch(rng):
    with pytest.raises(ShapeError):
        hsio.synthesize_rgb(_cube(rng, b=30), hsio.shipped_ssf())


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31))
def test_rgb_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    P = SpectralSensitivity(rng.random((3, 31)))
    X, Y = rng.random((2, 31, 3, 3))
    lhs = hsio.synthesize_rgb(HyperCube(a * X + b * Y), P).data
    rhs = a * hsio.synthesize_rgb(HyperCube(X), P).data + b * hsio.synthesize_rgb(HyperCube(Y), P).data
    assert np.abs(lhs - rhs).max() < 1e-12


# ------------------------------------------------------------------ patches

def test_single_patch():
    cube = HyperCube(np.zeros((1, 128, 128)))
    assert len(list(hsio.iter_patches(cube, PatchSpec(128, 64)))) == 1


def test_nine_patches():
    cube = HyperCube(np.zeros((1, 256, 256)))
    assert len(list(hsio.iter_patches(cube, PatchSpec(128, 64)))) == 9
    assert hsio.patch_count(256, 128, 64) == 3


def test_patches_deterministic(rng):
    cube = HyperCube(rng.random((2, 16, 16)))
    spec = PatchSpec(8, 4, augment=True)
    a = [p.data for p in hsio.iter_patches(cube, spec, seed=3)]
    b = [p.data for p in hsio.iter_patches(cube, spec, seed=3)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_augmented_patch_is_dihedral_image(rng):
    cube = HyperCube(rng.random((1, 8, 8)))
    plain = next(hsio.iter_patches(cube, PatchSpec(8, 8))).data[0]
    aug = next(hsio.iter_patches(cube, PatchSpec(8, 8, augment=True), seed=5)).data[0]
    images = [np.rot90(plain, k) for k in range(4)]
    images += [im[:, ::-1] for im in images]
    assert any(np.array_equal(aug, im) for im in images)


def test_patch_too_large():
    with pytest.raises(ShapeError):
        list(hsio.iter_patches(HyperCube(np.zeros((1, 8, 8))), PatchSpec(16, 8)))


@given(st.integers(1, 4), st.integers(1, 4))
def test_stride_equal_size_partitions(nx, ny):
    size = 4
    cube = HyperCube(np.arange(nx * ny * size * size, dtype=float).reshape(1, nx * size, ny * size))
    seen = np.concatenate([p.data.ravel() for p in hsio.iter_patches(cube, PatchSpec(size, size))])
    assert np.array_equal(np.sort(seen), cube.data.ravel())


def test_png_preview(tmp_path):
    from PIL import Image

    hsio.save_png(np.zeros((3, 4, 5)), tmp_path / "p.png")
    im = np.asarray(Image.open(tmp_path / "p.png"))
    assert im.shape == (4, 5, 3) and not im.any()


def test_display_gamma():
    out = hsio.to_display(np.full((3, 1, 1), 0.5))
    assert out[0, 0, 0] == round(255 * 0.5 ** (1 / 2.2))
