import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unobs import nn
from unobs.errors import DivergenceError, FormatError, FrozenError, ShapeError, TapeError, TruncationError
from unobs.nn import checkpoint, kernels


def fd_check(stack, x, wrt="params", h=1e-6, n=12, seed=0):
    """Max relative error between analytic and central-difference gradients of sum(y * r)."""
    rng = np.random.default_rng(seed)
    y, _ = nn.forward(stack, x)
    r = rng.standard_normal(y.shape)
    loss = lambda: float((stack(x) * r).sum())
    _, tape = nn.forward(stack, x)
    g = nn.backward(stack, tape, r, wrt=wrt)
    target = stack.params.copy() if wrt == "params" else x
    idx = rng.choice(target.size, size=min(n, target.size), replace=False)
    worst = 0.0
    for i in idx:
        if wrt == "params":
            p = target.copy(); p[i] += h; stack.set_params(p); up = loss()
            p[i] -= 2 * h; stack.set_params(p); dn = loss()
            stack.set_params(target)
        else:
            flat = x.reshape(-1)
            old = flat[i]; flat[i] = old + h; up = loss()
            flat[i] = old - h; dn = loss(); flat[i] = old
        num = (up - dn) / (2 * h)
        ana = g.reshape(-1)[i]
        worst = max(worst, abs(num - ana) / max(1.0, abs(num), abs(ana)))
    return worst


def test_dense_gradients(rng):
    s = nn.mlp([5, 7, 3], "tanh", "tanh01", seed=1)
    x = rng.standard_normal((4, 5))
    assert fd_check(s, x) < 1e-6
    assert fd_check(s, x, "input") < 1e-6


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_gradients(rng, stride):
    s = nn.LayerStack([nn.Conv2d(2, 3, stride=stride), nn.Activation("tanh"), nn.Conv2d(3, 2)], seed=2)
    x = rng.standard_normal((2, 2, 6, 6))
    assert fd_check(s, x) < 1e-6
    assert fd_check(s, x, "input") < 1e-6


def test_updown_skip_gradients(rng):
    s = nn.LayerStack([nn.Skip("a"), nn.Conv2d(2, 3), nn.Downsample(2), nn.Upsample(2),
                       nn.ConcatSkip("a", 2), nn.Conv2d(5, 1)], seed=3)
    x = rng.standard_normal((1, 2, 4, 4))
    assert fd_check(s, x) < 1e-6
    assert fd_check(s, x, "input") < 1e-6


def test_conv_against_direct_sum(rng):
    conv = nn.Conv2d(2, 1)
    s = nn.LayerStack([conv], seed=0)
    x = rng.standard_normal((1, 2, 4, 5))
    w = s.layer_params(0)[0].reshape(2, 3, 3, 1)[..., 0]
    xp = np.pad(x[0], ((0, 0), (1, 1), (1, 1)))
    ref = np.array([[np.sum(w * xp[:, i:i + 3, j:j + 3]) for j in range(5)] for i in range(4)])
    assert np.abs(s(x)[0, 0] - ref).max() < 1e-12


def test_init_is_seeded_glorot():
    a, b = nn.mlp([4, 8, 2], seed=5), nn.mlp([4, 8, 2], seed=5)
    assert np.array_equal(a.params, b.params)
    w, bias = a.layer_params(0)
    bound = np.sqrt(6 / 12)
    assert np.abs(w).max() <= bound and not bias.any()


def test_frozen_stack():
    s = nn.mlp([2, 2]).freeze()
    with pytest.raises(FrozenError):
        s.set_params(np.zeros(s.n_params))
    y, tape = nn.forward(s, np.ones((1, 2)))
    with pytest.raises(FrozenError):
        nn.backward(s, tape, np.ones_like(y))
    assert nn.backward(s, tape, np.ones_like(y), wrt="input").shape == (1, 2)


def test_params_view_is_readonly():
    s = nn.mlp([2, 2])
    with pytest.raises(ValueError):
        s.params[0] = 1.0


def test_stale_tape():
    s = nn.mlp([2, 2])
    y, tape = nn.forward(s, np.ones((1, 2)))
    s.set_params(s.params + 1)
    with pytest.raises(TapeError):
        nn.backward(s, tape, y)
    with pytest.raises(TapeError):
        nn.backward(nn.mlp([2, 2]), tape, y)


def test_shape_guards():
    with pytest.raises(ShapeError):
        nn.mlp([3, 2])(np.ones((1, 4)))
    with pytest.raises(ShapeError):
        nn.LayerStack([nn.Conv2d(2, 2)])(np.ones((1, 3, 4, 4)))
    with pytest.raises(ShapeError):
        nn.LayerStack([nn.Dense(2, 3), nn.Dense(4, 1)])


def test_adam_matches_hand_computation():
    st_ = nn.AdamState(2, lr=0.1)
    p, _ = nn.adam_step(st_, np.array([1.0, -1.0]), np.array([0.5, -2.0]))
    # first step moves each coordinate by lr * sign(g)
    assert np.allclose(p, [0.9, -0.9], atol=1e-7)
    p2, _ = nn.adam_step(st_, p, np.array([0.5, -2.0]))
    assert np.allclose(p2, [0.8, -0.8], atol=1e-7)


def test_adam_rejects_bad_grads():
    with pytest.raises(DivergenceError):
        nn.adam_step(nn.AdamState(1), np.zeros(1), np.array([np.nan]))
    with pytest.raises(ShapeError):
        nn.adam_step(nn.AdamState(2), np.zeros(1), np.zeros(1))


def test_adam_minimizes_quadratic():
    st_ = nn.AdamState(3, lr=0.05)
    p = np.array([3.0, -2.0, 1.0])
    for _ in range(500):
        p, _ = nn.adam_step(st_, p, 2 * p)
    assert np.abs(p).max() < 1e-2


# ------------------------------------------------------------------ checkpoints

def _stacks():
    return {"enc": nn.mlp([3, 4, 2], "relu", "tanh01", seed=1),
            "dec": nn.LayerStack([nn.Conv2d(2, 3, stride=2), nn.Upsample(2)], seed=2)}


def test_checkpoint_roundtrip(tmp_path):
    st_ = _stacks()
    checkpoint.save(tmp_path / "m.nnw", st_, meta={"k": 1}, frozen=True)
    back, meta, frozen = checkpoint.load(tmp_path / "m.nnw")
    assert meta == {"k": 1} and frozen
    for name in st_:
        assert back[name].checksum() == st_[name].checksum()
        assert back[name].spec() == st_[name].spec()
        assert back[name].frozen
    assert checkpoint.dumps(back, {"k": 1}, True) == (tmp_path / "m.nnw").read_bytes()


def test_checkpoint_header():
    raw = checkpoint.dumps(_stacks())
    assert raw[:4] == b"NNW1" and raw[4] == 0


def test_checkpoint_errors():
    raw = checkpoint.dumps(_stacks())
    with pytest.raises(FormatError):
        checkpoint.loads(b"XXXX" + raw[4:])
    with pytest.raises(TruncationError):
        checkpoint.loads(raw[:-8])


def test_copy_is_independent():
    s = nn.mlp([2, 3])
    c = s.copy()
    c.set_params(c.params + 1)
    assert c.checksum() != s.checksum() and c.spec() == s.spec()


# ------------------------------------------------------------------ kernels

def test_backend_selected():
    assert kernels.BACKEND in ("python", "cython")
    if kernels.HAVE_EXTENSION:
        assert kernels.BACKEND == "cython" or os.environ.get("UNOBS_PURE_PYTHON")


@pytest.mark.skipif(not kernels.HAVE_EXTENSION, reason="compiled extension not built")
@settings(max_examples=25)
@given(st.integers(1, 2), st.integers(1, 3), st.integers(3, 7), st.sampled_from([1, 2]),
       st.sampled_from([1, 3]), st.integers(0, 2**31))
def test_backends_agree(n, c, size, stride, k, seed):
    rng = np.random.default_rng(seed)
    xp = rng.standard_normal((n, c, size + k - 1, size + k - 1))
    ho = (xp.shape[2] - k) // stride + 1
    py_i, py_c = kernels.get_backend("python")
    cy_i, cy_c = kernels.get_backend("cython")
    a, b = py_i(xp, k, stride, ho, ho), cy_i(xp, k, stride, ho, ho)
    assert np.array_equal(a, b)
    cols = rng.standard_normal(a.shape)
    assert np.array_equal(py_c(cols, xp.shape, k, stride), cy_c(cols, xp.shape, k, stride))


def test_col2im_is_adjoint(rng):
    im2col, col2im = kernels.get_backend("python")
    xp = rng.standard_normal((1, 2, 6, 6))
    cols = im2col(xp, 3, 1, 4, 4)
    c = rng.standard_normal(cols.shape)
    assert abs((cols * c).sum() - (xp * col2im(c, xp.shape, 3, 1)).sum()) < 1e-10


def test_pure_python_env_switch():
    code = "from unobs.nn import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, UNOBS_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "python"


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")
