"""Spectral unobservable-feature autoencoder (stage 1).

The encoder squeezes each pixel's spectrum into a 3-channel feature in
[0, 1].  The decoder reads that feature together with the RGB pixel and
predicts only the null-space coordinates; the RGB-consistent lift of the
pixel is added on top, so every decoded HSI renders back to its RGB input.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import nn
from .errors import DivergenceError, FormatError, FrozenError, ShapeError
from .hsio import HyperCube, SpectralSensitivity
from .spaae import SpaaeModel
from .spectral_core import ensure_split, lift_matrix

log = logging.getLogger(__name__)


@dataclass
class SpeuaeModel:
    encoder: nn.LayerStack   # B -> 3 per pixel
    decoder: nn.LayerStack   # (3 feature + 3 rgb) -> B-3 null coordinates
    ssf: SpectralSensitivity
    lam: float = 0.1

    def __post_init__(self):
        self.ssf = ensure_split(self.ssf)
        self._lift = lift_matrix(self.ssf)

    @property
    def bands(self) -> int:
        return self.ssf.bands

    @property
    def n_params(self) -> int:
        return self.encoder.n_params + self.decoder.n_params

    def params(self) -> np.ndarray:
        return np.concatenate([self.encoder.params, self.decoder.params])

    def set_params(self, p) -> None:
        n = self.encoder.n_params
        self.encoder.set_params(p[:n])
        self.decoder.set_params(p[n:])

    def checksum(self) -> str:
        return self.encoder.checksum() + self.decoder.checksum()

    def freeze(self):
        self.encoder.freeze()
        self.decoder.freeze()
        return self


def build_speuae(ssf, hidden=64, seed=0, lam=0.1) -> SpeuaeModel:
    ssf = ensure_split(ssf)
    b = ssf.bands
    enc = nn.mlp([b, hidden, hidden, 3], "relu", "tanh01", seed=seed)
    dec = nn.mlp([6, hidden, hidden, b - 3], "relu", None, seed=seed + 1)
    return SpeuaeModel(enc, dec, ssf, lam)


def _batch(x, channels=None):
    a = x.data if isinstance(x, HyperCube) else np.asarray(x, dtype=np.float64)
    single = a.ndim == 3
    a = a[None] if single else a
    if a.ndim != 4:
        raise ShapeError(f"expected (C, H, W) or (N, C, H, W), got {a.shape}")
    if channels is not None and a.shape[1] != channels:
        raise ShapeError(f"expected {channels} channels, got {a.shape[1]}")
    return a, single


def _encode(model, x):
    return nn.pixelwise(model.encoder, x)


def _decode(model, feat, rgb):
    if feat.shape[0] != rgb.shape[0] or feat.shape[2:] != rgb.shape[2:]:
        raise ShapeError(f"feature {feat.shape} and RGB {rgb.shape} do not match")
    zeta, tape = nn.pixelwise(model.decoder, np.concatenate([feat, rgb], axis=1))
    out = (np.einsum("bc,nchw->nbhw", model._lift, rgb)
           + np.einsum("bk,nkhw->nbhw", model.ssf.v0, zeta))
    return out, tape


def encode(hsi, model: SpeuaeModel) -> np.ndarray:
    """Compressed unobservable feature, ``(3, H, W)`` (or batched)."""
    x, single = _batch(hsi, model.bands)
    f, _ = _encode(model, x)
    return f[0] if single else f


def decode(feat, rgb, model: SpeuaeModel) -> np.ndarray:
    f, single = _batch(feat, 3)
    r, _ = _batch(rgb, 3)
    out, _ = _decode(model, f, r)
    return out[0] if single else out


def _check_spaae(spaae: SpaaeModel, shape):
    if not spaae.frozen:
        raise FrozenError("stage-1 training needs a frozen SpaAE")
    if shape[2] % spaae.factor or shape[3] % spaae.factor:
        raise ShapeError(f"spatial dims {shape[2:]} not divisible by {spaae.factor}")


def stage1_loss_and_grad(model: SpeuaeModel, spaae: SpaaeModel, hsi, rgb, need_grad=True):
    """``((total, hsi_re, align), grad)``; ``grad`` covers the SpeUAE parameters only.

    The SpaAE is traversed for input gradients; its own parameter gradients
    are never formed.
    """
    x, _ = _batch(hsi, model.bands)
    r, _ = _batch(rgb, 3)
    _check_spaae(spaae, x.shape)
    feat, te = _encode(model, x)
    out, td = _decode(model, feat, r)
    res = out - x
    l_hsi = float(np.mean(res * res))

    z, tz = nn.forward(spaae.encoder, feat)
    back, tb = nn.forward(spaae.decoder, z)
    ra = back - feat
    l_align = float(np.mean(ra * ra))
    total = l_hsi + model.lam * l_align
    if not need_grad:
        return (total, l_hsi, l_align), None

    g_out = 2.0 * res / res.size
    g_zeta = np.einsum("bk,nbhw->nkhw", model.ssf.v0, g_out)
    g_dec, g_inp = nn.backward(model.decoder, td, nn.stack.pixelwise_grad(g_zeta), wrt="both")
    g_feat = nn.stack.unpixelwise(g_inp, (r.shape[0], 6) + r.shape[2:])[:, :3]
    if model.lam:
        g_back = 2.0 * ra / ra.size
        g_z = nn.backward(spaae.decoder, tb, g_back, wrt="input")
        g_feat = g_feat + model.lam * (nn.backward(spaae.encoder, tz, g_z, wrt="input") - g_back)
    g_enc = nn.backward(model.encoder, te, nn.stack.pixelwise_grad(g_feat), wrt="params")
    return (total, l_hsi, l_align), np.concatenate([g_enc, g_dec])


def stage1_loss(hsi, rgb, model: SpeuaeModel, spaae: SpaaeModel):
    """``(total, hsi_re, align)``."""
    return stage1_loss_and_grad(model, spaae, hsi, rgb, need_grad=False)[0]


# ------------------------------------------------------------------ training

@dataclass
class Stage1Config:
    lr: float = 4e-4
    iterations: int = 1000
    batch: int = 4
    patch: int = 32
    stride: int = 16
    seed: int = 0
    lr_decay: bool = True
    curve_path: Optional[str] = None
    ckpt_path: Optional[str] = None
    curve: list = field(default_factory=list, repr=False)


def _patch_index(cubes, size, stride):
    idx = []
    for i, c in enumerate(cubes):
        _, nx, ny = c.shape
        if size > min(nx, ny):
            raise ShapeError(f"patch {size} does not fit a {nx}x{ny} cube")
        idx += [(i, a, b) for a in range(0, nx - size + 1, stride)
                for b in range(0, ny - size + 1, stride)]
    return idx


def write_curve(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "total", "hsi_re", "align"])
        for row in rows:
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def train_stage1(dataset, model: SpeuaeModel, spaae: SpaaeModel,
                 config: Stage1Config | None = None) -> SpeuaeModel:
    """Adam on random patches of ``dataset`` (a list of ``(hsi, rgb)`` pairs).

    Every iteration's losses go to ``config.curve`` (and the curve CSV).
    A non-finite loss aborts with the previous parameters checkpointed.
    """
    cfg = config or Stage1Config()
    hsis = [np.asarray(h.data if isinstance(h, HyperCube) else h, dtype=np.float64)
            for h, _ in dataset]
    rgbs = [np.asarray(r.data if isinstance(r, HyperCube) else r, dtype=np.float64)
            for _, r in dataset]
    if not hsis:
        raise ShapeError("empty stage-1 dataset")
    _check_spaae(spaae, (1, 3, cfg.patch, cfg.patch))
    index = _patch_index(hsis, cfg.patch, cfg.stride)
    rng = np.random.default_rng(cfg.seed)
    params = model.params()
    state = nn.AdamState(params.size, lr=cfg.lr)
    s = cfg.patch
    for it in range(cfg.iterations):
        if cfg.lr_decay:
            state.lr = cfg.lr * 0.5 * (1.0 + math.cos(math.pi * it / cfg.iterations))
        pick = rng.integers(0, len(index), cfg.batch)
        xb = np.stack([hsis[index[j][0]][:, index[j][1]:index[j][1] + s, index[j][2]:index[j][2] + s]
                       for j in pick])
        rb = np.stack([rgbs[index[j][0]][:, index[j][1]:index[j][1] + s, index[j][2]:index[j][2] + s]
                       for j in pick])
        losses, grad = stage1_loss_and_grad(model, spaae, xb, rb)
        if not all(math.isfinite(v) for v in losses) or not np.all(np.isfinite(grad)):
            _finish(model, cfg)
            raise DivergenceError(f"stage-1 loss became non-finite at iteration {it}")
        cfg.curve.append((it,) + tuple(losses))
        params, state = nn.adam_step(state, params, grad)
        model.set_params(params)
        if it % 200 == 0:
            log.debug("stage1 it %d total %.3e", it, losses[0])
    _finish(model, cfg)
    return model


def _finish(model, cfg):
    if cfg.curve_path:
        write_curve(cfg.curve, cfg.curve_path)
    if cfg.ckpt_path:
        save_speuae(model, cfg.ckpt_path)


def save_speuae(model: SpeuaeModel, path) -> None:
    meta = {"kind": "speuae", "lam": float(model.lam),
            "ssf": [[float(v) for v in row] for row in model.ssf.matrix],
            "wavelengths": [float(w) for w in model.ssf.wavelengths]}
    nn.checkpoint.save(path, {"encoder": model.encoder, "decoder": model.decoder},
                       meta=meta, frozen=model.encoder.frozen)


def load_speuae(path) -> SpeuaeModel:
    stacks, meta, _ = nn.checkpoint.load(path)
    if meta.get("kind") != "speuae":
        raise FormatError(f"{Path(path).name} is not a SpeUAE checkpoint")
    ssf = SpectralSensitivity(np.array(meta["ssf"]), np.array(meta["wavelengths"]))
    return SpeuaeModel(stacks["encoder"], stacks["decoder"], ssf, meta["lam"])
