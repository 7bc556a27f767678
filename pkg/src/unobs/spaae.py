"""Small convolutional autoencoder for 3-channel images.

Pretrained on RGB images only and then frozen; it codes both RGB images and
compressed unobservable features into the same latent space.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import DivergenceError, FormatError, ShapeError
from .hsio import HyperCube

log = logging.getLogger(__name__)


@dataclass
class SpaaeModel:
    encoder: nn.LayerStack
    decoder: nn.LayerStack
    factor: int = 4
    latent_channels: int = 4

    @property
    def frozen(self) -> bool:
        return self.encoder.frozen and self.decoder.frozen

    def freeze(self):
        self.encoder.freeze()
        self.decoder.freeze()
        return self

    def checksum(self) -> str:
        return self.encoder.checksum() + self.decoder.checksum()


@dataclass
class SpaaeConfig:
    width: int = 32
    factor: int = 4
    latent_channels: int = 4
    lr: float = 1e-3
    iterations: int = 2000
    batch: int = 8
    crop: int = 32
    seed: int = 0
    lr_decay: bool = True
    curve: list = field(default_factory=list, repr=False)


def build_spaae(width=32, factor=4, latent_channels=4, seed=0) -> SpaaeModel:
    levels = int(round(math.log2(factor)))
    if 2 ** levels != factor:
        raise ValueError("downsample factor must be a power of two")
    enc = [nn.Conv2d(3, width), nn.Activation("relu")]
    for _ in range(levels):
        enc += [nn.Conv2d(width, width, stride=2), nn.Activation("relu")]
    enc += [nn.Conv2d(width, latent_channels)]
    dec = [nn.Conv2d(latent_channels, width), nn.Activation("relu")]
    for _ in range(levels):
        dec += [nn.Upsample(2), nn.Conv2d(width, width), nn.Activation("relu")]
    dec += [nn.Conv2d(width, 3)]
    return SpaaeModel(nn.LayerStack(enc, seed=seed), nn.LayerStack(dec, seed=seed + 1),
                      factor, latent_channels)


def _batched(img):
    x = img.data if isinstance(img, HyperCube) else np.asarray(img, dtype=np.float64)
    single = x.ndim == 3
    return (x[None] if single else x), single


def encode_spatial(img, model: SpaaeModel) -> np.ndarray:
    """``(3, H, W)`` or ``(N, 3, H, W)`` to latents ``(C_lat, H/f, W/f)`` (batched alike)."""
    x, single = _batched(img)
    if x.shape[1] != 3:
        raise ShapeError(f"expected 3 channels, got {x.shape[1]}")
    f = model.factor
    if x.shape[2] % f or x.shape[3] % f:
        raise ShapeError(f"spatial dims {x.shape[2:]} not divisible by {f}")
    z = model.encoder(x)
    return z[0] if single else z


def decode_spatial(z, model: SpaaeModel) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 3
    zb = z[None] if single else z
    if zb.shape[1] != model.latent_channels:
        raise ShapeError(f"expected {model.latent_channels} latent channels, got {zb.shape[1]}")
    out = model.decoder(zb)
    return out[0] if single else out


def roundtrip_mse(imgs, model: SpaaeModel) -> float:
    x, _ = _batched(imgs)
    return float(np.mean((decode_spatial(encode_spatial(x, model), model) - x) ** 2))


def roundtrip_loss_and_grad(model: SpaaeModel, x):
    """MSE of ``decode(encode(x))`` against ``x`` and its gradient w.r.t. both stacks."""
    z, tz = nn.forward(model.encoder, x)
    y, ty = nn.forward(model.decoder, z)
    r = y - x
    loss = float(np.mean(r * r))
    g = 2.0 * r / r.size
    gdec, gz = nn.backward(model.decoder, ty, g, wrt="both")
    genc = nn.backward(model.encoder, tz, gz, wrt="params")
    return loss, np.concatenate([genc, gdec])


def _random_crops(corpus, n, crop, rng):
    N, _, H, W = corpus.shape
    idx = rng.integers(0, N, n)
    xs = rng.integers(0, H - crop + 1, n)
    ys = rng.integers(0, W - crop + 1, n)
    return np.stack([corpus[i, :, a:a + crop, b:b + crop] for i, a, b in zip(idx, xs, ys)])


def pretrain_spaae(rgb_corpus, config: SpaaeConfig | None = None) -> SpaaeModel:
    """Train on random crops of an ``(N, 3, H, W)`` RGB corpus; returns a frozen model.

    The per-iteration loss is appended to ``config.curve``.
    """
    cfg = config or SpaaeConfig()
    corpus = np.asarray(rgb_corpus, dtype=np.float64)
    if corpus.ndim != 4 or corpus.shape[1] != 3:
        raise ShapeError(f"expected an (N, 3, H, W) RGB corpus, got {corpus.shape}")
    crop = min(cfg.crop, corpus.shape[2], corpus.shape[3])
    crop -= crop % cfg.factor
    model = build_spaae(cfg.width, cfg.factor, cfg.latent_channels, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    n_enc = model.encoder.n_params
    params = np.concatenate([model.encoder.params, model.decoder.params])
    state = nn.AdamState(params.size, lr=cfg.lr)
    for it in range(cfg.iterations):
        if cfg.lr_decay:
            state.lr = cfg.lr * 0.5 * (1.0 + math.cos(math.pi * it / cfg.iterations))
        batch = _random_crops(corpus, cfg.batch, crop, rng)
        loss, grad = roundtrip_loss_and_grad(model, batch)
        if not math.isfinite(loss):
            raise DivergenceError(f"SpaAE pretraining diverged at iteration {it}")
        cfg.curve.append(loss)
        params, state = nn.adam_step(state, params, grad)
        model.encoder.set_params(params[:n_enc])
        model.decoder.set_params(params[n_enc:])
        if it % 500 == 0:
            log.debug("spaae it %d loss %.3e", it, loss)
    return model.freeze()


def save_spaae(model: SpaaeModel, path) -> None:
    nn.checkpoint.save(path, {"encoder": model.encoder, "decoder": model.decoder},
                       meta={"kind": "spaae", "factor": model.factor,
                             "latent_channels": model.latent_channels},
                       frozen=model.frozen)


def load_spaae(path) -> SpaaeModel:
    stacks, meta, _ = nn.checkpoint.load(path)
    if meta.get("kind") != "spaae":
        raise FormatError(f"{path} is not a SpaAE checkpoint")
    return SpaaeModel(stacks["encoder"], stacks["decoder"], meta["factor"],
                      meta["latent_channels"])
