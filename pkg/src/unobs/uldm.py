"""Conditional latent diffusion over SpaAE latents of the unobservable feature.

Noise predictor ``eps(z_t, z_rgb, t)`` is a small conv net fed the channel
concatenation of the noisy latent, the RGB latent and a sinusoidal
timestep embedding broadcast over space.  Sampling is deterministic DDIM.
Latents are standardized per channel with statistics kept in the model.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import nn, spaae as spaae_mod, speuae as speuae_mod
from .errors import DivergenceError, FormatError, InputError, NumericGuardError, ShapeError
from .hsio import HyperCube

log = logging.getLogger(__name__)


# ----------------------------------------------------------------- schedule

@dataclass
class DiffusionSchedule:
    T: int
    betas: np.ndarray
    alpha_bars: np.ndarray       # alpha_bars[t - 1] is abar_t
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def _check(self, t):
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise InputError(f"timestep out of range 1..{self.T}")
        return t.astype(np.int64)

    def alpha_bar(self, t):
        t = self._check(t)
        return self.alpha_bars[t - 1]

    def ddim_timesteps(self, steps: int) -> np.ndarray:
        """``steps`` descending timesteps from T to 1."""
        if not 1 <= steps <= self.T:
            raise InputError(f"ddim steps must lie in 1..{self.T}")
        if steps == 1:
            return np.array([self.T])
        return np.round(np.linspace(self.T, 1, steps)).astype(np.int64)


def make_schedule(T=1000, beta_start=1e-4, beta_end=0.02) -> DiffusionSchedule:
    if T < 1 or not 0 < beta_start <= beta_end < 1:
        raise InputError("invalid schedule parameters")
    betas = np.linspace(beta_start, beta_end, T)
    return DiffusionSchedule(T, betas, np.cumprod(1.0 - betas), beta_start, beta_end)


def _bcast(v, like):
    v = np.asarray(v, dtype=np.float64)
    return v.reshape(v.shape + (1,) * (like.ndim - v.ndim)) if v.ndim else v


def forward_noise(z0, t, eps, sched: DiffusionSchedule) -> np.ndarray:
    """``sqrt(abar_t) z0 + sqrt(1 - abar_t) eps``; ``t`` scalar or one per leading item."""
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != z0.shape:
        raise ShapeError(f"noise {eps.shape} does not match latent {z0.shape}")
    ab = _bcast(sched.alpha_bar(t), z0)
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def tweedie_z0(z_t, eps_hat, t, sched: DiffusionSchedule) -> np.ndarray:
    z_t = np.asarray(z_t, dtype=np.float64)
    ab = _bcast(sched.alpha_bar(t), z_t)
    if np.any(ab < 1e-12):
        raise NumericGuardError("abar underflow: cannot invert the forward process")
    return (z_t - np.sqrt(1.0 - ab) * np.asarray(eps_hat, dtype=np.float64)) / np.sqrt(ab)


# ----------------------------------------------------------------- denoiser

def timestep_embedding(t, T, dim=8) -> np.ndarray:
    """``(len(t), dim)`` sin/cos features at frequencies ``pi/2 * 2^k / T``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    freqs = 0.5 * np.pi * 2.0 ** np.arange(dim // 2) / T
    ang = t[:, None] * freqs[None]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


@dataclass
class DenoiserModel:
    stack: nn.LayerStack
    latent_channels: int
    T: int
    embed_dim: int = 8
    un_mean: np.ndarray = None
    un_std: np.ndarray = None
    rgb_mean: np.ndarray = None
    rgb_std: np.ndarray = None

    def __post_init__(self):
        c = self.latent_channels
        for name, default in (("un_mean", 0.0), ("un_std", 1.0),
                              ("rgb_mean", 0.0), ("rgb_std", 1.0)):
            v = getattr(self, name)
            setattr(self, name, np.full(c, default) if v is None
                    else np.asarray(v, dtype=np.float64).reshape(c))

    @property
    def frozen(self) -> bool:
        return self.stack.frozen

    def freeze(self):
        self.stack.freeze()
        return self

    def norm_un(self, z):
        return (z - self.un_mean[:, None, None]) / self.un_std[:, None, None]

    def denorm_un(self, z):
        return z * self.un_std[:, None, None] + self.un_mean[:, None, None]

    def norm_rgb(self, z):
        return (z - self.rgb_mean[:, None, None]) / self.rgb_std[:, None, None]


def build_denoiser(latent_channels=4, width=48, depth=3, T=1000, embed_dim=8,
                   seed=0) -> DenoiserModel:
    c_in = 2 * latent_channels + embed_dim
    layers = [nn.Skip("in"), nn.Conv2d(c_in, width), nn.Activation("relu")]
    for _ in range(depth - 1):
        layers += [nn.Conv2d(width, width), nn.Activation("relu")]
    layers += [nn.ConcatSkip("in", c_in), nn.Conv2d(width + c_in, latent_channels)]
    return DenoiserModel(nn.LayerStack(layers, seed=seed), latent_channels, T, embed_dim)


def _inputs(model: DenoiserModel, z_t, z_cond, t):
    n, _, h, w = z_t.shape
    emb = timestep_embedding(np.broadcast_to(np.asarray(t), (n,)), model.T, model.embed_dim)
    emb = np.broadcast_to(emb[:, :, None, None], (n, model.embed_dim, h, w))
    return np.concatenate([z_t, z_cond, emb], axis=1)


def eps_hat(model: DenoiserModel, z_t, z_cond, t) -> np.ndarray:
    """Noise prediction in normalized latent units; ``z_cond`` already normalized."""
    return model.stack(_inputs(model, z_t, z_cond, t))


def denoiser_loss_and_grad(model: DenoiserModel, z0, z_cond, t, eps, sched, need_grad=True):
    """MSE between injected and predicted noise, with its parameter gradient."""
    z_t = forward_noise(z0, t, eps, sched)
    pred, tape = nn.forward(model.stack, _inputs(model, z_t, z_cond, t))
    r = pred - eps
    loss = float(np.mean(r * r))
    if not need_grad:
        return loss, None
    return loss, nn.backward(model.stack, tape, 2.0 * r / r.size, wrt="params")


@dataclass
class UldmConfig:
    lr: float = 1.5e-5
    iterations: int = 2000
    batch: int = 16
    seed: int = 0
    pretrain_iterations: int = 0
    pretrain_lr: Optional[float] = None
    normalize: bool = True
    lr_decay: bool = True
    curve_path: Optional[str] = None
    ckpt_path: Optional[str] = None
    curve: list = field(default_factory=list, repr=False)


def _channel_stats(z):
    mean = z.mean(axis=(0, 2, 3))
    std = z.std(axis=(0, 2, 3))
    return mean, np.where(std > 1e-8, std, 1.0)


def _run_phase(model, targets, conds, sched, iterations, lr, cfg, rng, phase):
    state = nn.AdamState(model.stack.n_params, lr=lr)
    params = model.stack.params.copy()
    n = targets.shape[0]
    for it in range(iterations):
        if cfg.lr_decay:
            state.lr = lr * 0.5 * (1.0 + math.cos(math.pi * it / iterations))
        pick = rng.integers(0, n, cfg.batch)
        t = rng.integers(1, sched.T + 1, cfg.batch)
        eps = rng.standard_normal(targets[pick].shape)
        loss, grad = denoiser_loss_and_grad(model, targets[pick], conds[pick], t, eps, sched)
        if not math.isfinite(loss):
            if cfg.ckpt_path:
                save_denoiser(model, sched, cfg.ckpt_path)
            raise DivergenceError(f"denoiser loss became non-finite at iteration {it}")
        cfg.curve.append((phase, it, loss))
        params, state = nn.adam_step(state, params, grad)
        model.stack.set_params(params)
        if it % 500 == 0:
            log.debug("uldm %s it %d loss %.3e", phase, it, loss)


def train_uldm(pairs, model: DenoiserModel, sched: DiffusionSchedule,
               config: UldmConfig | None = None, rgb_latents=None) -> DenoiserModel:
    """Fit ``model`` to ``pairs = (Z_un, Z_rgb)``, arrays of shape ``(N, C, h, w)``.

    With ``config.pretrain_iterations > 0`` the network is first trained
    unconditionally (conditioning zeroed) on ``rgb_latents`` (default: the
    RGB latents of ``pairs``), then fine-tuned on the pairs.
    """
    cfg = config or UldmConfig()
    z_un, z_rgb = (np.asarray(a, dtype=np.float64) for a in pairs)
    if z_un.shape != z_rgb.shape or z_un.ndim != 4 or z_un.shape[1] != model.latent_channels:
        raise ShapeError(f"latent pairs must be (N, {model.latent_channels}, h, w) alike")
    if cfg.normalize:
        model.un_mean, model.un_std = _channel_stats(z_un)
        model.rgb_mean, model.rgb_std = _channel_stats(z_rgb)
    rng = np.random.default_rng(cfg.seed)
    if cfg.pretrain_iterations:
        pre = np.asarray(z_rgb if rgb_latents is None else rgb_latents, dtype=np.float64)
        pre_n = model.norm_rgb(pre)
        _run_phase(model, pre_n, np.zeros_like(pre_n), sched, cfg.pretrain_iterations,
                   cfg.pretrain_lr or cfg.lr, cfg, rng, "pretrain")
    _run_phase(model, model.norm_un(z_un), model.norm_rgb(z_rgb), sched, cfg.iterations,
               cfg.lr, cfg, rng, "finetune")
    if cfg.curve_path:
        with open(cfg.curve_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["phase", "iter", "loss"])
            for phase, it, loss in cfg.curve:
                w.writerow([phase, it, repr(float(loss))])
    if cfg.ckpt_path:
        save_denoiser(model, sched, cfg.ckpt_path)
    return model


# ----------------------------------------------------------------- sampling

def ddim_loop(z, eps_fn: Callable, sched: DiffusionSchedule, steps=20) -> np.ndarray:
    """Deterministic DDIM from ``z`` (noise at t = T) down to t = 0."""
    ts = sched.ddim_timesteps(steps)
    for i, t in enumerate(ts):
        ab = float(sched.alpha_bar(t))
        ab_prev = float(sched.alpha_bar(ts[i + 1])) if i + 1 < len(ts) else 1.0
        e = eps_fn(z, int(t))
        x0 = (z - math.sqrt(1.0 - ab) * e) / math.sqrt(ab)
        z = math.sqrt(ab_prev) * x0 + math.sqrt(1.0 - ab_prev) * e
    return z


def ddim_sample(z_rgb, denoiser, sched: DiffusionSchedule, seed: int, steps=20,
                noise=None) -> np.ndarray:
    """One ``Z_un`` draw per leading item of ``z_rgb``.

    ``denoiser`` is a ``DenoiserModel`` (conditioning and output in raw latent
    units) or a plain callable ``eps(z, t, z_rgb)`` working in raw units.
    Starting noise comes from ``default_rng(seed)`` unless ``noise`` is given.
    """
    z_rgb = np.asarray(z_rgb, dtype=np.float64)
    if noise is None:
        shape = z_rgb.shape
        if isinstance(denoiser, DenoiserModel):
            single = z_rgb.ndim == 3
            shape = ((1,) if single else ()) + z_rgb.shape
        noise = np.random.default_rng(seed).standard_normal(shape)
    z = np.asarray(noise, dtype=np.float64)
    if isinstance(denoiser, DenoiserModel):
        single = z_rgb.ndim == 3
        cond = denoiser.norm_rgb(z_rgb[None] if single else z_rgb)
        z = z.reshape(cond.shape)
        out = denoiser.denorm_un(ddim_loop(z, lambda x, t: eps_hat(denoiser, x, cond, t),
                                           sched, steps))
        return out[0] if single else out
    return ddim_loop(z, lambda x, t: denoiser(x, t, z_rgb), sched, steps)


# ----------------------------------------------------------------- inference

@dataclass
class Models:
    spaae: spaae_mod.SpaaeModel
    speuae: speuae_mod.SpeuaeModel
    denoiser: DenoiserModel
    sched: DiffusionSchedule
    ddim_steps: int = 20

    @property
    def frozen(self) -> bool:
        return (self.spaae.frozen and self.speuae.encoder.frozen
                and self.speuae.decoder.frozen and self.denoiser.frozen)


def infer_hsi(rgb, models: Models, num_samples=10, seed=0) -> HyperCube:
    """Mean over ``num_samples`` DDIM draws, each decoded to an HSI."""
    if num_samples < 1:
        raise InputError("num_samples must be at least 1")
    r = rgb.data if isinstance(rgb, HyperCube) else np.asarray(rgb, dtype=np.float64)
    if r.ndim != 3 or r.shape[0] != 3:
        raise ShapeError(f"expected a (3, H, W) RGB image, got {r.shape}")
    z_rgb = spaae_mod.encode_spatial(r, models.spaae)
    noise = np.stack([np.random.default_rng([seed, k]).standard_normal(z_rgb.shape)
                      for k in range(num_samples)])
    cond = np.broadcast_to(z_rgb, noise.shape)
    z_un = ddim_sample(cond, models.denoiser, models.sched, seed, models.ddim_steps, noise)
    feats = spaae_mod.decode_spatial(z_un, models.spaae)
    hsis = speuae_mod.decode(feats, np.broadcast_to(r, feats.shape), models.speuae)
    acc = np.zeros(hsis.shape[1:])
    for k in range(num_samples):
        acc += hsis[k]
    return HyperCube(acc / num_samples, models.speuae.ssf.wavelengths)


# ------------------------------------------------------------------ storage

def _sidecar(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".json")


def save_denoiser(model: DenoiserModel, sched: DiffusionSchedule, path) -> None:
    nn.checkpoint.save(path, {"denoiser": model.stack},
                       meta={"kind": "uldm", "latent_channels": model.latent_channels,
                             "embed_dim": model.embed_dim},
                       frozen=model.frozen)
    side = {"schedule": {"T": sched.T, "beta_start": sched.beta_start,
                         "beta_end": sched.beta_end},
            "normalization": {k: [float(v) for v in getattr(model, k)]
                              for k in ("un_mean", "un_std", "rgb_mean", "rgb_std")}}
    _sidecar(path).write_text(json.dumps(side, sort_keys=True, indent=1) + "\n")


def load_denoiser(path):
    """Returns ``(DenoiserModel, DiffusionSchedule)``."""
    stacks, meta, _ = nn.checkpoint.load(path)
    if meta.get("kind") != "uldm":
        raise FormatError(f"{Path(path).name} is not a denoiser checkpoint")
    try:
        side = json.loads(_sidecar(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"denoiser sidecar unreadable: {exc}") from None
    s = side["schedule"]
    sched = make_schedule(s["T"], s["beta_start"], s["beta_end"])
    model = DenoiserModel(stacks["denoiser"], meta["latent_channels"], sched.T,
                          meta["embed_dim"], **side["normalization"])
    return model, sched
