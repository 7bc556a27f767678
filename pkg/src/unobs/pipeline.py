"""Run configuration and the three training stages.

Stages write into one checkpoint directory::

    spaae.nnw    spaae_curve.csv
    speuae.nnw   stage1_curve.csv
    uldm.nnw     uldm.nnw.json   uldm_curve.csv
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import hsio, spaae as spaae_mod, speuae as speuae_mod, uldm
from .errors import ConfigError, DependencyError, ShapeError
from .hsio import HyperCube, PatchSpec

log = logging.getLogger(__name__)

SPAAE_CKPT = "spaae.nnw"
SPEUAE_CKPT = "speuae.nnw"
ULDM_CKPT = "uldm.nnw"
STAGES = ("spaae", "speuae", "uldm")


@dataclass
class RunConfig:
    seed: int = 0
    lam: float = 0.1
    T: int = 1000
    ddim_steps: int = 20
    num_samples: int = 10
    patch_size: int = 128
    patch_stride: int = 64
    lr_stage1: float = 4e-4
    lr_stage2: float = 1.5e-5
    factor: int = 4
    latent_channels: int = 4
    hidden: int = 64
    spaae_width: int = 32
    spaae_lr: float = 1e-3
    spaae_iters: int = 2000
    spaae_batch: int = 8
    spaae_crop: int = 32
    stage1_iters: int = 20000
    stage1_batch: int = 2
    uldm_iters: int = 20000
    uldm_batch: int = 16
    uldm_width: int = 48
    uldm_depth: int = 3
    uldm_pretrain_iters: int = 0
    augment_copies: int = 1
    train_data: str = ""
    ssf: str = ""
    ckpt_dir: str = ""

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def validate(self) -> "RunConfig":
        if self.lam < 0:
            raise ConfigError("lam must be nonnegative")
        for name in ("T", "ddim_steps", "num_samples", "patch_size", "patch_stride", "factor",
                     "latent_channels", "hidden", "spaae_width", "spaae_batch", "spaae_crop",
                     "stage1_batch", "uldm_batch", "uldm_width", "uldm_depth"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.ddim_steps > self.T:
            raise ConfigError("ddim_steps exceeds T")
        if self.patch_stride > self.patch_size:
            raise ConfigError("patch_stride exceeds patch_size")
        if self.patch_size % self.factor:
            raise ConfigError("patch_size must be divisible by factor")
        return self


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(key, raw):
    kind = type(_FIELDS[key].default)
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {kind.__name__}") from None
    return raw


def parse_config(text: str) -> RunConfig:
    """``key = value`` lines; ``#`` starts a comment.  Unknown keys are errors."""
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return RunConfig(**values).validate()


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text)


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {getattr(cfg, k)}\n" for k in _FIELDS)


# ---------------------------------------------------------------- data

def data_root() -> Path:
    return Path(os.environ.get("UNOBS_DATA_DIR", "."))


def resolve(path) -> Path:
    """Relative paths that do not exist here are looked up under ``UNOBS_DATA_DIR``."""
    p = Path(path)
    if p.is_absolute() or p.exists() or "UNOBS_DATA_DIR" not in os.environ:
        return p
    return data_root() / p


def load_cubes(directory) -> list:
    d = resolve(directory)
    files = sorted(d.glob("*.hsc"))
    if not files:
        raise DependencyError(f"no .hsc cubes in {d}")
    return [hsio.load_hsi(f) for f in files]


def config_ssf(cfg: RunConfig):
    return hsio.load_ssf(resolve(cfg.ssf)).normalized() if cfg.ssf else hsio.shipped_ssf()


def _arr(c):
    return c.data if isinstance(c, HyperCube) else np.asarray(c, dtype=np.float64)


def render_all(cubes, ssf) -> np.ndarray:
    return np.stack([np.tensordot(ssf.matrix, _arr(c), axes=(1, 0)) for c in cubes])


# ---------------------------------------------------------------- stages

def _need(path: Path, stage: str):
    if not path.exists():
        raise DependencyError(f"stage {stage!r} needs {path.name}; train the earlier stage first")


def train_spaae_stage(cfg: RunConfig, cubes, ssf, ckpt_dir) -> spaae_mod.SpaaeModel:
    ckpt = Path(ckpt_dir)
    ckpt.mkdir(parents=True, exist_ok=True)
    scfg = spaae_mod.SpaaeConfig(width=cfg.spaae_width, factor=cfg.factor,
                                 latent_channels=cfg.latent_channels, lr=cfg.spaae_lr,
                                 iterations=cfg.spaae_iters, batch=cfg.spaae_batch,
                                 crop=cfg.spaae_crop, seed=cfg.seed)
    model = spaae_mod.pretrain_spaae(render_all(cubes, ssf), scfg)
    spaae_mod.save_spaae(model, ckpt / SPAAE_CKPT)
    with open(ckpt / "spaae_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "loss"])
        for i, v in enumerate(scfg.curve):
            w.writerow([i, repr(float(v))])
    return model


def _patches(cube, cfg, augment=False, seed=0):
    spec = PatchSpec(cfg.patch_size, cfg.patch_stride, augment)
    return [p.data for p in hsio.iter_patches(cube, spec, seed)]


def train_speuae_stage(cfg: RunConfig, cubes, ssf, ckpt_dir,
                       spaae: spaae_mod.SpaaeModel | None = None) -> speuae_mod.SpeuaeModel:
    ckpt = Path(ckpt_dir)
    if spaae is None:
        _need(ckpt / SPAAE_CKPT, "speuae")
        spaae = spaae_mod.load_spaae(ckpt / SPAAE_CKPT)
    rgb = render_all(cubes, ssf)
    dataset = [(_arr(c), r) for c, r in zip(cubes, rgb)]
    model = speuae_mod.build_speuae(ssf, cfg.hidden, cfg.seed, cfg.lam)
    scfg = speuae_mod.Stage1Config(lr=cfg.lr_stage1, iterations=cfg.stage1_iters,
                                   batch=cfg.stage1_batch, patch=cfg.patch_size,
                                   stride=cfg.patch_stride, seed=cfg.seed,
                                   curve_path=str(ckpt / "stage1_curve.csv"),
                                   ckpt_path=str(ckpt / SPEUAE_CKPT))
    speuae_mod.train_stage1(dataset, model, spaae, scfg)
    model.freeze()
    speuae_mod.save_speuae(model, ckpt / SPEUAE_CKPT)
    return model


def stage2_latents(cfg: RunConfig, cubes, ssf, spaae, speuae):
    """``(Z_un, Z_rgb)`` for every training patch and its augmented copies."""
    z_un, z_rgb = [], []
    seeds = np.random.SeedSequence(cfg.seed).generate_state(max(1, len(cubes)))
    for i, cube in enumerate(cubes):
        c = cube if isinstance(cube, HyperCube) else HyperCube(cube)
        batch = _patches(c, cfg)
        for k in range(cfg.augment_copies):
            batch += _patches(c, cfg, augment=True, seed=int(seeds[i]) + k)
        x = np.stack(batch)
        r = np.einsum("cb,nbhw->nchw", ssf.matrix, x)
        f = speuae_mod.encode(x, speuae)
        z_un.append(spaae_mod.encode_spatial(f, spaae))
        z_rgb.append(spaae_mod.encode_spatial(r, spaae))
    return np.concatenate(z_un), np.concatenate(z_rgb)


def train_uldm_stage(cfg: RunConfig, cubes, ssf, ckpt_dir, spaae=None, speuae=None):
    ckpt = Path(ckpt_dir)
    if spaae is None:
        _need(ckpt / SPAAE_CKPT, "uldm")
        spaae = spaae_mod.load_spaae(ckpt / SPAAE_CKPT)
    if speuae is None:
        _need(ckpt / SPEUAE_CKPT, "uldm")
        speuae = speuae_mod.load_speuae(ckpt / SPEUAE_CKPT)
    pairs = stage2_latents(cfg, cubes, ssf, spaae, speuae)
    sched = uldm.make_schedule(cfg.T)
    den = uldm.build_denoiser(cfg.latent_channels, cfg.uldm_width, cfg.uldm_depth, cfg.T,
                              seed=cfg.seed)
    ucfg = uldm.UldmConfig(lr=cfg.lr_stage2, iterations=cfg.uldm_iters, batch=cfg.uldm_batch,
                           seed=cfg.seed, pretrain_iterations=cfg.uldm_pretrain_iters,
                           curve_path=str(ckpt / "uldm_curve.csv"),
                           ckpt_path=str(ckpt / ULDM_CKPT))
    uldm.train_uldm(pairs, den, sched, ucfg)
    den.freeze()
    uldm.save_denoiser(den, sched, ckpt / ULDM_CKPT)
    return den


def train_stage(stage: str, cfg: RunConfig, cubes, ssf, ckpt_dir):
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}")
    fn = {"spaae": train_spaae_stage, "speuae": train_speuae_stage,
          "uldm": train_uldm_stage}[stage]
    return fn(cfg, cubes, ssf, ckpt_dir)


def train_all(cfg: RunConfig, cubes, ssf, ckpt_dir, spaae=None) -> uldm.Models:
    """All three stages; a given ``spaae`` (frozen) skips pretraining."""
    ckpt = Path(ckpt_dir)
    ckpt.mkdir(parents=True, exist_ok=True)
    if spaae is None:
        spaae = train_spaae_stage(cfg, cubes, ssf, ckpt)
    else:
        spaae_mod.save_spaae(spaae, ckpt / SPAAE_CKPT)
    sp = train_speuae_stage(cfg, cubes, ssf, ckpt, spaae)
    den = train_uldm_stage(cfg, cubes, ssf, ckpt, spaae, sp)
    return uldm.Models(spaae, sp, den, uldm.make_schedule(cfg.T), cfg.ddim_steps)


def load_models(ckpt_dir, ddim_steps=20) -> uldm.Models:
    ckpt = Path(ckpt_dir)
    for name, stage in ((SPAAE_CKPT, "spaae"), (SPEUAE_CKPT, "speuae"), (ULDM_CKPT, "uldm")):
        if not (ckpt / name).exists():
            raise DependencyError(f"missing {name} (stage {stage!r}) in {ckpt}")
    sp = spaae_mod.load_spaae(ckpt / SPAAE_CKPT)
    su = speuae_mod.load_speuae(ckpt / SPEUAE_CKPT)
    den, sched = uldm.load_denoiser(ckpt / ULDM_CKPT)
    return uldm.Models(sp, su, den, sched, ddim_steps)


def check_divisible(rgb, factor):
    _, h, w = _arr(rgb).shape
    if h % factor or w % factor:
        raise ShapeError(f"image {h}x{w} is not divisible by the latent factor {factor}")
