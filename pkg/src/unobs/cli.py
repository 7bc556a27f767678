"""Command-line entry point.

Exit codes: 0 ok, 2 bad input or format, 3 missing upstream checkpoint,
4 domain failure (including a failed oracle check).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import hsio, metrics, oracle, pipeline, relight, suites, uldm
from .errors import DependencyError, FormatError, InputError, UnobsError
from .hsio import HyperCube

log = logging.getLogger("unobs")


def _png_path(out: Path) -> Path:
    return out.with_suffix(".png")


def _illuminant(arg):
    if arg.upper() in ("A", "D65", "F6"):
        return hsio.shipped_illuminant(arg)
    return hsio.load_illuminant(pipeline.resolve(arg)).normalized()


def _ssf(arg):
    return hsio.load_ssf(pipeline.resolve(arg)).normalized() if arg else hsio.shipped_ssf()


def _load(path) -> HyperCube:
    p = pipeline.resolve(path)
    if not p.exists():
        raise FormatError(f"no such file: {p}")
    return hsio.load_hsi(p)


def _save_rgb(rgb: np.ndarray, out: Path):
    hsio.save_hsi(HyperCube(rgb), out)
    hsio.save_png(rgb, _png_path(out))


# ------------------------------------------------------------------ commands

def cmd_hsi2rgb(args):
    cube = _load(args.hsi)
    rgb = hsio.synthesize_rgb(cube, _ssf(args.ssf))
    _save_rgb(rgb.data, Path(args.out))
    return 0


def cmd_synth(args):
    ssf = _ssf(args.ssf)
    dims = tuple(int(d) for d in args.dims.split(","))
    mans = oracle.make_mixture(dims, seed=args.seed, ssf=ssf)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, cube in enumerate(oracle.mixture_dataset(mans, args.count, args.size, args.seed + 1)):
        hsio.save_hsi(cube, out / f"cube_{i:04d}.hsc")
    return 0


def cmd_train(args):
    cfg = pipeline.load_config(args.config)
    ckpt = Path(args.ckpt_dir or cfg.ckpt_dir or "checkpoints")
    if args.stage != "spaae":
        # check dependencies before touching any training data
        need = {"speuae": [pipeline.SPAAE_CKPT],
                "uldm": [pipeline.SPAAE_CKPT, pipeline.SPEUAE_CKPT]}[args.stage]
        for name in need:
            if not (ckpt / name).exists():
                raise DependencyError(f"stage {args.stage!r} needs {ckpt / name}")
    if not cfg.train_data:
        raise InputError("config has no train_data directory")
    cubes = pipeline.load_cubes(cfg.train_data)
    pipeline.train_stage(args.stage, cfg, cubes, pipeline.config_ssf(cfg), ckpt)
    return 0


def cmd_reconstruct(args):
    rgb = _load(args.rgb)
    if rgb.bands != 3:
        raise InputError(f"{args.rgb} has {rgb.bands} bands, expected 3")
    models = pipeline.load_models(args.ckpt_dir, args.ddim_steps)
    pipeline.check_divisible(rgb, models.spaae.factor)
    est = uldm.infer_hsi(rgb, models, args.samples, args.seed)
    out = Path(args.out)
    hsio.save_hsi(est, out)
    if args.ref:
        ref = _load(args.ref)
        report = metrics.evaluate(est, ref)
        metrics.write_report_csv([(Path(args.rgb).stem, report)], out.with_suffix(".csv"))
    return 0


def cmd_relight(args):
    rgb = _load(args.rgb)
    src = _illuminant(args.illum)
    dst = _illuminant(args.target_illum)
    ssf = _ssf(args.ssf)
    out = Path(args.out)
    if args.method in ("uldm", "oracle"):
        if args.method == "oracle":
            if not args.hsi:
                raise InputError("method 'oracle' needs --hsi with the ground-truth lit cube")
            truth = _load(args.hsi).data
            sr = lambda _rgb: truth
        else:
            if not args.ckpt_dir:
                raise InputError("method 'uldm' needs --ckpt-dir")
            models = pipeline.load_models(args.ckpt_dir)
            sr = lambda x: uldm.infer_hsi(x, models, args.samples, args.seed).data
        job = relight.RelightJob(rgb.data, src, dst, ssf, sr, args.threshold)
        lit = np.asarray(job.sr(job.input_rgb))
        hsio.save_hsi(HyperCube(lit, src.wavelengths), out.with_name(out.stem + "_sr.hsc"))
        job.sr = lambda _x: lit
        result = relight.relight_hsi(job)
    elif args.method == "rgb-re":
        result = relight.rgb_re(rgb.data, src, dst, ssf)
    elif args.method == "gw":
        result = relight.gray_world(rgb.data)
    else:
        result = relight.perfect_reflector(rgb.data)
    _save_rgb(result, out)
    return 0


def cmd_oracle_check(args):
    report = suites.run_suite(args.suite, args.seed)
    if args.ckpt:
        report["checks"].append(_checkpoint_check(args.ckpt))
    print(json.dumps(report, sort_keys=True))
    return 0 if all(c["pass"] for c in report["checks"]) else 4


def _checkpoint_check(path):
    from .nn import checkpoint

    try:
        stacks, _, frozen = checkpoint.load(path)
        ok = frozen and all(np.all(np.isfinite(s.params)) for s in stacks.values())
    except (UnobsError, OSError) as exc:
        log.error("checkpoint %s: %s", path, exc)
        ok = False
    return {"name": "checkpoint_loads_frozen", "pass": bool(ok), "value": float(ok), "tol": 1.0}


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="unobs", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help="cap BLAS threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("hsi2rgb", help="render an HSC1 cube to RGB")
    s.add_argument("--hsi", required=True)
    s.add_argument("--ssf", default="")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_hsi2rgb)

    s = sub.add_parser("synth", help="write a synthetic manifold-mixture dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=200)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--dims", default="3,4,5,6")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--ssf", default="")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train one pipeline stage")
    s.add_argument("--stage", required=True, choices=pipeline.STAGES)
    s.add_argument("--config", required=True)
    s.add_argument("--ckpt-dir", default="")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("reconstruct", help="RGB to HSI with trained checkpoints")
    s.add_argument("--rgb", required=True)
    s.add_argument("--ckpt-dir", required=True)
    s.add_argument("--samples", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--ddim-steps", type=int, default=20)
    s.add_argument("--ref", default="")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("relight", help="re-render an RGB image under another illuminant")
    s.add_argument("--rgb", required=True)
    s.add_argument("--illum", required=True, help="CSV path or A, D65, F6")
    s.add_argument("--target-illum", default="D65")
    s.add_argument("--ssf", default="")
    s.add_argument("--method", default="uldm", choices=["uldm", "rgb-re", "gw", "pr", "oracle"])
    s.add_argument("--threshold", type=float, default=0.1)
    s.add_argument("--hsi", default="", help="ground-truth lit cube for --method oracle")
    s.add_argument("--ckpt-dir", default="")
    s.add_argument("--samples", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_relight)

    s = sub.add_parser("oracle-check", help="run an analytic self-check suite")
    s.add_argument("--suite", required=True, choices=sorted(suites.SUITES))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--ckpt", default="", help="also verify this checkpoint")
    s.set_defaults(func=cmd_oracle_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                return args.func(args)
        return args.func(args)
    except UnobsError as exc:
        print(f"unobs: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
