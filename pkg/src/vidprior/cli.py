"""Command-line entry point: ``vidprior <subcommand> [options]``.

Subcommands: make-data, train, sample, interpolate, eval, verify. Global
flags (``--seed``, ``--precision``, ``--config``) come before the
subcommand. Every subcommand is deterministic given ``--seed``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from typing import Optional

import numpy as np

from . import tensor as tt
from .config import ConfigError, RunConfig, format_config, load_config
from .evaluate.report import dump_clip, format_report
from .evaluate.run import eval_run
from .evaluate.verify import SUITES, run_suites
from .net import UNet3D
from .prior import AppearancePrior
from .sampler import SamplerConfig, sample
from .schedule import from_params
from .tensor import atns
from .train.checkpoint import load_checkpoint
from .train.data import make_dataset, read_dataset, stack_latents, write_dataset
from .train.loop import Trainer, model_from_checkpoint

log = logging.getLogger("vidprior")


def _dtype(args) -> type:
    return np.float64 if args.precision == "f64" else np.float32


def _load_dataset(path: str):
    clips = read_dataset(path)
    return stack_latents(clips), np.array([c.condition_id for c in clips], dtype=np.int64)


def cmd_make_data(args, cfg: RunConfig) -> int:
    dcfg = cfg.dataset(args.seed)
    if args.clips_per_class is not None:
        dcfg = replace(dcfg, clips_per_class=args.clips_per_class)
    frames = cfg.tsr_frames if cfg.mode == "tsr" else 0
    clips = make_dataset(dcfg, tsr_frames=frames)
    path = write_dataset(clips, args.out)
    print(f"wrote {len(clips)} clips to {path}")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    data_dir = args.data or cfg.data_dir
    if not data_dir:
        raise SystemExit("train: --data (or data_dir in the config) is required")
    latents, class_ids = _load_dataset(data_dir)
    if args.steps is not None:
        cfg = replace(cfg, steps=args.steps)
    if cfg.mode == "tsr":
        cfg = replace(cfg, num_frames=latents.shape[1])
    if args.resume:
        trainer = Trainer.resume(args.resume, latents, class_ids, dtype=_dtype(args))
        trainer.config = replace(trainer.config, steps=cfg.steps)
    else:
        with tt.default_dtype(_dtype(args)):
            model = UNet3D(cfg.unet())
        trainer = Trainer(model, cfg.schedule(), cfg.train(args.seed), latents, class_ids,
                          extra={"config": format_config(cfg)})
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    every = cfg.checkpoint_every
    while trainer.step_count < cfg.steps:
        n = cfg.steps - trainer.step_count
        if every:
            n = min(n, every - trainer.step_count % every)
        trainer.run(n, log_every=cfg.log_every)
        if every:
            trainer.save(args.out)
    trainer.save(args.out)
    recent = trainer.losses[-cfg.log_every:] if trainer.losses else [float("nan")]
    print(f"step {trainer.step_count} loss {np.mean(recent):.6f} -> {args.out}")
    return 0


def _sampler_config(args, cfg: RunConfig, ckpt) -> SamplerConfig:
    lam = ckpt.prior_lambda if args.prior_lambda is None else args.prior_lambda
    gamma = cfg.prior_gamma if args.prior_gamma is None else args.prior_gamma
    return SamplerConfig(steps=args.steps or cfg.sample_steps,
                         guidance_scale=cfg.guidance_scale if args.cfg is None else args.cfg,
                         prior=AppearancePrior(float(lam), float(gamma)), seed=args.seed)


def _write_clip(out_dir: str, stem: str, clip: np.ndarray) -> None:
    os.makedirs(out_dir, exist_ok=True)
    atns.save(os.path.join(out_dir, f"{stem}.atns"), clip)
    dump_clip(os.path.join(out_dir, "frames"), stem, clip)


def cmd_sample(args, cfg: RunConfig) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt, _dtype(args))
    z_c = atns.load(args.center_frame)
    scfg = _sampler_config(args, cfg, ckpt)
    clip = sample(model, z_c, args.cond, scfg, from_params(ckpt.schedule), fps=cfg.fps)
    _write_clip(args.out, "sample", clip.latent)
    print(f"wrote {clip.latent.shape} clip to {args.out}")
    return 0


def cmd_interpolate(args, cfg: RunConfig) -> int:
    from .net import tsr_appearnet_input

    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt, _dtype(args))
    first, last = atns.load(args.first), atns.load(args.last)
    seq = tsr_appearnet_input(first, last, model.cfg.num_frames)
    scfg = _sampler_config(args, cfg, ckpt)
    clip = sample(model, None, model.cfg.null_cond, scfg, from_params(ckpt.schedule), appear_input=seq,
                  fps=cfg.fps * (model.cfg.num_frames - 1))
    _write_clip(args.out, "interpolated", clip.latent)
    print(f"wrote {clip.latent.shape} clip to {args.out}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    with tt.default_dtype(_dtype(args)):
        metrics = eval_run(args.checkpoint, args.data, cfg, seed=args.seed, out_dir=args.out)
    print(format_report({k: v for k, v in metrics.items() if not k.startswith("_")}), end="")
    return 0


def cmd_verify(args, cfg: RunConfig) -> int:
    ok, _ = run_suites(args.suite, seed=args.seed)
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vidprior", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision", choices=("f32", "f64"), default="f32")
    p.add_argument("--config", help="key = value run configuration file")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("make-data", help="render the synthetic sprite dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--clips-per-class", type=int)
    s.set_defaults(func=cmd_make_data)

    s = sub.add_parser("train", help="train or resume a model")
    s.add_argument("--data")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--steps", type=int, help="total step count to reach")
    s.add_argument("--resume", help="checkpoint to continue from")
    s.set_defaults(func=cmd_train)

    for name, helptext in (("sample", "generate a clip around a center frame"),
                           ("interpolate", "generate the frames between two given frames")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--checkpoint", required=True)
        if name == "sample":
            s.add_argument("--center-frame", required=True, help="[C,H,W] ATNS file")
            s.add_argument("--cond", type=int, required=True)
        else:
            s.add_argument("--first", required=True, help="[C,H,W] ATNS file")
            s.add_argument("--last", required=True, help="[C,H,W] ATNS file")
        s.add_argument("--steps", type=int)
        s.add_argument("--cfg", type=float, help="guidance scale")
        s.add_argument("--prior-lambda", type=float)
        s.add_argument("--prior-gamma", type=float)
        s.add_argument("--out", required=True)
        s.set_defaults(func=cmd_sample if name == "sample" else cmd_interpolate)

    s = sub.add_parser("eval", help="score a checkpoint against held-out clips")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True, help="held-out dataset directory")
    s.add_argument("--out", help="report and frame dump directory")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("verify", help="run numerical verification suites")
    s.add_argument("suite", choices=sorted(SUITES) + ["all"])
    s.set_defaults(func=cmd_verify)
    return p


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args, cfg)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
