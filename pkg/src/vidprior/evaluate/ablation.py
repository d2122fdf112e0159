"""Toy-scale ablation: prior strength and injection variant on the sprite set.

Three arms are trained for every seed:

* ``spade-vanilla``: SPADE injection, no appearance prior (lambda = gamma = 0);
* ``spade-prior``: SPADE injection with the prior (lambda = 0.03, gamma = 0.02);
* ``add-dec-prior``: additive decoder-only injection with the prior.

Each run is scored with the Frechet proxy against a large held-out set.
A separate pair of runs (base and interpolation) measures how faithfully
the interpolation model reproduces its conditioning endpoints.

Checkpoints are cached under ``work_dir`` so an interrupted sweep resumes
where it stopped.
"""

from __future__ import annotations

import os
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .. import tensor as tt
from ..net import UNet3D, UNetConfig
from ..prior import AppearancePrior
from ..sampler import SamplerConfig
from ..schedule import linear_schedule
from ..train.checkpoint import load_checkpoint
from ..train.data import SpriteDatasetConfig, make_dataset, stack_latents
from ..train.loop import Trainer, TrainConfig, model_from_checkpoint
from .metrics import RandomVideoFeaturizer, feature_stats, frechet_distance
from .run import generate, select_conditioning


@dataclass(frozen=True)
class Arm:
    name: str
    injection_mode: str
    lam: float
    gamma: float


ARMS = (
    Arm("spade-vanilla", "add-encdec-spade", 0.0, 0.0),
    Arm("spade-prior", "add-encdec-spade", 0.03, 0.02),
    Arm("add-dec-prior", "add-dec", 0.03, 0.02),
)


@dataclass
class AblationConfig:
    seeds: tuple = (0, 1, 2)
    steps: int = 5000
    lr_temporal: float = 2e-3
    # the toy runs train from scratch, so spatial layers get the full rate
    lr_spatial: float = 2e-3
    batch_size: int = 2
    train_clips_per_class: int = 64
    heldout_clips_per_class: int = 800
    eval_clips_per_class: int = 16
    sample_steps: int = 50
    guidance_scale: float = 7.5
    tsr_steps: int = 5000
    tsr_frames: int = 5
    tsr_eval_pairs_per_class: int = 16
    data_seed: int = 0
    heldout_seed: int = 1
    feature_seed: int = 0
    precision: str = "f32"
    unet: dict = field(default_factory=lambda: dict(base_channels=8, channel_multipliers=(1, 2, 2),
                                                    attention_levels=(1, 2), head_channels=8, groups=4))

    def unet_config(self, injection_mode: str, seed: int, num_frames: int = 9) -> UNetConfig:
        return UNetConfig(injection_mode=injection_mode, init_seed=seed, num_frames=num_frames, **self.unet)

    def train_config(self, lam: float, seed: int, mode: str = "base") -> TrainConfig:
        return TrainConfig(lr_temporal=self.lr_temporal, lr_spatial=self.lr_spatial, batch_size=self.batch_size,
                           steps=self.tsr_steps if mode == "tsr" else self.steps, prior_lambda=lam, seed=seed,
                           mode=mode)


def _train(cfg: AblationConfig, unet_cfg: UNetConfig, tcfg: TrainConfig, latents, class_ids, path: Optional[str],
           emit: Callable) -> UNet3D:
    """Train (or resume) one run; the final checkpoint doubles as a cache entry."""
    if path and os.path.exists(path):
        ckpt = load_checkpoint(path)
        if ckpt.step >= tcfg.steps:
            return model_from_checkpoint(ckpt)
        trainer = Trainer.resume(ckpt, latents, class_ids)
    else:
        with tt.default_dtype(cfg.precision):
            trainer = Trainer(UNet3D(unet_cfg), linear_schedule(), tcfg, latents, class_ids)
    t0 = time.perf_counter()
    chunk = 500
    while trainer.step_count < tcfg.steps:
        n = min(chunk, tcfg.steps - trainer.step_count)
        trainer.run(n)
        emit(f"  step {trainer.step_count} loss {np.mean(trainer.losses[-n:]):.4f} "
             f"({time.perf_counter() - t0:.0f}s)")
        if path:
            trainer.save(path)
    return trainer.model


class _Data:
    """Training and held-out sets plus held-out feature statistics (built once)."""

    def __init__(self, cfg: AblationConfig):
        base = SpriteDatasetConfig(clips_per_class=cfg.train_clips_per_class, seed=cfg.data_seed)
        train = make_dataset(base)
        self.latents = stack_latents(train)
        self.class_ids = np.array([c.condition_id for c in train])
        held = make_dataset(replace(base, clips_per_class=cfg.heldout_clips_per_class, seed=cfg.heldout_seed))
        self.held = stack_latents(held)
        self.held_ids = np.array([c.condition_id for c in held])
        self.featurizer = RandomVideoFeaturizer(self.latents.shape[2], seed=cfg.feature_seed)
        self.held_stats = feature_stats(self.featurizer(self.held))


def score_arm(model: UNet3D, cfg: AblationConfig, data: _Data, arm: Arm, seed: int) -> float:
    idx = select_conditioning(data.held, data.held_ids, cfg.eval_clips_per_class, model.cfg.cond_vocab_size)
    scfg = SamplerConfig(steps=cfg.sample_steps, guidance_scale=cfg.guidance_scale,
                         prior=AppearancePrior(arm.lam, arm.gamma), seed=1000 + seed)
    gen = generate(model, linear_schedule(), data.held[idx], data.held_ids[idx], scfg)
    return frechet_distance(data.held_stats, feature_stats(data.featurizer(gen.astype(np.float64))))


def run_ablation(cfg: AblationConfig, work_dir: Optional[str] = None, emit: Callable[[str], None] = print,
                 data: Optional[_Data] = None) -> dict:
    """Frechet proxy per arm and seed, plus the two directional verdicts."""
    data = data or _Data(cfg)
    if work_dir:
        os.makedirs(work_dir, exist_ok=True)
    scores = {a.name: [] for a in ARMS}
    for seed in cfg.seeds:
        for arm in ARMS:
            emit(f"run {arm.name} seed {seed}")
            tcfg = cfg.train_config(arm.lam, seed)
            path = os.path.join(work_dir, f"{arm.name}_seed{seed}.ckpt") if work_dir else None
            model = _train(cfg, cfg.unet_config(arm.injection_mode, seed), tcfg, data.latents, data.class_ids,
                           path, emit)
            fd = score_arm(model, cfg, data, arm, seed)
            scores[arm.name].append(fd)
            emit(f"  frechet proxy {fd:.5g}")
    v, p, d = (np.array(scores[a.name]) for a in ARMS)
    wins_prior = int(np.sum(p < v))
    wins_spade = int(np.sum(p <= d))
    return {
        "scores": scores,
        "prior_wins": wins_prior,
        "spade_wins": wins_spade,
        "prior_beats_vanilla": wins_prior >= 2,
        "spade_not_worse_than_add_dec": wins_spade >= 2,
        "config": asdict(cfg),
    }


def run_tsr_fidelity(cfg: AblationConfig, work_dir: Optional[str] = None, emit: Callable[[str], None] = print,
                     data: Optional[_Data] = None, seed: int = 0) -> dict:
    """Endpoint MSE of the interpolation model against the base model's
    center-frame reconstruction MSE, both on held-out clips."""
    data = data or _Data(cfg)
    if work_dir:
        os.makedirs(work_dir, exist_ok=True)
    arm = ARMS[1]
    base_path = os.path.join(work_dir, f"{arm.name}_seed{seed}.ckpt") if work_dir else None
    emit(f"base run (seed {seed})")
    base = _train(cfg, cfg.unet_config(arm.injection_mode, seed), cfg.train_config(arm.lam, seed),
                  data.latents, data.class_ids, base_path, emit)

    dcfg = SpriteDatasetConfig(clips_per_class=cfg.train_clips_per_class, seed=cfg.data_seed + 10)
    tsr_train = make_dataset(dcfg, tsr_frames=cfg.tsr_frames)
    tsr_held = make_dataset(replace(dcfg, clips_per_class=cfg.tsr_eval_pairs_per_class, seed=cfg.heldout_seed + 10),
                            tsr_frames=cfg.tsr_frames)
    tl, tc = stack_latents(tsr_train), np.array([c.condition_id for c in tsr_train])
    hl = stack_latents(tsr_held)
    emit(f"interpolation run (seed {seed})")
    tsr_path = os.path.join(work_dir, f"tsr_seed{seed}.ckpt") if work_dir else None
    tsr = _train(cfg, cfg.unet_config(arm.injection_mode, seed, num_frames=cfg.tsr_frames),
                 cfg.train_config(arm.lam, seed, mode="tsr"), tl, tc, tsr_path, emit)

    sched = linear_schedule()
    idx = select_conditioning(data.held, data.held_ids, cfg.tsr_eval_pairs_per_class, base.cfg.cond_vocab_size)
    scfg = SamplerConfig(steps=cfg.sample_steps, guidance_scale=cfg.guidance_scale,
                         prior=AppearancePrior(arm.lam, arm.gamma), seed=2000 + seed)
    gen = generate(base, sched, data.held[idx], data.held_ids[idx], scfg).astype(np.float64)
    N = gen.shape[1]
    center_mse = float(np.mean((gen[:, N // 2] - data.held[idx][:, N // 2]) ** 2))
    # the interpolation model never sees a label, so guidance has nothing to amplify
    tcfg = replace(scfg, guidance_scale=1.0)
    tgen = generate(tsr, sched, hl, np.zeros(len(hl), dtype=np.int64), tcfg, mode="tsr").astype(np.float64)
    ends = np.concatenate([tgen[:, 0] - hl[:, 0], tgen[:, -1] - hl[:, -1]])
    endpoint_mse = float(np.mean(ends ** 2))
    return {
        "base_center_mse": center_mse,
        "tsr_endpoint_mse": endpoint_mse,
        "ratio": endpoint_mse / center_mse,
        "passed": endpoint_mse <= 10.0 * center_mse,
    }
