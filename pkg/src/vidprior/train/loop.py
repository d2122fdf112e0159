"""Noise-prediction training with the appearance prior.

Random numbers for one step are drawn from the trainer's generator in a
fixed order: clip indices, diffusion steps, base noise, condition-dropout
coins. Resuming from a checkpoint restores that generator, so a resumed
run repeats an uninterrupted one bit for bit.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields
from typing import Callable, Optional

import numpy as np

from .. import tensor as tt
from ..net import UNet3D, UNetConfig, tsr_appearnet_input
from ..prior import make_rng, make_training_noise, q_sample, rng_from_state, rng_state
from ..schedule import NoiseSchedule, from_params
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .optim import Adam

log = logging.getLogger(__name__)

MODES = ("base", "tsr")


@dataclass
class TrainConfig:
    lr_temporal: float = 2e-5
    lr_spatial: Optional[float] = None  # None: a tenth of lr_temporal
    batch_size: int = 2
    steps: int = 1000
    cond_drop_rate: float = 0.1
    prior_lambda: float = 0.03
    seed: int = 0
    mode: str = "base"
    ema: bool = False

    def __post_init__(self):
        if self.lr_spatial is None:
            self.lr_spatial = self.lr_temporal / 10.0
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "tsr":
            self.cond_drop_rate = 1.0
        if not 0.0 <= self.cond_drop_rate <= 1.0:
            raise ValueError(f"cond_drop_rate must lie in [0, 1], got {self.cond_drop_rate}")
        if not (self.lr_temporal >= 0 and self.lr_spatial >= 0):
            raise ValueError("learning rates must be non-negative")
        if self.prior_lambda < 0:
            raise ValueError("prior_lambda must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.ema:
            raise NotImplementedError("weight EMA is not implemented")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def conditioning(latents: np.ndarray, mode: str):
    """(center frame z_c [B,C,H,W], appearance sequence or None, prior source).

    Base mode conditions on the clip's own center frame. Interpolation mode
    feeds the linear blend of the first and last frames as the appearance
    sequence and applies the prior per frame from that blend.
    """
    B, N = latents.shape[:2]
    if mode == "base":
        z_c = latents[:, N // 2]
        return z_c, None, z_c
    seq = np.stack([tsr_appearnet_input(c[0], c[-1], N) for c in latents]).astype(latents.dtype, copy=False)
    return seq[:, N // 2], seq, seq


def draw_conditions(class_ids: np.ndarray, drop_rate: float, null_cond: int, rng: np.random.Generator,
                    mode: str = "base") -> np.ndarray:
    class_ids = np.asarray(class_ids, dtype=np.int64)
    if mode == "tsr":
        return np.full_like(class_ids, null_cond)
    drop = rng.random(class_ids.shape) < drop_rate
    return np.where(drop, null_cond, class_ids)


def loss(model, latents: np.ndarray, class_ids, t, rng: np.random.Generator, prior_lambda: float,
         schedule: NoiseSchedule, config: TrainConfig, null_cond: Optional[int] = None):
    """Mean squared error between the model output and the prior-shifted noise.

    Draws the base noise, then the dropout coins, from ``rng``. Returns
    (loss tensor, dict with the intermediate arrays).
    """
    latents = np.asarray(latents)
    if latents.ndim == 4:
        latents = latents[None]
    if null_cond is None:
        null_cond = model.cfg.null_cond
    z_c, seq, prior_src = conditioning(latents, config.mode)
    eps_n = rng.standard_normal(latents.shape, dtype=latents.dtype)
    eps = make_training_noise(eps_n, prior_src, prior_lambda)
    z_t = q_sample(latents, t, eps, schedule)
    cond = draw_conditions(np.broadcast_to(class_ids, latents.shape[:1]), config.cond_drop_rate, null_cond, rng,
                           config.mode)
    t_arr = np.broadcast_to(np.asarray(t), latents.shape[:1])
    out = model(z_t, t_arr, z_c, cond, appear_input=seq)
    return tt.mse(out, eps), {"eps": eps, "eps_n": eps_n, "z_t": z_t, "z_c": z_c, "cond": cond, "appear": seq}


def train_step(model, optimizer: Adam, batch: tuple, config: TrainConfig, schedule: NoiseSchedule,
               rng: np.random.Generator) -> float:
    """One Adam update on ``batch = (latents [B,N,C,H,W], class_ids [B])``."""
    latents, class_ids = batch
    t = rng.integers(1, schedule.T + 1, size=len(latents))
    optimizer.zero_grad()
    value, _ = loss(model, latents, class_ids, t, rng, config.prior_lambda, schedule, config)
    v = value.item()
    if not np.isfinite(v):
        tt.current_graph().reset()
        raise FloatingPointError(f"non-finite loss {v} (steps {t.tolist()}, conditions {list(class_ids)})")
    tt.backward(value)
    optimizer.step()
    return v


def build_optimizer(model: UNet3D, config: TrainConfig) -> Adam:
    return Adam(model.parameter_groups(), {"spatial": config.lr_spatial, "temporal": config.lr_temporal})


class Trainer:
    """Owns the model, optimizer, generator and step counter of one run."""

    def __init__(self, model: UNet3D, schedule: NoiseSchedule, config: TrainConfig, latents: np.ndarray,
                 class_ids, extra: Optional[dict] = None):
        if model.schedule.params() != schedule.params():
            raise ValueError(f"model was built for schedule {model.schedule.params()}, trainer got {schedule.params()}")
        self.model = model
        self.schedule = schedule
        self.config = config
        dtype = model.conv_out.spatial.weight.data.dtype
        self.latents = np.asarray(latents, dtype=dtype)
        self.class_ids = np.asarray(class_ids, dtype=np.int64)
        if len(self.latents) != len(self.class_ids) or len(self.latents) == 0:
            raise ValueError("need a non-empty dataset with one class id per clip")
        if self.latents.shape[1] != model.cfg.num_frames:
            raise ValueError(f"dataset clips have {self.latents.shape[1]} frames, model expects {model.cfg.num_frames}")
        self.optimizer = build_optimizer(model, config)
        self.rng = make_rng(config.seed)
        self.step_count = 0
        self.losses = []
        self.extra = dict(extra or {})

    def next_batch(self) -> tuple:
        idx = self.rng.integers(0, len(self.latents), size=self.config.batch_size)
        return self.latents[idx], self.class_ids[idx]

    def step(self) -> float:
        v = train_step(self.model, self.optimizer, self.next_batch(), self.config, self.schedule, self.rng)
        self.step_count += 1
        self.losses.append(v)
        return v

    def run(self, steps: int, log_every: int = 0, callback: Optional[Callable] = None) -> list:
        out = []
        for _ in range(int(steps)):
            v = self.step()
            out.append(v)
            if log_every and self.step_count % log_every == 0:
                recent = self.losses[-log_every:]
                log.info("step %d loss %.5f", self.step_count, float(np.mean(recent)))
            if callback is not None:
                callback(self)
        return out

    # ------------------------------------------------------------------
    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            unet_config=self.model.cfg.to_dict(),
            schedule=self.schedule.params(),
            prior_lambda=self.config.prior_lambda,
            step=self.step_count,
            rng_state=rng_state(self.rng),
            params=self.model.state_dict(),
            optimizer=self.optimizer.state_dict(),
            train_config=self.config.to_dict(),
            extra=self.extra,
        )

    def save(self, path) -> None:
        save_checkpoint(path, self.checkpoint())

    @classmethod
    def resume(cls, ckpt, latents, class_ids, dtype=None) -> "Trainer":
        if not isinstance(ckpt, Checkpoint):
            ckpt = load_checkpoint(ckpt)
        model = model_from_checkpoint(ckpt, dtype)
        trainer = cls(model, from_params(ckpt.schedule), TrainConfig.from_dict(ckpt.train_config), latents,
                      class_ids, extra=ckpt.extra)
        trainer.optimizer.load_state_dict(ckpt.optimizer)
        trainer.rng = rng_from_state(ckpt.rng_state)
        trainer.step_count = int(ckpt.step)
        return trainer


def model_from_checkpoint(ckpt: Checkpoint, dtype=None) -> UNet3D:
    first = next(iter(ckpt.params.values()))
    with tt.default_dtype(dtype or first.dtype):
        model = UNet3D(UNetConfig.from_dict(ckpt.unet_config))
    model.load_state_dict(ckpt.params)
    return model
