"""Flat ``key = value`` run configuration shared by every CLI subcommand.

Blank lines and ``#`` comments are ignored. Values are parsed according to
the type of the field's default: integers, floats, booleans
(true/false/yes/no/1/0), comma-separated integer lists, or bare strings.
Unknown or repeated keys are errors.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Optional

from .net import UNetConfig
from .prior import AppearancePrior
from .sampler import SamplerConfig
from .schedule import NoiseSchedule, linear_schedule
from .train.data import SpriteDatasetConfig
from .train.loop import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # network
    in_channels: int = 4
    base_channels: int = 32
    channel_multipliers: tuple = (1, 2, 4)
    attention_levels: tuple = (1, 2)
    head_channels: int = 16
    temporal_kernel: int = 3
    num_frames: int = 9
    cond_vocab_size: int = 6
    cond_embed_dim: int = 64
    injection_mode: str = "add-encdec-spade"
    groups: int = 8
    spade_clip_norm: bool = False
    init_seed: int = 0
    output_skip: bool = True
    # noise schedule
    num_timesteps: int = 1000
    beta_start: float = 0.00085
    beta_end: float = 0.0120
    schedule_kind: str = "linear"
    # training
    mode: str = "base"
    lr_temporal: float = 2e-5
    lr_spatial: float = -1.0  # negative: a tenth of lr_temporal
    batch_size: int = 2
    steps: int = 1000
    cond_drop_rate: float = 0.1
    prior_lambda: float = 0.03
    checkpoint_every: int = 0
    log_every: int = 100
    ema: bool = False
    # data
    data_dir: str = ""
    resolution: int = 16
    fps: float = 2.0
    clips_per_class: int = 32
    speed: int = 1
    data_seed: int = 0
    tsr_frames: int = 5
    # sampling
    sample_steps: int = 50
    guidance_scale: float = 7.5
    prior_gamma: float = 0.02
    # evaluation
    eval_clips_per_class: int = 16
    eval_batch: int = 48
    feature_seed: int = 0
    dump_clips_per_class: int = 1

    def unet(self) -> UNetConfig:
        names = {f.name for f in fields(UNetConfig)}
        return UNetConfig(**{k: getattr(self, k) for k in names})

    def schedule(self) -> NoiseSchedule:
        return linear_schedule(self.num_timesteps, self.beta_start, self.beta_end, self.schedule_kind)

    def train(self, seed: int) -> TrainConfig:
        return TrainConfig(
            lr_temporal=self.lr_temporal,
            lr_spatial=None if self.lr_spatial < 0 else self.lr_spatial,
            batch_size=self.batch_size,
            steps=self.steps,
            cond_drop_rate=self.cond_drop_rate,
            prior_lambda=self.prior_lambda,
            seed=seed,
            mode=self.mode,
            ema=self.ema,
        )

    def dataset(self, seed: Optional[int] = None) -> SpriteDatasetConfig:
        return SpriteDatasetConfig(
            resolution=self.resolution,
            channels=self.in_channels,
            frames=self.num_frames if self.mode == "base" else 9,
            fps=self.fps,
            num_classes=self.cond_vocab_size,
            clips_per_class=self.clips_per_class,
            speed=self.speed,
            seed=self.data_seed if seed is None else seed,
        )

    def sampler(self, seed: int, prior_lambda: Optional[float] = None) -> SamplerConfig:
        lam = self.prior_lambda if prior_lambda is None else prior_lambda
        return SamplerConfig(steps=self.sample_steps, guidance_scale=self.guidance_scale,
                             prior=AppearancePrior(lam, self.prior_gamma), seed=seed)


_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _convert(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(p) for p in raw.replace(" ", "").split(",") if p)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from exc
    return raw


def parse_config(text: str, base: Optional[RunConfig] = None, source: str = "<config>") -> RunConfig:
    base = base or RunConfig()
    defaults = {f.name: getattr(base, f.name) for f in fields(RunConfig)}
    seen = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (p.strip() for p in line.split("=", 1))
        if key not in defaults:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: {key!r} already set on line {seen[key][0]}")
        seen[key] = (lineno, _convert(key, raw, defaults[key]))
    return replace(base, **{k: v for k, (_, v) in seen.items()})


def load_config(path: Optional[str], base: Optional[RunConfig] = None) -> RunConfig:
    if not path:
        return base or RunConfig()
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), base, source=path)


def format_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
