"""Synthetic sprite videos standing in for a real video corpus.

Each clip shows one soft-edged sprite (a disc or a square) whose motion is
determined by the class label. Trajectories are parameterized by a
continuous time tau measured in base frames relative to the center frame,
so base clips and the denser interpolation clips sample the same motion.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from ..prior import VideoClip, fork_rng, make_rng
from ..tensor import atns

CLASS_NAMES = ("translate-left", "translate-right", "translate-up", "translate-down", "rotate", "scale")
ROTATE_STEP = math.pi / 24  # radians per base frame
SCALE_STEP = 0.08  # relative radius change per base frame


@dataclass
class SpriteDatasetConfig:
    resolution: int = 16
    channels: int = 4
    frames: int = 9
    fps: float = 2.0
    num_classes: int = 6
    clips_per_class: int = 32
    speed: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.num_classes <= len(CLASS_NAMES):
            raise ValueError(f"num_classes must be in 1..{len(CLASS_NAMES)}")
        if self.frames < 1 or self.resolution < 4 or self.channels < 1:
            raise ValueError("frames, resolution and channels must be positive (resolution >= 4)")


@dataclass(frozen=True)
class Sprite:
    """Appearance and motion parameters of one clip, fixed before rendering."""

    class_id: int
    shape: str
    cx: float
    cy: float
    radius: float
    angle: float
    amplitudes: tuple
    speed: float

    def state(self, tau: float) -> tuple:
        """(cx, cy, radius, angle) at continuous time tau (0 = center frame)."""
        cx, cy, r, a = self.cx, self.cy, self.radius, self.angle
        name = CLASS_NAMES[self.class_id]
        if name == "translate-left":
            cx -= self.speed * tau
        elif name == "translate-right":
            cx += self.speed * tau
        elif name == "translate-up":
            cy -= self.speed * tau
        elif name == "translate-down":
            cy += self.speed * tau
        elif name == "rotate":
            a += ROTATE_STEP * self.speed * tau
        elif name == "scale":
            r *= 1.0 + SCALE_STEP * self.speed * tau
        return cx, cy, r, a


def draw_sprite(class_id: int, rng: np.random.Generator, config: SpriteDatasetConfig) -> Sprite:
    """Random appearance chosen so the sprite stays inside the frame for the whole clip."""
    res = config.resolution
    half = (config.frames - 1) / 2.0
    name = CLASS_NAMES[class_id]
    shape = "square" if name == "rotate" else ("disc" if rng.random() < 0.5 else "square")
    radius = rng.uniform(0.11, 0.16) * res
    reach = radius * (1.0 + SCALE_STEP * config.speed * half) if name == "scale" else radius
    if name == "rotate":
        reach *= math.sqrt(2.0)
    travel = config.speed * half
    lo_x = lo_y = reach + 1.0
    hi_x = hi_y = res - 2.0 - reach
    if name in ("translate-left", "translate-right"):
        lo_x, hi_x = lo_x + travel, hi_x - travel
    if name in ("translate-up", "translate-down"):
        lo_y, hi_y = lo_y + travel, hi_y - travel
    cx = rng.uniform(lo_x, max(lo_x, hi_x))
    cy = rng.uniform(lo_y, max(lo_y, hi_y))
    angle = rng.uniform(0.0, math.pi / 2) if name == "rotate" else 0.0
    amps = tuple(float(a) for a in rng.uniform(0.4, 1.0, config.channels))
    return Sprite(class_id, shape, float(cx), float(cy), float(radius), float(angle), amps, float(config.speed))


def render(sprite: Sprite, tau: float, resolution: int) -> np.ndarray:
    """[C,H,W] frame with values in [-1, 1]; background is -1."""
    cx, cy, r, a = sprite.state(tau)
    ys, xs = np.mgrid[0:resolution, 0:resolution].astype(np.float64)
    dx, dy = xs - cx, ys - cy
    if sprite.shape == "disc":
        dist = np.hypot(dx, dy)
    else:
        c, s = math.cos(a), math.sin(a)
        dist = np.maximum(np.abs(c * dx + s * dy), np.abs(-s * dx + c * dy))
    mask = np.clip(r - dist + 0.5, 0.0, 1.0)
    amps = np.asarray(sprite.amplitudes)[:, None, None]
    return -1.0 + 2.0 * amps * mask[None]


def synth_clip(class_id: int, rng: np.random.Generator, config: SpriteDatasetConfig) -> VideoClip:
    if not 0 <= class_id < config.num_classes:
        raise ValueError(f"class {class_id} outside 0..{config.num_classes - 1}")
    sprite = draw_sprite(class_id, rng, config)
    half = config.frames // 2
    frames = [render(sprite, i - half, config.resolution) for i in range(config.frames)]
    return VideoClip(np.stack(frames), fps=config.fps, condition_id=int(class_id))


def synth_tsr_clip(class_id: int, rng: np.random.Generator, config: SpriteDatasetConfig,
                   frames: int = 5) -> VideoClip:
    """A dense clip spanning two adjacent base frames: first and last frames
    coincide with base-rate frames, the ones between are rendered at
    fractional times (fps multiplied by frames - 1)."""
    sprite = draw_sprite(class_id, rng, config)
    half = config.frames // 2
    start = int(rng.integers(-half, config.frames - 1 - half))
    taus = start + np.arange(frames) / (frames - 1)
    clip = np.stack([render(sprite, float(t), config.resolution) for t in taus])
    return VideoClip(clip, fps=config.fps * (frames - 1), condition_id=int(class_id))


def make_dataset(config: SpriteDatasetConfig, tsr_frames: int = 0) -> list:
    """Class-major list of clips; clip k uses stream k forked from the dataset seed."""
    root = make_rng(config.seed)
    clips = []
    for c in range(config.num_classes):
        for j in range(config.clips_per_class):
            rng = fork_rng(root, c * config.clips_per_class + j)
            if tsr_frames:
                clips.append(synth_tsr_clip(c, rng, config, tsr_frames))
            else:
                clips.append(synth_clip(c, rng, config))
    return clips


def stack_latents(clips: list, dtype=np.float64) -> np.ndarray:
    return np.stack([np.asarray(c.latent, dtype=dtype) for c in clips])


MANIFEST = "manifest.txt"


def write_dataset(clips: list, out_dir: str) -> str:
    """Write one ATNS file per clip plus ``manifest.txt`` (path class_id fps)."""
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for i, clip in enumerate(clips):
        name = f"clip_{i:05d}.atns"
        atns.save(os.path.join(out_dir, name), np.asarray(clip.latent))
        lines.append(f"{name} {clip.condition_id} {clip.fps:g}")
    path = os.path.join(out_dir, MANIFEST)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_dataset(data_dir: str) -> list:
    path = os.path.join(data_dir, MANIFEST)
    if not os.path.exists(path):
        raise FileNotFoundError(f"no {MANIFEST} in {data_dir}")
    clips = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 'path class_id fps', got {line!r}")
            latent = atns.load(os.path.join(data_dir, parts[0]))
            clips.append(VideoClip(latent, fps=float(parts[2]), condition_id=int(parts[1])))
    return clips
