"""Appearance noise prior: training noise, forward process, sampling init.

The prior adds ``lam * z_c`` (the center frame latent, identical for every
frame) to i.i.d. Gaussian noise. During training this shifted noise is both
what gets mixed into the clip and what the network regresses. At sampling
time only the initial noise changes, to ``(lam + gamma) * z_c + N(0, I)``.

Random numbers come from numpy's counter-based Philox generator keyed by
``SeedSequence(seed)``; forks advance the counter by disjoint 2**128 jumps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .schedule import NoiseSchedule


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def fork_rng(rng: np.random.Generator, index: int) -> np.random.Generator:
    """Independent stream number ``index`` derived from ``rng``'s current state."""
    return np.random.Generator(rng.bit_generator.jumped(int(index) + 1))


def rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def rng_from_state(state: dict) -> np.random.Generator:
    bg = np.random.Philox()
    bg.state = state
    return np.random.Generator(bg)


@dataclass(frozen=True)
class AppearancePrior:
    lam: float = 0.03
    gamma: float = 0.02

    def __post_init__(self):
        if not (self.lam >= 0 and self.gamma >= 0):
            raise ValueError(f"prior strengths must be non-negative, got lam={self.lam}, gamma={self.gamma}")

    @property
    def sampling_strength(self) -> float:
        return self.lam + self.gamma


@dataclass
class VideoClip:
    """Latent clip [N,C,H,W] plus the metadata used for conditioning."""

    latent: np.ndarray
    fps: float = 2.0
    condition_id: int = 0

    @property
    def num_frames(self) -> int:
        return self.latent.shape[0]

    @property
    def center_index(self) -> int:
        return self.num_frames // 2

    @property
    def center_frame(self) -> np.ndarray:
        return self.latent[self.center_index]

    @property
    def first_frame(self) -> np.ndarray:
        return self.latent[0]

    @property
    def last_frame(self) -> np.ndarray:
        return self.latent[-1]


def _frame_prior(z_c: np.ndarray, frames_shape: tuple) -> np.ndarray:
    """Broadcast a [...,C,H,W] center frame (or a per-frame [...,N,C,H,W]
    prior) against noise of shape [...,N,C,H,W]."""
    z_c = np.asarray(z_c)
    if z_c.shape == frames_shape:
        return z_c
    if z_c.shape[-3:] != frames_shape[-3:] or z_c.ndim != len(frames_shape) - 1 or \
            z_c.shape[:-3] != frames_shape[:-4]:
        raise ValueError(f"center frame shape {z_c.shape} does not match noise frames {frames_shape}")
    return z_c[..., None, :, :, :]


def make_training_noise(eps_n: np.ndarray, z_c: np.ndarray, lam: float) -> np.ndarray:
    """eps^i = lam * z_c + eps_n^i for every frame i."""
    eps_n = np.asarray(eps_n)
    if eps_n.ndim < 4:
        raise ValueError(f"noise must be [...,N,C,H,W], got {eps_n.shape}")
    prior = _frame_prior(z_c, eps_n.shape).astype(eps_n.dtype, copy=False)
    return eps_n.dtype.type(lam) * prior + eps_n


def _step_coeffs(t, schedule: NoiseSchedule, ndim: int, dtype):
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > schedule.T) or not np.all(t == np.floor(t)):
        raise ValueError(f"diffusion step(s) {t} outside 1..{schedule.T}")
    ab = schedule.alpha_bars[t.astype(np.int64) - 1]
    shape = ab.shape + (1,) * (ndim - ab.ndim)
    return np.sqrt(ab).reshape(shape).astype(dtype), np.sqrt(1.0 - ab).reshape(shape).astype(dtype)


def q_sample(z0: np.ndarray, t, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps.

    ``t`` is a single step or one step per leading batch entry; ``eps`` is the
    (already prior-shifted) noise from :func:`make_training_noise`.
    """
    z0 = np.asarray(z0)
    eps = np.asarray(eps)
    if z0.shape != eps.shape:
        raise ValueError(f"clip {z0.shape} and noise {eps.shape} differ")
    a, s = _step_coeffs(t, schedule, z0.ndim, z0.dtype)
    return a * z0 + s * eps


def initial_sampling_noise(z_c: np.ndarray, lam: float, gamma: float, rng: np.random.Generator,
                           num_frames: int, dtype=None) -> np.ndarray:
    """Per frame: (lam + gamma) * z_c + a fresh standard normal draw.

    ``z_c`` is [C,H,W] or batched [B,C,H,W]; the result inserts a frame axis
    of length ``num_frames`` before the channel axis.
    """
    z_c = np.asarray(z_c)
    dtype = dtype or z_c.dtype
    shape = z_c.shape[:-3] + (int(num_frames),) + z_c.shape[-3:]
    noise = rng.standard_normal(shape, dtype=dtype)
    return shift_noise(noise, z_c, lam + gamma)


def shift_noise(noise: np.ndarray, z_c: np.ndarray, strength: float) -> np.ndarray:
    return noise.dtype.type(strength) * _frame_prior(z_c, noise.shape).astype(noise.dtype) + noise


def standard_noise(rng: np.random.Generator, shape, dtype=np.float64, out: Optional[np.ndarray] = None):
    return rng.standard_normal(shape, dtype=dtype, out=out)
