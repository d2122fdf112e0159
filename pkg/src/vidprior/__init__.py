"""Image-conditioned video diffusion with an appearance noise prior, at toy scale.

Subpackages: ``tensor`` (numpy autodiff and the ATNS array format),
``net`` (the video U-Net), ``train`` (data, optimizer, checkpoints, loop)
and ``evaluate`` (metrics, verification suites, ablation driver).
"""

from .prior import AppearancePrior, VideoClip
from .sampler import SamplerConfig, sample
from .schedule import NoiseSchedule, linear_schedule

__version__ = "0.1.0"

__all__ = ["AppearancePrior", "NoiseSchedule", "SamplerConfig", "VideoClip", "linear_schedule", "sample"]
