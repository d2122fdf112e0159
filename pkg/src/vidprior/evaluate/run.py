"""Sample from a checkpoint and score the samples against held-out clips."""

from __future__ import annotations

import os
from typing import Optional

import numpy as np

from ..config import RunConfig
from ..net import tsr_appearnet_input
from ..prior import AppearancePrior, make_rng
from ..sampler import SamplerConfig, sample
from ..schedule import from_params
from ..train.checkpoint import Checkpoint, load_checkpoint
from ..train.data import read_dataset, stack_latents
from ..train.loop import model_from_checkpoint
from .metrics import RandomVideoFeaturizer, feature_stats, frechet_distance, temporal_consistency
from .report import dump_clip, write_report


def select_conditioning(latents: np.ndarray, class_ids: np.ndarray, per_class: int, num_classes: int) -> np.ndarray:
    """Indices of the first ``per_class`` clips of every class, class-major."""
    idx = []
    for c in range(num_classes):
        found = np.flatnonzero(class_ids == c)[:per_class]
        if len(found) < per_class:
            raise ValueError(f"held-out set has {len(found)} clips of class {c}, need {per_class}")
        idx.append(found)
    return np.concatenate(idx)


def generate(model, schedule, latents: np.ndarray, class_ids: np.ndarray, sampler_cfg: SamplerConfig,
             mode: str = "base", batch: int = 48) -> np.ndarray:
    """Sample one clip per conditioning clip, in batches, from a single generator."""
    rng = make_rng(sampler_cfg.seed)
    dtype = model.conv_out.spatial.weight.data.dtype
    out = []
    N = model.cfg.num_frames
    for s in range(0, len(latents), batch):
        lat = np.asarray(latents[s:s + batch], dtype=dtype)
        if mode == "tsr":
            seq = np.stack([tsr_appearnet_input(c[0], c[-1], N) for c in lat]).astype(dtype)
            null = np.full(len(lat), model.cfg.null_cond)
            out.append(sample(model, None, null, sampler_cfg, schedule, appear_input=seq, rng=rng))
        else:
            out.append(sample(model, lat[:, lat.shape[1] // 2], class_ids[s:s + batch], sampler_cfg, schedule,
                              rng=rng))
    return np.concatenate(out, axis=0)


def eval_run(checkpoint, dataset, config: RunConfig, seed: int = 0, out_dir: Optional[str] = None,
             real_stats=None) -> dict:
    """Metrics for one checkpoint.

    ``dataset`` is a directory with a manifest or a (latents, class_ids)
    pair; ``real_stats`` may carry precomputed features of that set.
    Writes ``report.txt`` and PPM frames under ``out_dir`` when given.
    """
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    model = model_from_checkpoint(ckpt)
    schedule = from_params(ckpt.schedule)
    mode = ckpt.train_config.get("mode", "base")
    if isinstance(dataset, (str, os.PathLike)):
        clips = read_dataset(dataset)
        latents = stack_latents(clips)
        class_ids = np.array([c.condition_id for c in clips])
    else:
        latents, class_ids = dataset
    latents = np.asarray(latents, dtype=np.float64)
    if latents.shape[1] != model.cfg.num_frames:
        raise ValueError(f"held-out clips have {latents.shape[1]} frames, model expects {model.cfg.num_frames}")
    ncls = model.cfg.cond_vocab_size
    idx = select_conditioning(latents, class_ids, config.eval_clips_per_class, ncls)
    cond_lat, cond_ids = latents[idx], class_ids[idx]
    sampler_cfg = SamplerConfig(steps=config.sample_steps, guidance_scale=config.guidance_scale,
                                prior=AppearancePrior(float(ckpt.prior_lambda), config.prior_gamma), seed=seed)
    gen = generate(model, schedule, cond_lat, cond_ids, sampler_cfg, mode, config.eval_batch).astype(np.float64)

    featurizer = RandomVideoFeaturizer(latents.shape[2], seed=config.feature_seed)
    if real_stats is None:
        real_stats = feature_stats(featurizer(latents))
    gen_stats = feature_stats(featurizer(gen))
    N = gen.shape[1]
    metrics = {
        "checkpoint_step": int(ckpt.step),
        "mode": mode,
        "injection_mode": model.cfg.injection_mode,
        "prior_lambda": float(ckpt.prior_lambda),
        "prior_gamma": float(config.prior_gamma),
        "sample_steps": int(config.sample_steps),
        "guidance_scale": float(config.guidance_scale),
        "seed": int(seed),
        "num_generated": int(len(gen)),
        "num_real": int(len(latents)),
        "frechet_proxy": frechet_distance(real_stats, gen_stats),
        "temporal_consistency_generated": float(np.mean([temporal_consistency(c) for c in gen])),
        "temporal_consistency_real": float(np.mean([temporal_consistency(c) for c in latents])),
    }
    if mode == "tsr":
        ends = np.concatenate([gen[:, 0] - cond_lat[:, 0], gen[:, -1] - cond_lat[:, -1]])
        metrics["endpoint_mse"] = float(np.mean(ends ** 2))
    else:
        metrics["center_mse"] = float(np.mean((gen[:, N // 2] - cond_lat[:, N // 2]) ** 2))
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        per = config.dump_clips_per_class
        for c in range(ncls):
            for j in range(min(per, config.eval_clips_per_class)):
                k = c * config.eval_clips_per_class + j
                dump_clip(os.path.join(out_dir, "frames"), f"class{c}_clip{j}", gen[k])
        write_report(os.path.join(out_dir, "report.txt"), metrics)
    metrics["_generated"] = gen
    metrics["_conditioning"] = cond_lat
    return metrics
