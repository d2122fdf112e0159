"""Fréchet proxy over a fixed random video featurizer, plus temporal consistency."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .. import tensor as tt
from ..prior import VideoClip, make_rng

FEATURE_DIM = 64
_STAGES = (16, 32, FEATURE_DIM)


@dataclass
class FeatureStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int = 0

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


class RandomVideoFeaturizer:
    """Three stride-2 conv stages, each followed by a temporal conv, then a
    mean over frames and pixels. Weights depend only on the seed.

    ``linear=True`` bypasses the nonlinearity, which makes the map affine.
    """

    def __init__(self, in_channels: int, seed: int = 0, linear: bool = False, temporal_kernel: int = 3):
        rng = make_rng(seed)
        self.linear = linear
        self.layers = []
        cin = in_channels
        for cout in _STAGES:
            w = rng.standard_normal((cout, cin, 3, 3)) / np.sqrt(cin * 9)
            b = 0.1 * rng.standard_normal(cout)
            wt = rng.standard_normal((cout, cout, temporal_kernel)) / np.sqrt(cout * temporal_kernel)
            self.layers.append((w, b, wt))
            cin = cout

    def _act(self, x: np.ndarray) -> np.ndarray:
        return x if self.linear else np.maximum(x, 0.2 * x)

    def __call__(self, clips: np.ndarray, batch: int = 64) -> np.ndarray:
        """[M,N,C,H,W] -> [M, 64] features, computed in float64."""
        clips = np.asarray(clips, dtype=np.float64)
        out = []
        with tt.no_grad(), tt.default_dtype("f64"):
            for s in range(0, len(clips), batch):
                out.append(self._embed(clips[s:s + batch]))
        return np.concatenate(out, axis=0)

    def _embed(self, x: np.ndarray) -> np.ndarray:
        M, N = x.shape[:2]
        h = x.reshape((M * N,) + x.shape[2:])
        for w, b, wt in self.layers:
            h = tt.conv2d(tt.Tensor(h), tt.Tensor(w), tt.Tensor(b), stride=2, padding=1).data
            _, C, H, W = h.shape
            v = h.reshape(M, N, C, H, W).transpose(0, 2, 1, 3, 4)
            kt = wt.shape[-1]
            if N >= kt:
                v = v + tt.conv1d_temporal(tt.Tensor(np.ascontiguousarray(v)), tt.Tensor(wt)).data
            h = self._act(v.transpose(0, 2, 1, 3, 4).reshape(M * N, C, H, W))
        _, C, H, W = h.shape
        return h.reshape(M, N, C, H * W).mean(axis=(1, 3))


def _as_array(clips) -> np.ndarray:
    if isinstance(clips, np.ndarray):
        return clips
    return np.stack([np.asarray(c.latent if isinstance(c, VideoClip) else c) for c in clips])


def feature_stats(features: np.ndarray) -> FeatureStats:
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or len(f) == 0:
        raise ValueError(f"need a non-empty [M, d] feature matrix, got {f.shape}")
    if len(f) < f.shape[1] + 1:
        warnings.warn(f"{len(f)} samples for {f.shape[1]} features: covariance is rank deficient", stacklevel=2)
    mean = f.mean(axis=0)
    d = f - mean
    cov = d.T @ d / max(len(f) - 1, 1)
    cov = 0.5 * (cov + cov.T)
    return FeatureStats(mean, cov, len(f))


def featurize(clips, seed: int = 0, linear: bool = False) -> FeatureStats:
    """Sample mean and covariance of the random-network embeddings of ``clips``."""
    arr = _as_array(clips) if len(clips) else np.zeros((0,))
    if arr.ndim != 5 or len(arr) == 0:
        raise ValueError("featurize needs a non-empty list of [N,C,H,W] clips")
    net = RandomVideoFeaturizer(arr.shape[2], seed=seed, linear=linear)
    return feature_stats(net(arr))


def _sqrt_psd(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (a + a.T))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)."""
    if a.mean.shape != b.mean.shape or a.cov.shape != b.cov.shape:
        raise ValueError(f"feature dimensions differ: {a.mean.shape} vs {b.mean.shape}")
    try:
        sa = _sqrt_psd(a.cov)
        m = sa @ b.cov @ sa
        eig = np.linalg.eigvalsh(0.5 * (m + m.T))
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"eigendecomposition failed: {exc}") from exc
    diff = a.mean - b.mean
    value = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.sqrt(np.clip(eig, 0.0, None)).sum())
    return max(value, 0.0)


def temporal_consistency(clip) -> float:
    """Mean over adjacent frame pairs of the RMS difference (L2 norm over sqrt of element count)."""
    x = np.asarray(clip.latent if isinstance(clip, VideoClip) else clip, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValueError("temporal consistency needs at least two frames")
    d = np.diff(x, axis=0).reshape(x.shape[0] - 1, -1)
    return float(np.mean(np.sqrt(np.mean(d * d, axis=1))))


def class_shuffled(latents: np.ndarray, class_ids: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Negative baseline: frame n of clip i is frame n of a random clip of another class.

    Per-frame marginals are unchanged; only the motion structure is broken.
    """
    latents = np.asarray(latents)
    class_ids = np.asarray(class_ids)
    out = np.empty_like(latents)
    for i in range(len(latents)):
        pool = np.flatnonzero(class_ids != class_ids[i])
        if len(pool) == 0:
            raise ValueError("class shuffling needs at least two classes")
        out[i] = latents[rng.choice(pool, size=latents.shape[1]), np.arange(latents.shape[1])]
    return out


def frechet_sanity(latents: np.ndarray, class_ids: np.ndarray, seed: int = 0, feature_seed: int = 0) -> dict:
    """Real-vs-real split score against real-vs-class-shuffled score."""
    rng = make_rng(seed)
    perm = rng.permutation(len(latents))
    a, b = perm[: len(perm) // 2], perm[len(perm) // 2:]
    net = RandomVideoFeaturizer(np.asarray(latents).shape[2], seed=feature_seed)
    feats = net(latents)
    ref = feature_stats(feats[a])
    split = frechet_distance(ref, feature_stats(feats[b]))
    shuffled = frechet_distance(ref, feature_stats(net(class_shuffled(latents[b], class_ids[b], rng))))
    return {"real_vs_real": split, "real_vs_shuffled": shuffled, "ratio": split / shuffled}
