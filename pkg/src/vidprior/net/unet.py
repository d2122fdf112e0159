"""Image-and-label conditioned video U-Net with an appearance branch.

Injection modes:

* ``concat``: the replicated center frame is concatenated to the noisy clip
  on the channel axis; the appearance branch is not built.
* ``add-dec``: appearance-branch features are added (through zero-initialized
  1x1 convs) in front of the middle block and every decoder block.
* ``add-encdec``: as ``add-dec`` plus every encoder block.
* ``add-encdec-spade``: at the same points, the block's first group norm is
  replaced by a SPADE denormalization driven by the appearance features.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from .. import tensor as tt
from ..schedule import linear_schedule
from ..tensor import Module, Tensor
from .layers import (
    AttentionBlock,
    Conv2d,
    Downsample,
    FrameLayout,
    GroupNorm,
    Linear,
    ResBlock,
    STConv,
    Upsample,
    _param,
    initialize,
    sinusoidal_embedding,
)

INJECTION_MODES = ("concat", "add-dec", "add-encdec", "add-encdec-spade")


@dataclass
class UNetConfig:
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
    # output skip sqrt(1 - alpha_bar_t) * z_t; needs the training schedule
    output_skip: bool = True
    num_timesteps: int = 1000
    beta_start: float = 0.00085
    beta_end: float = 0.0120
    schedule_kind: str = "linear"

    def __post_init__(self):
        self.channel_multipliers = tuple(int(m) for m in self.channel_multipliers)
        self.attention_levels = tuple(int(a) for a in self.attention_levels)
        if self.injection_mode not in INJECTION_MODES:
            raise ValueError(f"injection_mode must be one of {INJECTION_MODES}, got {self.injection_mode!r}")
        if not self.channel_multipliers:
            raise ValueError("need at least one resolution level")
        for ch in self.channels:
            if ch % self.groups:
                raise ValueError(f"{self.groups} groups do not divide {ch} channels")
        if any(a < 0 or a >= len(self.channel_multipliers) for a in self.attention_levels):
            raise ValueError(f"attention levels {self.attention_levels} out of range")

    @property
    def channels(self) -> list:
        return [self.base_channels * m for m in self.channel_multipliers]

    @property
    def null_cond(self) -> int:
        return self.cond_vocab_size

    @property
    def uses_appearnet(self) -> bool:
        return self.injection_mode != "concat"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "UNetConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class Encoder(Module):
    """conv_in, one res block (+attention) per level with downsampling, and the middle."""

    def __init__(self, cfg: UNetConfig, in_channels: int, enc_spade: bool = False, mid_spade: bool = False):
        chs = cfg.channels
        kt, g, E = cfg.temporal_kernel, cfg.groups, cfg.cond_embed_dim
        self.conv_in = STConv(in_channels, chs[0], 3, 1, kt)
        self.blocks, self.attns, self.downs = [], [], []
        prev = chs[0]
        for j, ch in enumerate(chs):
            self.blocks.append(ResBlock(prev, ch, E, g, kt, spade_feat=prev if enc_spade else None,
                                        spade_clip_norm=cfg.spade_clip_norm))
            self.attns.append(AttentionBlock(ch, cfg.head_channels, g) if j in cfg.attention_levels else None)
            self.downs.append(Downsample(ch, kt) if j < len(chs) - 1 else None)
            prev = ch
        self.mid_block1 = ResBlock(prev, prev, E, g, kt)
        self.mid_attn = AttentionBlock(prev, cfg.head_channels, g)
        self.mid_block2 = ResBlock(prev, prev, E, g, kt, spade_feat=prev if mid_spade else None,
                                   spade_clip_norm=cfg.spade_clip_norm)

    def forward(self, x, emb, layout, enc_add=None, enc_spade=None, mid_add=None, mid_spade=None):
        """Returns (middle output, per-level skips, per-level block inputs)."""
        h = self.conv_in(x, layout)
        skips, block_inputs = [], []
        for j, block in enumerate(self.blocks):
            if enc_add is not None:
                h = tt.add(h, enc_add[j])
            block_inputs.append(h)
            h = block(h, emb, layout, feat=None if enc_spade is None else enc_spade[j])
            if self.attns[j] is not None:
                h = self.attns[j](h, layout)
            skips.append(h)
            if self.downs[j] is not None:
                h = self.downs[j](h, layout)
        h = self.mid_block1(h, emb, layout)
        h = self.mid_attn(h, layout)
        if mid_add is not None:
            h = tt.add(h, mid_add)
        h = self.mid_block2(h, emb, layout, feat=mid_spade)
        return h, skips, block_inputs


class UNet3D(Module):
    def __init__(self, cfg: UNetConfig):
        self.cfg = cfg
        mode = cfg.injection_mode
        chs = cfg.channels
        C, kt, g, E = cfg.in_channels, cfg.temporal_kernel, cfg.groups, cfg.cond_embed_dim
        spade = mode == "add-encdec-spade"
        self.enc_inject = mode in ("add-encdec", "add-encdec-spade")
        self.dec_inject = cfg.uses_appearnet

        self.time_mlp1 = Linear(cfg.base_channels, E)
        self.time_mlp2 = Linear(E, E)
        _param(self, "cond_table", (cfg.cond_vocab_size + 1, E), "normal", 1)

        self.encoder = Encoder(cfg, 2 * C if mode == "concat" else C, enc_spade=spade, mid_spade=spade)

        self.dec_blocks, self.dec_attns, self.ups = [], [], []
        prev = chs[-1]
        for j in reversed(range(len(chs))):
            cin = prev + chs[j]
            self.dec_blocks.append(ResBlock(cin, chs[j], E, g, kt, spade_feat=chs[j] if spade else None,
                                            spade_clip_norm=cfg.spade_clip_norm))
            self.dec_attns.append(AttentionBlock(chs[j], cfg.head_channels, g) if j in cfg.attention_levels else None)
            self.ups.append(Upsample(chs[j], kt) if j > 0 else None)
            prev = chs[j]
        self.out_norm = GroupNorm(g, chs[0])
        self.conv_out = STConv(chs[0], C, 3, 1, kt)

        self.appearnet: Optional[Encoder] = None
        self.enc_proj = self.dec_proj = None
        self.mid_proj = None
        if cfg.uses_appearnet:
            self.appearnet = Encoder(cfg, C)
            if not spade:
                block_in = [chs[0]] + chs[:-1]
                if self.enc_inject:
                    self.enc_proj = [Conv2d(c, c, 1, zero_init=True) for c in block_in]
                self.mid_proj = Conv2d(chs[-1], chs[-1], 1, zero_init=True)
                dec_in = []
                prev = chs[-1]
                for j in reversed(range(len(chs))):
                    dec_in.append(prev + chs[j])
                    prev = chs[j]
                self.dec_proj = [Conv2d(chs[j], cin, 1, zero_init=True)
                                 for j, cin in zip(reversed(range(len(chs))), dec_in)]

        self.schedule = linear_schedule(cfg.num_timesteps, cfg.beta_start, cfg.beta_end, cfg.schedule_kind)
        initialize(self, cfg.init_seed)
        if self.appearnet is not None:
            self._copy_encoder_into_appearnet()

    def _copy_encoder_into_appearnet(self) -> None:
        src = dict(self.encoder.named_parameters())
        for name, p in self.appearnet.named_parameters():
            if name in src and src[name].shape == p.shape:
                p.data = src[name].data.copy()

    # ------------------------------------------------------------------
    def embed(self, t, cond, batch: int) -> Tensor:
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (batch,))
        cond = np.broadcast_to(np.asarray(cond, dtype=np.int64), (batch,))
        if np.any(cond < 0) or np.any(cond > self.cfg.null_cond):
            raise ValueError(f"condition ids {cond} outside 0..{self.cfg.null_cond}")
        dtype = self.time_mlp1.weight.data.dtype
        temb = sinusoidal_embedding(t, self.cfg.base_channels).astype(dtype)
        e = self.time_mlp2(tt.silu(self.time_mlp1(Tensor(temb, dtype=dtype))))
        return tt.add(e, tt.embedding_lookup(self.cond_table, cond))

    def appearance_features(self, appear: Tensor, emb: Tensor, layout: FrameLayout):
        """Run the appearance branch on a [B*N,C,H,W] frame sequence."""
        return self.appearnet(appear, emb, layout)

    def forward(self, z_t, t, z_c, cond, appear_input=None, temporal: bool = True) -> Tensor:
        """Predict the (prior-shifted) noise for a batch of clips.

        z_t: [B,N,C,H,W] (or unbatched [N,C,H,W]); t: diffusion time on the
        1..T scale, scalar or per clip; z_c: [B,C,H,W] center frames; cond:
        label id(s), ``cfg.null_cond`` meaning unconditional. ``appear_input``
        overrides the replicated center frame as the appearance sequence.
        """
        cfg = self.cfg
        zt = z_t.data if isinstance(z_t, Tensor) else np.asarray(z_t)
        unbatched = zt.ndim == 4
        if unbatched:
            zt = zt[None]
        if zt.ndim != 5 or zt.shape[2] != cfg.in_channels:
            raise tt.ShapeError(f"expected [B,N,{cfg.in_channels},H,W] input, got {zt.shape}")
        B, N, C, H, W = zt.shape
        down = 2 ** (len(cfg.channels) - 1)
        if H % down or W % down:
            raise tt.ShapeError(f"spatial size {H}x{W} must be divisible by {down}")
        dtype = self.conv_out.spatial.weight.data.dtype
        zc = np.asarray(z_c.data if isinstance(z_c, Tensor) else z_c, dtype=dtype)
        if zc.ndim == 3:
            zc = zc[None]
        if zc.shape != (B, C, H, W):
            raise tt.ShapeError(f"center frame {zc.shape} does not match clip {zt.shape}")
        if appear_input is None:
            seq = np.broadcast_to(zc[:, None], (B, N, C, H, W))
        else:
            seq = np.asarray(appear_input.data if isinstance(appear_input, Tensor) else appear_input, dtype=dtype)
            if seq.ndim == 4:
                seq = seq[None]
            if seq.shape != zt.shape:
                raise tt.ShapeError(f"appearance sequence {seq.shape} does not match clip {zt.shape}")
        layout = FrameLayout(B, N, temporal)
        emb = self.embed(t, cond, B)
        x = zt.astype(dtype, copy=False).reshape(B * N, C, H, W)
        seq = np.ascontiguousarray(seq).reshape(B * N, C, H, W)

        enc_add = enc_spade = mid_add = mid_spade = None
        a_skips = None
        if cfg.injection_mode == "concat":
            x = np.concatenate([x, seq], axis=1)
        else:
            a_mid, a_skips, a_inputs = self.appearance_features(Tensor(seq, dtype=dtype), emb, layout)
            if cfg.injection_mode == "add-encdec-spade":
                enc_spade, mid_spade = a_inputs, a_mid
            else:
                if self.enc_inject:
                    enc_add = [p(f) for p, f in zip(self.enc_proj, a_inputs)]
                mid_add = self.mid_proj(a_mid)

        h, skips, _ = self.encoder(Tensor(x, dtype=dtype), emb, layout, enc_add=enc_add, enc_spade=enc_spade,
                                   mid_add=mid_add, mid_spade=mid_spade)
        L = len(cfg.channels)
        for i, block in enumerate(self.dec_blocks):
            j = L - 1 - i
            h = tt.concat_channels([h, skips[j]])
            feat = None
            if a_skips is not None:
                if cfg.injection_mode == "add-encdec-spade":
                    feat = a_skips[j]
                else:
                    h = tt.add(h, self.dec_proj[i](a_skips[j]))
            h = block(h, emb, layout, feat=feat)
            if self.dec_attns[i] is not None:
                h = self.dec_attns[i](h, layout)
            if self.ups[i] is not None:
                h = self.ups[i](h, layout)
        h = self.conv_out(tt.silu(self.out_norm(h)), layout)
        out = tt.reshape(h, (B, N, C, H, W))
        if cfg.output_skip:
            out = tt.add(out, Tensor(self.skip_scale(t, B).astype(dtype)[:, None, None, None, None] * zt, dtype=dtype))
        return tt.reshape(out, (N, C, H, W)) if unbatched else out

    def skip_scale(self, t, batch: int) -> np.ndarray:
        """sqrt(1 - alpha_bar(t)) per clip, t on the 1..T scale (continuous).

        This is the optimal linear noise estimate for unit-variance data, so
        the network only learns the residual. At high noise levels the
        residual is small, which keeps the reverse ODE from drifting.
        """
        T = self.schedule.T
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (batch,))
        ab = np.array([self.schedule.continuous(min(max(v / T, 0.0), 1.0))[0] for v in t])
        return np.sqrt(1.0 - ab)

    # ------------------------------------------------------------------
    def temporal_parameters(self) -> list:
        """Names of parameters that belong to temporal layers of the main branch."""
        names = []
        for name, _ in self.named_parameters():
            if name.startswith("appearnet."):
                continue
            if ".temporal." in f".{name}" and ("spatial." not in name.split(".temporal.")[-1]):
                names.append(name)
        return names

    def parameter_groups(self) -> dict:
        """Split parameters into 'temporal' and 'spatial' (everything else,
        including the appearance branch, injection layers and embeddings)."""
        temporal = set(self.temporal_parameters())
        groups = {"spatial": [], "temporal": []}
        for name, p in self.named_parameters():
            groups["temporal" if name in temporal else "spatial"].append((name, p))
        return groups


def appearnet_input(z_c: np.ndarray, num_frames: int) -> np.ndarray:
    """[C,H,W] center frame -> [N,C,H,W] stack of identical copies."""
    if num_frames < 1:
        raise ValueError("num_frames must be >= 1")
    z_c = np.asarray(z_c)
    return np.repeat(z_c[None], int(num_frames), axis=0)


def tsr_appearnet_input(z_first: np.ndarray, z_last: np.ndarray, num_frames: int) -> np.ndarray:
    """Frame i = (1 - i/(N-1)) z_first + (i/(N-1)) z_last."""
    if num_frames < 2:
        raise ValueError("interpolation needs at least two frames")
    z_first = np.asarray(z_first)
    z_last = np.asarray(z_last)
    if z_first.shape != z_last.shape:
        raise ValueError(f"endpoint shapes differ: {z_first.shape} vs {z_last.shape}")
    w = np.arange(num_frames, dtype=np.float64) / (num_frames - 1)
    w = w.reshape((-1,) + (1,) * z_first.ndim)
    out = (1.0 - w) * z_first[None] + w * z_last[None]
    out[0] = z_first
    out[-1] = z_last
    return out.astype(np.result_type(z_first.dtype, z_last.dtype, np.float32), copy=False)
