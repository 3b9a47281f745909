"""View fusion, refinement and sub-pixel upsampling; the full stereo SR network."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .attention import CrossViewAttention, PamConfig
from .features import RDB, ChannelAttention, ExtractorConfig, FeatureExtractor
from .resize import upscale


@dataclass
class ReconstructionConfig:
    scale: int = 2
    n_refine_rdb: int = 2
    use_global_skip: bool = True

    def __post_init__(self):
        if self.scale not in (2, 4):
            raise ValueError(f"scale must be 2 or 4, got {self.scale}")
        if self.n_refine_rdb < 1:
            raise ValueError("n_refine_rdb must be >= 1")


def pixel_shuffle(x, scale):
    """out[b, c, s*h + a, s*w + q] = x[b, c*s*s + a*s + q, h, w]"""
    b, c, h, w = x.shape
    if c % (scale * scale):
        raise ValueError(f"{c} channels not divisible by scale^2 = {scale * scale}")
    oc = c // (scale * scale)
    x = x.reshape(b, oc, scale, scale, h, w)
    return x.permute(0, 1, 4, 2, 5, 3).reshape(b, oc, h * scale, w * scale)


def pixel_unshuffle(x, scale):
    b, c, h, w = x.shape
    if h % scale or w % scale:
        raise ValueError(f"spatial size {h}x{w} not divisible by {scale}")
    x = x.reshape(b, c, h // scale, scale, w // scale, scale)
    return x.permute(0, 1, 3, 5, 2, 4).reshape(b, c * scale * scale, h // scale, w // scale)


class FuseViews(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv = nn.Conv2d(2 * channels, channels, 1)

    def forward(self, f_own, f_cross):
        return self.conv(torch.cat([f_own, f_cross], dim=1))


class Refine(nn.Module):
    """RDB -> channel attention -> further RDBs -> 3x3 conv."""

    def __init__(self, channels, n_rdb=2, growth=32, n_layers=4, reduction=16):
        super().__init__()
        self.first = RDB(channels, growth, n_layers)
        self.ca = ChannelAttention(channels, reduction)
        self.rest = nn.Sequential(*[RDB(channels, growth, n_layers) for _ in range(n_rdb - 1)])
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        return self.conv(self.rest(self.ca(self.first(x))))


class SubPixelUpsampler(nn.Module):
    def __init__(self, channels, scale, out_channels=3):
        super().__init__()
        if scale not in (2, 4):
            raise ValueError(f"scale must be 2 or 4, got {scale}")
        self.scale = scale
        self.conv = nn.Conv2d(channels, out_channels * scale * scale, 3, padding=1)

    def forward(self, x):
        return pixel_shuffle(self.conv(x), self.scale)


class SEGSRNet(nn.Module):
    """Stereo SR network; both views share every weight.

    ``forward`` returns unclamped outputs for training. Use
    :func:`super_resolve` for clamped inference.
    """

    def __init__(self, extractor: ExtractorConfig | None = None, pam: PamConfig | None = None,
                 recon: ReconstructionConfig | None = None):
        super().__init__()
        self.extractor_cfg = extractor or ExtractorConfig()
        self.pam_cfg = pam or PamConfig()
        self.recon_cfg = recon or ReconstructionConfig()
        c = self.extractor_cfg.base_channels
        self.extract = FeatureExtractor(self.extractor_cfg)
        self.cross = CrossViewAttention(c, self.pam_cfg)
        self.fuse = FuseViews(c)
        self.refine = Refine(
            c,
            self.recon_cfg.n_refine_rdb,
            self.extractor_cfg.rdb_growth,
            self.extractor_cfg.rdb_layers,
            self.extractor_cfg.ca_reduction,
        )
        self.upsample = SubPixelUpsampler(c, self.recon_cfg.scale)

    @property
    def scale(self):
        return self.recon_cfg.scale

    def _reconstruct(self, lr, own, cross):
        out = self.upsample(self.refine(self.fuse(own, cross)))
        if self.recon_cfg.use_global_skip:
            out = out + upscale(lr, self.scale)
        return out

    def forward(self, lr_left, lr_right):
        if lr_left.shape != lr_right.shape:
            raise ValueError(f"view shapes differ: {tuple(lr_left.shape)} vs {tuple(lr_right.shape)}")
        hier_l = self.extract(lr_left)
        hier_r = self.extract(lr_right)
        cross_l, cross_r = self.cross(hier_l, hier_r)
        return (
            self._reconstruct(lr_left, hier_l.fused, cross_l),
            self._reconstruct(lr_right, hier_r.fused, cross_r),
        )


class BicubicBaseline(nn.Module):
    """Stands in for an SR model: plain bicubic upscaling of each view."""

    def __init__(self, scale):
        super().__init__()
        self.scale = scale

    def forward(self, lr_left, lr_right):
        return upscale(lr_left, self.scale), upscale(lr_right, self.scale)


def _as_batch(x):
    x = torch.as_tensor(x)
    return (x[None], True) if x.dim() == 3 else (x, False)


def super_resolve(lr_left, lr_right, model: nn.Module):
    """Inference: eval mode, no grad, outputs clamped to [0, 1].

    Accepts (3, h, w) or (B, 3, h, w) inputs (tensors or arrays).
    """
    left, single = _as_batch(lr_left)
    right, _ = _as_batch(lr_right)
    # parameterless models (bicubic) keep the input precision
    dtype = next(model.parameters(), left).dtype
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            sr_l, sr_r = model(left.to(dtype), right.to(dtype))
    finally:
        model.train(was_training)
    sr_l, sr_r = sr_l.clamp(0.0, 1.0), sr_r.clamp(0.0, 1.0)
    if single:
        return sr_l[0], sr_r[0]
    return sr_l, sr_r
