"""SPP-LinkNet: ResNet encoder, spatial pyramid pooling, LinkNet decoder."""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import TaskKind


@dataclass
class SegConfig:
    task: TaskKind = TaskKind.BINARY
    encoder_widths: list[int] = field(default_factory=lambda: [64, 64, 128, 256, 512])
    spp_levels: list[int] = field(default_factory=lambda: [1, 2, 3, 6])
    blocks_per_stage: list[int] = field(default_factory=lambda: [2, 2, 2, 2])

    def __post_init__(self):
        self.task = TaskKind(self.task)
        if len(self.encoder_widths) != 5:
            raise ValueError("encoder_widths needs 5 entries (stem + 4 stages)")
        if len(self.blocks_per_stage) != 4 or min(self.blocks_per_stage) < 1:
            raise ValueError("blocks_per_stage needs 4 positive entries")
        levels = list(self.spp_levels)
        if not levels or any(b <= a for a, b in zip(levels, levels[1:])) or levels[0] < 1:
            raise ValueError(f"spp_levels must be strictly increasing positive ints, got {levels}")

    @property
    def n_classes(self):
        return self.task.class_count


class BasicBlock(nn.Module):
    def __init__(self, in_ch, out_ch, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.downsample = None
        if stride != 1 or in_ch != out_ch:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride, bias=False), nn.BatchNorm2d(out_ch)
            )

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + identity)


class Encoder(nn.Module):
    """ResNet-style: 7x7/2 stem + 3x3/2 max-pool, then 4 residual stages."""

    def __init__(self, widths=(64, 64, 128, 256, 512), blocks=(2, 2, 2, 2), in_channels=3):
        super().__init__()
        stem = widths[0]
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, stem, 7, 2, 3, bias=False),
            nn.BatchNorm2d(stem),
            nn.ReLU(),
            nn.MaxPool2d(3, 2, 1),
        )
        stages = []
        in_ch = stem
        for i, (out_ch, n) in enumerate(zip(widths[1:], blocks)):
            stride = 1 if i == 0 else 2
            layers = [BasicBlock(in_ch, out_ch, stride)]
            layers += [BasicBlock(out_ch, out_ch) for _ in range(n - 1)]
            stages.append(nn.Sequential(*layers))
            in_ch = out_ch
        self.stages = nn.ModuleList(stages)

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % 32 or w % 32:
            raise ValueError(f"input size {h}x{w} must be a multiple of 32 in both dimensions")
        x = self.stem(x)
        outs = []
        for stage in self.stages:
            x = stage(x)
            outs.append(x)
        return outs


class SPPBlock(nn.Module):
    def __init__(self, channels, levels=(1, 2, 3, 6)):
        super().__init__()
        self.levels = list(levels)
        branch_ch = max(channels // len(self.levels), 1)
        self.branches = nn.ModuleList(nn.Conv2d(channels, branch_ch, 1) for _ in self.levels)
        self.fuse = nn.Conv2d(channels + branch_ch * len(self.levels), channels, 1)

    def forward(self, x):
        h, w = x.shape[-2:]
        pooled = [
            F.interpolate(
                F.relu(conv(F.adaptive_avg_pool2d(x, n))), size=(h, w), mode="bilinear", align_corners=False
            )
            for n, conv in zip(self.levels, self.branches)
        ]
        return F.relu(self.fuse(torch.cat([x, *pooled], dim=1)))


class DecoderBlock(nn.Module):
    """1x1 reduce (C/4) -> 3x3 transpose conv x2 -> 1x1 expand, each with BN + ReLU."""

    def __init__(self, in_ch, out_ch):
        super().__init__()
        mid = max(in_ch // 4, 1)
        self.reduce = nn.Sequential(nn.Conv2d(in_ch, mid, 1), nn.BatchNorm2d(mid), nn.ReLU())
        self.up = nn.Sequential(
            nn.ConvTranspose2d(mid, mid, 3, stride=2, padding=1, output_padding=1),
            nn.BatchNorm2d(mid),
            nn.ReLU(),
        )
        self.expand = nn.Sequential(nn.Conv2d(mid, out_ch, 1), nn.BatchNorm2d(out_ch), nn.ReLU())

    def forward(self, x):
        return self.expand(self.up(self.reduce(x)))


class Decoder(nn.Module):
    def __init__(self, widths=(64, 64, 128, 256, 512), n_classes=2, head_channels=32):
        super().__init__()
        stage_w = list(widths[1:])
        self.blocks = nn.ModuleList(
            DecoderBlock(stage_w[i], stage_w[i - 1]) for i in range(len(stage_w) - 1, 0, -1)
        )
        self.head = nn.Sequential(
            nn.ConvTranspose2d(stage_w[0], head_channels, 3, stride=2, padding=1, output_padding=1),
            nn.ReLU(),
            nn.Conv2d(head_channels, head_channels, 3, padding=1),
            nn.ReLU(),
            nn.ConvTranspose2d(head_channels, n_classes, 3, stride=2, padding=1, output_padding=1),
        )

    def forward(self, stages):
        d = stages[-1]
        for block, skip in zip(self.blocks, reversed(stages[:-1])):
            d = block(d) + skip
        return self.head(d)


class SPPLinkNet(nn.Module):
    def __init__(self, cfg: SegConfig | None = None):
        super().__init__()
        self.cfg = cfg or SegConfig()
        widths = self.cfg.encoder_widths
        self.encoder = Encoder(widths, self.cfg.blocks_per_stage)
        self.spp = SPPBlock(widths[-1], self.cfg.spp_levels)
        self.decoder = Decoder(widths, self.cfg.n_classes)

    def forward(self, x):
        stages = self.encoder(x)
        stages[-1] = self.spp(stages[-1])
        return self.decoder(stages)


def logits_to_mask(logits):
    # torch.argmax returns the first maximal index, i.e. ties go to the lower class id
    return torch.argmax(logits, dim=-3)


def segment(image, model: SPPLinkNet):
    """Predict a label mask for a (3, H, W) or (B, 3, H, W) image."""
    x = torch.as_tensor(image)
    single = x.dim() == 3
    if single:
        x = x[None]
    dtype = next(model.parameters()).dtype
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            mask = logits_to_mask(model(x.to(dtype)))
    finally:
        model.train(was_training)
    return mask[0] if single else mask
