"""Per-view feature extraction: CCSB attention, ASPP and residual dense blocks."""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class ExtractorConfig:
    base_channels: int = 64
    n_rdb: int = 4
    rdb_layers: int = 4
    rdb_growth: int = 32
    ca_reduction: int = 16
    aspp_rates: list[int] = field(default_factory=lambda: [1, 2, 4, 8])
    sa_kernel: int = 7

    def __post_init__(self):
        for name in ("base_channels", "n_rdb", "rdb_layers", "rdb_growth", "ca_reduction"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.base_channels % self.ca_reduction:
            raise ValueError("base_channels must be divisible by ca_reduction")
        if not self.aspp_rates or min(self.aspp_rates) < 1:
            raise ValueError("aspp_rates must be a non-empty list of rates >= 1")
        if self.sa_kernel % 2 == 0:
            raise ValueError("sa_kernel must be odd")


@dataclass
class FeatureHierarchy:
    per_block: list[torch.Tensor]
    fused: torch.Tensor


def _check_channels(x, expected, who):
    if x.dim() != 4 or x.shape[1] != expected:
        raise ValueError(f"{who} expects (B, {expected}, H, W) input, got {tuple(x.shape)}")


class ChannelAttention(nn.Module):
    """Squeeze-and-excitation gate: GAP -> bottleneck -> sigmoid, per channel."""

    def __init__(self, channels, reduction=16):
        super().__init__()
        self.channels = channels
        hidden = max(channels // reduction, 1)
        self.squeeze = nn.Conv2d(channels, hidden, 1)
        self.excite = nn.Conv2d(hidden, channels, 1)

    def gate(self, x):
        _check_channels(x, self.channels, "ChannelAttention")
        y = x.mean(dim=(2, 3), keepdim=True)
        return torch.sigmoid(self.excite(F.relu(self.squeeze(y))))

    def forward(self, x):
        return x * self.gate(x)


class SpatialAttention(nn.Module):
    """Per-pixel gate from channel-wise mean and max maps."""

    def __init__(self, kernel_size=7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2)

    def gate(self, x):
        pooled = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.conv(pooled))

    def forward(self, x):
        return x * self.gate(x)


class CCSB(nn.Module):
    def __init__(self, channels, reduction=16, kernel_size=7):
        super().__init__()
        self.ca = ChannelAttention(channels, reduction)
        self.sa = SpatialAttention(kernel_size)

    def forward(self, x):
        return self.sa(self.ca(x))


class ASPP(nn.Module):
    """Parallel dilated 3x3 convs (ReLU) fused back to ``channels`` by a 1x1 conv."""

    def __init__(self, channels, rates=(1, 2, 4, 8), out_channels=None):
        super().__init__()
        rates = list(rates)
        if not rates or min(rates) < 1:
            raise ValueError(f"ASPP rates must be >= 1, got {rates}")
        out_channels = out_channels or channels
        self.rates = rates
        self.branches = nn.ModuleList(
            nn.Conv2d(channels, channels, 3, padding=r, dilation=r) for r in rates
        )
        self.fuse = nn.Conv2d(channels * len(rates), out_channels, 1)

    def forward(self, x):
        return self.fuse(torch.cat([F.relu(b(x)) for b in self.branches], dim=1))


class RDB(nn.Module):
    """Residual dense block: densely connected convs, 1x1 local fusion, local residual."""

    def __init__(self, channels, growth=32, n_layers=4):
        super().__init__()
        self.channels = channels
        self.layers = nn.ModuleList(
            nn.Conv2d(channels + i * growth, growth, 3, padding=1) for i in range(n_layers)
        )
        self.local_fusion = nn.Conv2d(channels + n_layers * growth, channels, 1)

    def forward(self, x):
        _check_channels(x, self.channels, "RDB")
        feats = [x]
        for conv in self.layers:
            feats.append(F.relu(conv(torch.cat(feats, dim=1))))
        return x + self.local_fusion(torch.cat(feats, dim=1))


class FeatureExtractor(nn.Module):
    """conv3x3 -> CCSB -> ASPP -> chain of RDBs; every RDB output is kept."""

    def __init__(self, cfg: ExtractorConfig | None = None, in_channels=3):
        super().__init__()
        cfg = cfg or ExtractorConfig()
        self.cfg = cfg
        c = cfg.base_channels
        self.head = nn.Conv2d(in_channels, c, 3, padding=1)
        self.ccsb = CCSB(c, cfg.ca_reduction, cfg.sa_kernel)
        self.aspp = ASPP(c, cfg.aspp_rates)
        self.rdbs = nn.ModuleList(
            RDB(c, cfg.rdb_growth, cfg.rdb_layers) for _ in range(cfg.n_rdb)
        )
        self.hierarchy_fusion = nn.Conv2d(c * cfg.n_rdb, c, 1)

    def forward(self, x) -> FeatureHierarchy:
        _check_channels(x, self.head.in_channels, "FeatureExtractor")
        y = self.aspp(self.ccsb(self.head(x)))
        per_block = []
        for rdb in self.rdbs:
            y = rdb(y)
            per_block.append(y)
        return FeatureHierarchy(per_block, self.hierarchy_fusion(torch.cat(per_block, dim=1)))
