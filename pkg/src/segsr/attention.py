"""Bidirectional parallax (cross-view) attention along epipolar rows.

Attention tensors are laid out ``(B, H, W_target, W_source)`` and are
row-stochastic over the last axis.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .features import FeatureHierarchy


@dataclass
class PamConfig:
    softmax_temperature: float = 1.0
    valid_threshold: float = 0.1
    use_residual_transition: bool = True

    def __post_init__(self):
        if self.softmax_temperature <= 0:
            raise ValueError("softmax_temperature must be > 0")
        if not 0 < self.valid_threshold < 1:
            raise ValueError("valid_threshold must lie in (0, 1)")


@dataclass
class AttentionPair:
    m_r_to_l: torch.Tensor
    m_l_to_r: torch.Tensor


@dataclass
class ValidMaskPair:
    v_l: torch.Tensor
    v_r: torch.Tensor


def mean_subtract(f):
    """Remove each (channel, row) mean taken along the width axis."""
    return f - f.mean(dim=-1, keepdim=True)


def _row_scores(query, key, temperature):
    return torch.einsum("bchi,bchj->bhij", query, key) / temperature


def compute_attention(f_u, f_v, cfg: PamConfig | None = None) -> AttentionPair:
    """Row-wise softmax attention between the left (``f_u``) and right (``f_v``) features.

    ``m_r_to_l[b, h, i, j]`` weights right column j when rebuilding left column i;
    ``m_l_to_r`` is the transposed orientation. Both directions go through the
    same code path with the arguments exchanged, so swapping the views swaps
    the maps bit for bit.
    """
    cfg = cfg or PamConfig()
    if f_u.shape != f_v.shape:
        raise ValueError(f"feature shapes differ: {tuple(f_u.shape)} vs {tuple(f_v.shape)}")
    t = cfg.softmax_temperature
    m_r_to_l = torch.softmax(_row_scores(f_u, f_v, t), dim=-1)
    m_l_to_r = torch.softmax(_row_scores(f_v, f_u, t), dim=-1)
    return AttentionPair(m_r_to_l, m_l_to_r)


def warp(m, f):
    """out[b, c, h, w] = sum_j m[b, h, w, j] * f[b, c, h, j]"""
    return torch.einsum("bhwj,bchj->bchw", m, f)


def valid_mask(m, threshold: float = 0.1):
    """Validity of each source column: attention mass it receives, ramped to [0, 1]."""
    mass = m.sum(dim=-2)
    return torch.clamp(mass / threshold, 0.0, 1.0)


def occlusion_fill(f_warped, f_target, v):
    v = v.unsqueeze(1)
    return v * f_warped + (1.0 - v) * f_target


class ResB(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.LeakyReLU(0.1),
            nn.Conv2d(channels, channels, 3, padding=1),
        )

    def forward(self, x):
        return x + self.body(x)


class PamInputs(nn.Module):
    """BN -> transition ResB -> query/key 1x1 convs -> row mean removal.

    Query and key projections are concatenated per view, so the row score
    between two views is q_l.q_r + k_l.k_r and both directions share weights.
    """

    def __init__(self, channels, use_residual_transition=True):
        super().__init__()
        self.bn = nn.BatchNorm2d(channels)
        self.transition = ResB(channels) if use_residual_transition else nn.Identity()
        self.query = nn.Conv2d(channels, channels // 2, 1)
        self.key = nn.Conv2d(channels, channels - channels // 2, 1)

    def project(self, x):
        y = self.transition(self.bn(x))
        return mean_subtract(torch.cat([self.query(y), self.key(y)], dim=1))

    def forward(self, fused_l, fused_r):
        return self.project(fused_l), self.project(fused_r)


class CrossViewAttention(nn.Module):
    def __init__(self, channels, cfg: PamConfig | None = None):
        super().__init__()
        self.cfg = cfg or PamConfig()
        self.inputs = PamInputs(channels, self.cfg.use_residual_transition)

    def forward(self, hier_l: FeatureHierarchy, hier_r: FeatureHierarchy, return_maps=False):
        f_l, f_r = hier_l.fused, hier_r.fused
        f_u, f_v = self.inputs(f_l, f_r)
        maps = compute_attention(f_u, f_v, self.cfg)
        masks = ValidMaskPair(
            valid_mask(maps.m_l_to_r, self.cfg.valid_threshold),
            valid_mask(maps.m_r_to_l, self.cfg.valid_threshold),
        )
        out_l = occlusion_fill(warp(maps.m_r_to_l, f_r), f_l, masks.v_l)
        out_r = occlusion_fill(warp(maps.m_l_to_r, f_l), f_r, masks.v_r)
        if return_maps:
            return out_l, out_r, maps, masks
        return out_l, out_r


def cross_view_interact(hier_l, hier_r, module: CrossViewAttention):
    return module(hier_l, hier_r)
