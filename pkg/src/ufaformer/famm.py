"""Forgery-aware mutual module.

Patch features are reshaped to a grid and expanded into a four-level pyramid
(0.5x, 1x, 2x, 4x). Per-location heads score every pyramid location and
regress a box; the top-scoring locations of the 1x/2x/4x levels plus the
whole 0.5x level are gathered, and the frequency features attend to them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .config import ConfigError, ModelConfig
from .losses import batched_match, batched_set_loss
from .numerics import (AttentionParams, DimensionError, FeedForward, LayerNorm, Linear, Rng,
                       init_params, multi_head_attention)

SCALES = (0.5, 1.0, 2.0, 4.0)


@dataclass
class PyramidLevel:
    scale: float
    features: torch.Tensor           # [..., n, D]
    score_logits: torch.Tensor | None = None  # [..., n]
    boxes: torch.Tensor | None = None         # [..., n, 4] cxcywh

    @property
    def scores(self) -> torch.Tensor:
        return torch.sigmoid(self.score_logits)

    @property
    def count(self) -> int:
        return self.features.shape[-2]

    @property
    def side(self) -> int:
        return math.isqrt(self.count)


def to_grid(patches: torch.Tensor) -> torch.Tensor:
    """``[B, N, D]`` -> ``[B, D, G, G]``."""
    n = patches.shape[-2]
    g = math.isqrt(n)
    if g * g != n:
        raise DimensionError(f"{n} patches do not form a square grid")
    return patches.transpose(-1, -2).reshape(patches.shape[0], patches.shape[-1], g, g)


def from_grid(x: torch.Tensor) -> torch.Tensor:
    return x.flatten(-2).transpose(-1, -2)


class FeaturePyramid(nn.Module):
    """Strided convolutions for 0.5x/1x and transposed convolutions for 2x/4x."""

    def __init__(self, dim: int, rng: Rng, dtype=torch.float32):
        super().__init__()
        self.w_half = nn.Parameter(init_params(rng.child(0), (dim, dim, 3, 3), dtype=dtype))
        self.w_one = nn.Parameter(init_params(rng.child(1), (dim, dim, 3, 3), dtype=dtype))
        self.w_two = nn.Parameter(init_params(rng.child(2), (dim, dim, 3, 3), dtype=dtype))
        # kernel 4 so that every output cell of the stride-4 deconvolution is covered
        self.w_four = nn.Parameter(init_params(rng.child(3), (dim, dim, 4, 4), dtype=dtype))
        self.biases = nn.Parameter(torch.zeros(4, dim, dtype=dtype))

    def forward(self, patches: torch.Tensor) -> list[PyramidLevel]:
        x = to_grid(patches)
        b = self.biases
        maps = [
            F.conv2d(x, self.w_half, b[0], stride=2, padding=1),
            F.conv2d(x, self.w_one, b[1], stride=1, padding=1),
            F.conv_transpose2d(x, self.w_two, b[2], stride=2, padding=1, output_padding=1),
            F.conv_transpose2d(x, self.w_four, b[3], stride=4),
        ]
        return [PyramidLevel(s, from_grid(m)) for s, m in zip(SCALES, maps)]


def location_centers(side: int, dtype=torch.float32) -> torch.Tensor:
    """Normalized ``(cx, cy)`` of each cell of a ``side x side`` grid, row-major."""
    c = (torch.arange(side, dtype=dtype) + 0.5) / side
    cy, cx = torch.meshgrid(c, c, indexing="ij")
    return torch.stack([cx.flatten(), cy.flatten()], dim=-1)


class PyramidHeads(nn.Module):
    """Forgery score and box FFNs shared by all pyramid levels.

    Box centers are predicted as offsets (in logit space) from the cell center.
    """

    def __init__(self, dim: int, rng: Rng, dtype=torch.float32, scheme: str = "trunc_normal"):
        super().__init__()
        self.score = nn.Sequential(Linear(dim, dim, rng.child(0), dtype, scheme), nn.GELU(),
                                   Linear(dim, 1, rng.child(1), dtype, scheme))
        self.box = nn.Sequential(Linear(dim, dim, rng.child(2), dtype, scheme), nn.GELU(),
                                 Linear(dim, 4, rng.child(3), dtype, scheme))

    def forward(self, level: PyramidLevel) -> PyramidLevel:
        f = level.features
        ref = torch.logit(location_centers(level.side, f.dtype))
        ref = F.pad(ref, (0, 2))
        level.score_logits = self.score(f).squeeze(-1)
        level.boxes = torch.sigmoid(self.box(f) + ref)
        return level


def pyramid_heads(level: PyramidLevel, params: PyramidHeads):
    params(level)
    return level.scores, level.boxes


def selection_counts(counts, rates) -> list[int]:
    """Locations kept per level: 0.5x level whole, then ``floor(rate * count)``."""
    if len(rates) != len(counts) - 1:
        raise ConfigError("need one sampling rate per selectable level")
    if any(r <= 0 for r in rates):
        raise ConfigError("sampling rates must be positive")
    return [counts[0]] + [min(c, int(math.floor(r * c + 1e-9))) for c, r in zip(counts[1:], rates)]


def topk_indices(scores: torch.Tensor, k: int) -> torch.Tensor:
    """Top-``k`` per row by score, ties broken by lower index, returned in ascending index order."""
    order = torch.sort(-scores, dim=-1, stable=True).indices[..., :k]
    return torch.sort(order, dim=-1).values


def forgery_select(levels: list[PyramidLevel], rates,
                   chosen: list[torch.Tensor] | None = None) -> tuple[torch.Tensor, list[torch.Tensor]]:
    """Gather features of the selected locations.

    Returns ``gathered [..., M, D]`` and per-level index tensors. Scores only
    decide which rows are taken; gradients reach the gathered feature values.
    Passing ``chosen`` replays an earlier selection instead of ranking again.
    """
    counts = selection_counts([lv.count for lv in levels], rates)
    parts, picked = [], []
    for i, (lv, k) in enumerate(zip(levels, counts)):
        if chosen is not None:
            idx = chosen[i]
        elif k == lv.count:
            idx = torch.arange(k).expand(*lv.features.shape[:-2], k)
        else:
            idx = topk_indices(lv.score_logits.detach(), k)
        picked.append(idx)
        parts.append(torch.gather(lv.features, -2, idx.unsqueeze(-1).expand(*idx.shape, lv.features.shape[-1])))
    return torch.cat(parts, dim=-2), picked


def pyramid_matches(levels: list[PyramidLevel], gt_boxes: list[torch.Tensor], weights=(2.0, 5.0, 2.0),
                    backend: str | None = None) -> list[list[list[tuple[int, int]]]]:
    """The per-level, per-sample assignments ``pyramid_aux_loss`` would use."""
    return [batched_match(lv.score_logits, lv.boxes, gt_boxes, weights, backend) for lv in levels]


def pyramid_aux_loss(levels: list[PyramidLevel], gt_boxes: list[torch.Tensor],
                     weights=(2.0, 5.0, 2.0), backend: str | None = None, matches=None) -> torch.Tensor:
    """Hungarian-matched score/box supervision, averaged over levels and samples.

    ``levels`` hold batched tensors ``[B, n, ...]`` and ``gt_boxes[b]`` is ``[m_b, 4]``.
    ``matches`` (from ``pyramid_matches``) replays fixed assignments.
    """
    total = 0
    for i, lv in enumerate(levels):
        pairs = None if matches is None else matches[i]
        per_sample, _ = batched_set_loss(lv.score_logits, lv.boxes, gt_boxes, weights, backend, pairs)
        total = total + per_sample.mean()
    return total / len(levels)


class MutualCrossAttention(nn.Module):
    def __init__(self, cfg: ModelConfig, rng: Rng, dtype=torch.float32):
        super().__init__()
        self.attn = AttentionParams(cfg.dim, cfg.heads, rng.child(0), dtype)
        self.ln1 = LayerNorm(cfg.dim, dtype)
        self.ffn = FeedForward(cfg.dim, rng.child(1), dtype, cfg.ffn_ratio, cfg.activation)
        self.ln2 = LayerNorm(cfg.dim, dtype)

    def forward(self, freq: torch.Tensor, gathered: torch.Tensor) -> torch.Tensor:
        return mutual_cross_attention(freq, gathered, self)


def mutual_cross_attention(freq: torch.Tensor, gathered: torch.Tensor, params: MutualCrossAttention) -> torch.Tensor:
    """Frequency rows attend to the gathered rows; returns ``[aligned freq; gathered]``."""
    if gathered.shape[-2] == 0:
        raise ConfigError("forgery selection produced no locations")
    x = params.ln1(freq + multi_head_attention(freq, gathered, gathered, params.attn))
    x = params.ln2(x + params.ffn(x))
    return torch.cat([x, gathered], dim=-2)


class FAMM(nn.Module):
    def __init__(self, cfg: ModelConfig, rng: Rng, dtype=torch.float32):
        super().__init__()
        self.cfg = cfg
        self.pyramid = FeaturePyramid(cfg.dim, rng.child(0), dtype)
        self.heads = PyramidHeads(cfg.dim, rng.child(1), dtype)
        self.mca = MutualCrossAttention(cfg, rng.child(2), dtype)

    @property
    def rates(self) -> tuple[float, ...]:
        return self.cfg.sampling_rates if self.cfg.use_selection else (1.0, 1.0, 1.0)

    def forward(self, patches: torch.Tensor, freq: torch.Tensor | None, chosen: list[torch.Tensor] | None = None):
        levels = [self.heads(lv) for lv in self.pyramid(patches)]
        gathered, chosen = forgery_select(levels, self.rates, chosen)
        visual = gathered if freq is None else self.mca(freq, gathered)
        return visual, levels, chosen
