"""Frequency encoder over the four Haar sub-bands.

Each band becomes ``N`` patch tokens plus one prepended band embedding. A
layer runs intra-band attention (within one band), then inter-band attention
(the four tokens sharing one spatial slot), then an FFN, each followed by
residual + LayerNorm. Slot 0 of every band is read out as that band's
aggregated feature.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .backbones import patchify
from .config import ModelConfig
from .numerics import AttentionParams, FeedForward, LayerNorm, Linear, Rng, init_params, multi_head_attention
from .wavelet import SubBands, haar_dwt2d, rgb_to_luma

NUM_BANDS = 4


@dataclass
class FrequencyQueries:
    content: torch.Tensor   # [..., 4, N+1, D]
    position: torch.Tensor  # [N+1, D]
    band_embeddings: torch.Tensor  # [4, D]

    @property
    def merged(self) -> torch.Tensor:
        return self.content + self.position


def intra_band_mask(n_slots: int) -> torch.Tensor:
    """Block-diagonal mask over the flattened ``4 * n_slots`` sequence."""
    band = torch.arange(NUM_BANDS * n_slots) // n_slots
    return band[:, None] == band[None, :]


def inter_band_mask(n_slots: int) -> torch.Tensor:
    """Same-slot mask over the flattened ``4 * n_slots`` sequence."""
    slot = torch.arange(NUM_BANDS * n_slots) % n_slots
    return slot[:, None] == slot[None, :]


def intra_band_attention(x: torch.Tensor, params: AttentionParams) -> torch.Tensor:
    """Four independent self-attentions, one per band; ``x`` is ``[..., 4, S, D]``."""
    return multi_head_attention(x, x, x, params)


def inter_band_attention(x: torch.Tensor, params: AttentionParams) -> torch.Tensor:
    """``S`` independent 4x4 self-attentions across bands at each slot."""
    y = x.transpose(-3, -2)
    return multi_head_attention(y, y, y, params).transpose(-3, -2)


def standard_attention(x: torch.Tensor, params: AttentionParams) -> torch.Tensor:
    """Unrestricted attention over all ``4*S`` tokens (ablation baseline)."""
    flat = x.flatten(-3, -2)
    return multi_head_attention(flat, flat, flat, params).unflatten(-2, x.shape[-3:-1])


class FrequencyLayer(nn.Module):
    def __init__(self, cfg: ModelConfig, rng: Rng, dtype):
        super().__init__()
        self.mode = cfg.freq_attention
        self.intra = AttentionParams(cfg.dim, cfg.heads, rng.child(0), dtype)
        self.inter = AttentionParams(cfg.dim, cfg.heads, rng.child(1), dtype)
        self.ffn = FeedForward(cfg.dim, rng.child(2), dtype, cfg.ffn_ratio, cfg.activation)
        self.ln1 = LayerNorm(cfg.dim, dtype)
        self.ln2 = LayerNorm(cfg.dim, dtype)
        self.ln3 = LayerNorm(cfg.dim, dtype)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.mode == "standard":
            x = self.ln1(x + standard_attention(x, self.intra))
        else:
            if self.mode in ("intra_inter", "intra"):
                x = self.ln1(x + intra_band_attention(x, self.intra))
            if self.mode in ("intra_inter", "inter"):
                x = self.ln2(x + inter_band_attention(x, self.inter))
        return self.ln3(x + self.ffn(x))


class FrequencyEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig, rng: Rng, dtype=torch.float32):
        super().__init__()
        self.cfg = cfg
        channels = 1 if cfg.dwt_channels == "luma" else 3
        self.proj = Linear(channels * cfg.freq_patch ** 2, cfg.dim, rng.child(0), dtype)
        self.band_embeddings = nn.Parameter(init_params(rng.child(1), (NUM_BANDS, cfg.dim), dtype=dtype))
        self.pos = nn.Parameter(init_params(rng.child(2), (cfg.num_freq_patches + 1, cfg.dim), dtype=dtype))
        self.layers = nn.ModuleList(FrequencyLayer(cfg, rng.child(10 + i), dtype) for i in range(cfg.freq_depth))

    def bands_from_image(self, image: torch.Tensor) -> SubBands:
        """``[..., 3, H, W]`` RGB to sub-bands (luma maps, or per-channel maps)."""
        src = rgb_to_luma(image) if self.cfg.dwt_channels == "luma" else image
        return haar_dwt2d(src)

    def init_queries(self, bands: SubBands) -> FrequencyQueries:
        stacked = bands.stack()  # [..., 4, h, w] (luma) or [..., 3, 4, h, w] (rgb)
        if self.cfg.dwt_channels == "luma":
            stacked = stacked.unsqueeze(-3)
        else:
            stacked = stacked.transpose(-4, -3)
        tokens = self.proj(patchify(stacked, self.cfg.freq_patch))  # [..., 4, N, D]
        lead = tokens.shape[:-3]
        emb = self.band_embeddings.unsqueeze(-2).expand(*lead, NUM_BANDS, 1, self.cfg.dim)
        content = torch.cat([emb, tokens], dim=-2)
        if content.shape[-2] != self.pos.shape[0]:
            raise ValueError(f"{content.shape[-2] - 1} frequency patches, expected {self.pos.shape[0] - 1}")
        return FrequencyQueries(content, self.pos, self.band_embeddings)

    def encode(self, queries: FrequencyQueries) -> torch.Tensor:
        x = queries.merged
        for layer in self.layers:
            x = layer(x)
        return x[..., :, 0, :]

    def forward(self, bands: SubBands) -> torch.Tensor:
        return self.encode(self.init_queries(bands))
