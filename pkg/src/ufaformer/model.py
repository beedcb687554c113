"""The assembled detector: encoders, frequency branch, FAMM, unified decoder, heads."""
from __future__ import annotations

import torch
from torch import nn

from .backbones import ImageEncoder, TextEncoder
from .config import ModelConfig
from .decoder import UnifiedDecoder
from .famm import FAMM
from .frequency import FrequencyEncoder
from .heads import Heads, Predictions
from .numerics import Rng


class UFAFormer(nn.Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=torch.float32):
        super().__init__()
        self.cfg = cfg
        rng = Rng(seed)
        self.image_encoder = ImageEncoder(cfg, rng.child(1), dtype)
        self.text_encoder = TextEncoder(cfg, rng.child(2), dtype)
        self.frequency_encoder = FrequencyEncoder(cfg, rng.child(3), dtype) if cfg.use_frequency else None
        self.famm = FAMM(cfg, rng.child(4), dtype)
        self.decoder = UnifiedDecoder(cfg, rng.child(5), dtype)
        self.heads = Heads(cfg, rng.child(6), dtype)

    @property
    def dtype(self) -> torch.dtype:
        return self.image_encoder.cls.dtype

    def forward(self, images: torch.Tensor, ids: torch.Tensor) -> Predictions:
        """``images [B, 3, S, S]`` in [0, 1]; ``ids [B, T]`` token ids with CLS first."""
        images = images.to(self.dtype)
        img = self.image_encoder(images)
        txt = self.text_encoder(ids)
        freq = None
        if self.frequency_encoder is not None:
            freq = self.frequency_encoder(self.frequency_encoder.bands_from_image(images))
        visual, levels, _ = self.famm(img["patches"], freq)
        text_feats = torch.cat([txt["cls"], txt["seq"]], dim=-2)
        dec = self.decoder(visual, text_feats, img["cls"], txt["valid"])
        return self.heads(dec, txt["valid"], levels)
