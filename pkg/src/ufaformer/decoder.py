"""Unified decoder: two symmetric cross-modal interaction modules and a fusing module."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .backbones import key_mask
from .config import ModelConfig
from .numerics import AttentionParams, DimensionError, FeedForward, LayerNorm, Rng, init_params, multi_head_attention


@dataclass
class DecoderQueries:
    image_q: torch.Tensor  # [..., 1+K, D]
    text_q: torch.Tensor   # [..., 1+L, D]
    pair_q: torch.Tensor   # [..., 1, D]


class CrossModalInteraction(nn.Module):
    """Own-modality attention, then cross-modality attention, then FFN; each residual + LN."""

    def __init__(self, cfg: ModelConfig, rng: Rng, dtype=torch.float32):
        super().__init__()
        self.own = AttentionParams(cfg.dim, cfg.heads, rng.child(0), dtype)
        self.other = AttentionParams(cfg.dim, cfg.heads, rng.child(1), dtype)
        self.ffn = FeedForward(cfg.dim, rng.child(2), dtype, cfg.ffn_ratio, cfg.activation)
        self.ln1 = LayerNorm(cfg.dim, dtype)
        self.ln2 = LayerNorm(cfg.dim, dtype)
        self.ln3 = LayerNorm(cfg.dim, dtype)

    def forward(self, queries, own_feats, other_feats, own_valid=None, other_valid=None):
        return cross_modal_interaction(queries, own_feats, other_feats, self, own_valid, other_valid)


def cross_modal_interaction(queries, own_feats, other_feats, params: CrossModalInteraction,
                            own_valid=None, other_valid=None) -> torch.Tensor:
    """``*_valid`` are optional ``[..., k]`` key-validity vectors (False at PAD)."""
    nq = queries.shape[-2]
    own_mask = None if own_valid is None else key_mask(own_valid, nq)
    other_mask = None if other_valid is None else key_mask(other_valid, nq)
    x = params.ln1(queries + multi_head_attention(queries, own_feats, own_feats, params.own, own_mask))
    x = params.ln2(x + multi_head_attention(x, other_feats, other_feats, params.other, other_mask))
    return params.ln3(x + params.ffn(x))


class FusingInteraction(nn.Module):
    def __init__(self, cfg: ModelConfig, rng: Rng, dtype=torch.float32):
        super().__init__()
        self.attn = AttentionParams(cfg.dim, cfg.heads, rng.child(0), dtype)
        self.ffn = FeedForward(cfg.dim, rng.child(1), dtype, cfg.ffn_ratio, cfg.activation)
        self.ln1 = LayerNorm(cfg.dim, dtype)
        self.ln2 = LayerNorm(cfg.dim, dtype)

    def forward(self, pair_q, img_out, text_out, text_valid=None):
        return fusing_interaction(pair_q, img_out, text_out, self, text_valid)


def fusing_interaction(pair_q, img_out, text_out, params: FusingInteraction, text_valid=None) -> torch.Tensor:
    kv = torch.cat([img_out, text_out], dim=-2)
    mask = None
    if text_valid is not None:
        img_valid = torch.ones(*img_out.shape[:-1], dtype=torch.bool)
        mask = key_mask(torch.cat([img_valid, text_valid], dim=-1), pair_q.shape[-2])
    x = params.ln1(pair_q + multi_head_attention(pair_q, kv, kv, params.attn, mask))
    return params.ln2(x + params.ffn(x))


class UnifiedDecoder(nn.Module):
    def __init__(self, cfg: ModelConfig, rng: Rng, dtype=torch.float32):
        super().__init__()
        self.cfg = cfg
        self.grounding = nn.Parameter(init_params(rng.child(0), (cfg.num_grounding, cfg.dim), dtype=dtype))
        self.pair = nn.Parameter(init_params(rng.child(1), (1, cfg.dim), dtype=dtype))
        self.image_layers = nn.ModuleList(CrossModalInteraction(cfg, rng.child(100 + i), dtype)
                                          for i in range(cfg.decoder_depth))
        self.text_layers = nn.ModuleList(CrossModalInteraction(cfg, rng.child(200 + i), dtype)
                                         for i in range(cfg.decoder_depth))
        self.fusing = FusingInteraction(cfg, rng.child(2), dtype)

    def init_queries(self, img_cls, text_cls, text_seq) -> DecoderQueries:
        d = self.cfg.dim
        for name, t in (("image CLS", img_cls), ("text CLS", text_cls), ("text sequence", text_seq)):
            if t.shape[-1] != d:
                raise DimensionError(f"{name} width {t.shape[-1]} != {d}")
        lead = img_cls.shape[:-2]
        image_q = torch.cat([img_cls, self.grounding.expand(*lead, *self.grounding.shape)], dim=-2)
        text_q = torch.cat([text_cls, text_seq], dim=-2)
        return DecoderQueries(image_q, text_q, self.pair.expand(*lead, 1, d))

    def forward(self, visual_feats, text_feats, img_cls, text_valid=None) -> dict[str, torch.Tensor]:
        """``text_feats`` is ``[..., 1+L, D]`` (CLS first); ``text_valid`` is ``[..., L]``, False at PAD."""
        q = self.init_queries(img_cls, text_feats[..., :1, :], text_feats[..., 1:, :])
        text_feats = q.text_q
        full_valid = None
        if text_valid is not None:
            cls_valid = torch.ones(*text_valid.shape[:-1], 1, dtype=torch.bool)
            full_valid = torch.cat([cls_valid, text_valid], dim=-1)
        img, txt = q.image_q, q.text_q
        for img_layer, txt_layer in zip(self.image_layers, self.text_layers):
            img, txt = (img_layer(img, visual_feats, text_feats, None, full_valid),
                        txt_layer(txt, text_feats, visual_feats, full_valid, None))
        pair = self.fusing(q.pair_q, img, txt, full_valid)
        return {"img_out": img, "text_out": txt, "pair_out": pair}
