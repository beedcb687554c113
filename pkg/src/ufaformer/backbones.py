"""ViT-style image encoder, text encoder and a whitespace tokenizer."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn

from .config import ConfigError, ModelConfig
from .numerics import (AttentionParams, DimensionError, FeedForward, LayerNorm, Linear, Rng,
                       init_params, multi_head_attention)

PAD, CLS, UNK = 0, 1, 2
RESERVED = ("[PAD]", "[CLS]", "[UNK]")


def patchify(image: torch.Tensor, p: int) -> torch.Tensor:
    """``[..., C, H, W]`` -> ``[..., N, C*p*p]`` with patches in row-major grid order."""
    h, w = image.shape[-2:]
    if h % p or w % p:
        raise DimensionError(f"image {h}x{w} not divisible by patch size {p}")
    lead, c = image.shape[:-3], image.shape[-3]
    x = image.reshape(*lead, c, h // p, p, w // p, p)
    k = len(lead)
    x = x.permute(*range(k), k + 1, k + 3, k, k + 2, k + 4)  # [..., gh, gw, c, p, p]
    return x.reshape(*lead, (h // p) * (w // p), c * p * p)


def patch_embed(image: torch.Tensor, p: int, proj: Linear) -> torch.Tensor:
    if image.dim() == 2:
        image = image.unsqueeze(0)
    return proj(patchify(image, p))


class Block(nn.Module):
    """Pre-norm transformer layer: x + attn(LN x), then x + FFN(LN x)."""

    def __init__(self, cfg: ModelConfig, rng: Rng, dtype):
        super().__init__()
        self.ln1 = LayerNorm(cfg.dim, dtype)
        self.attn = AttentionParams(cfg.dim, cfg.heads, rng.child(0), dtype)
        self.ln2 = LayerNorm(cfg.dim, dtype)
        self.ffn = FeedForward(cfg.dim, rng.child(1), dtype, cfg.ffn_ratio, cfg.activation)

    def forward(self, x, mask=None):
        y = self.ln1(x)
        x = x + multi_head_attention(y, y, y, self.attn, mask)
        return x + self.ffn(self.ln2(x))


class ImageEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig, rng: Rng, dtype=torch.float32, channels: int = 3):
        super().__init__()
        self.cfg = cfg
        self.proj = Linear(channels * cfg.patch_size ** 2, cfg.dim, rng.child(0), dtype)
        self.cls = nn.Parameter(init_params(rng.child(1), (1, cfg.dim), dtype=dtype))
        self.pos = nn.Parameter(init_params(rng.child(2), (cfg.num_patches + 1, cfg.dim), dtype=dtype))
        self.blocks = nn.ModuleList(Block(cfg, rng.child(10 + i), dtype) for i in range(cfg.image_depth))

    def forward(self, image: torch.Tensor) -> dict[str, torch.Tensor]:
        """``image`` is ``[..., C, S, S]``; returns ``cls [..., 1, D]`` and ``patches [..., N, D]``."""
        s = self.cfg.image_size
        if image.shape[-2:] != (s, s):
            raise DimensionError(f"image must be {s}x{s}, got {tuple(image.shape[-2:])}")
        x = patch_embed(image, self.cfg.patch_size, self.proj)
        cls = self.cls.expand(*x.shape[:-2], 1, self.cfg.dim)
        x = torch.cat([cls, x], dim=-2) + self.pos
        for blk in self.blocks:
            x = blk(x)
        return {"cls": x[..., :1, :], "patches": x[..., 1:, :]}


class Vocab:
    """Token list where line index is the id; ids 0-2 are reserved."""

    def __init__(self, tokens: list[str]):
        if not tokens:
            raise ConfigError("empty vocabulary")
        if tuple(tokens[:3]) != RESERVED:
            tokens = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __getitem__(self, word: str) -> int:
        return self.index.get(word, UNK)

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln.strip() for ln in lines if ln.strip()])

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")


@dataclass
class TokenSequence:
    ids: list[int]
    pad_mask: list[bool]  # True at PAD positions

    def __len__(self) -> int:
        return len(self.ids)


def split_words(text: str) -> list[str]:
    return text.lower().split()


def tokenize(text: str, vocab: Vocab | None, max_len: int) -> TokenSequence:
    """CLS + lowercase whitespace words, truncated and PAD-filled to ``max_len`` ids."""
    if vocab is None or len(vocab) == 0:
        raise ConfigError("tokenize needs a loaded vocabulary")
    words = [vocab[w] for w in split_words(text)][: max_len - 1]
    ids = [CLS] + words + [PAD] * (max_len - 1 - len(words))
    return TokenSequence(ids=ids, pad_mask=[i == PAD for i in ids])


class TextEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig, rng: Rng, dtype=torch.float32):
        super().__init__()
        self.cfg = cfg
        self.tok = nn.Parameter(init_params(rng.child(0), (cfg.vocab_size, cfg.dim), dtype=dtype))
        self.pos = nn.Parameter(init_params(rng.child(1), (cfg.max_text_len, cfg.dim), dtype=dtype))
        self.blocks = nn.ModuleList(Block(cfg, rng.child(10 + i), dtype) for i in range(cfg.text_depth))

    def forward(self, ids: torch.Tensor) -> dict[str, torch.Tensor]:
        """``ids`` is ``[..., T]`` with T <= max_text_len; PAD keys are masked out."""
        t = ids.shape[-1]
        if t > self.cfg.max_text_len:
            raise ValueError(f"sequence of {t} tokens exceeds max_text_len {self.cfg.max_text_len}")
        if int(ids.max()) >= self.cfg.vocab_size:
            raise ValueError("token id outside the embedding table")
        x = self.tok[ids] + self.pos[:t]
        mask = key_mask(ids != PAD, t)
        for blk in self.blocks:
            x = blk(x, mask)
        return {"cls": x[..., :1, :], "seq": x[..., 1:, :], "valid": ids[..., 1:] != PAD}


def key_mask(valid: torch.Tensor, n_query: int) -> torch.Tensor:
    """Broadcast a ``[..., k]`` key-validity vector to a ``[..., q, k]`` attention mask."""
    return valid.unsqueeze(-2).expand(*valid.shape[:-1], n_query, valid.shape[-1])
