"""Task heads and the full training objective."""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .config import ModelConfig
from .famm import PyramidLevel, pyramid_aux_loss
from .losses import batched_set_loss, bce, focal_terms, multilabel_bce
from .numerics import FeedForward, NonFiniteError, Rng

FG_TYPES = ("FS", "FA", "TS", "TA")
LOSS_TERMS = ("bi_cls", "fg_cls", "bbox", "token", "aux")


@dataclass
class Predictions:
    """Batched model outputs; boxes are sigmoid-bounded ``cxcywh``."""

    binary_logit: torch.Tensor     # [B]
    fg_logits: torch.Tensor        # [B, 4] ordered FS, FA, TS, TA
    boxes: torch.Tensor            # [B, K, 4]
    box_conf_logit: torch.Tensor   # [B, K]
    token_logits: torch.Tensor     # [B, L]
    token_valid: torch.Tensor | None = None  # [B, L]
    levels: list[PyramidLevel] = field(default_factory=list)

    @property
    def box_conf(self) -> torch.Tensor:
        return torch.sigmoid(self.box_conf_logit)

    def best_boxes(self) -> torch.Tensor:
        """The highest-confidence grounding box per sample, ``[B, 4]``."""
        idx = self.box_conf_logit.argmax(-1)
        return self.boxes[torch.arange(self.boxes.shape[0]), idx]


@dataclass
class GroundTruth:
    pair_fake: torch.Tensor        # [B]
    fg_labels: torch.Tensor        # [B, 4]
    face_boxes: list[torch.Tensor]  # B entries of [m_b, 4]
    token_fake: torch.Tensor       # [B, L]


class Heads(nn.Module):
    def __init__(self, cfg: ModelConfig, rng: Rng, dtype=torch.float32, scheme: str = "trunc_normal"):
        super().__init__()

        def head(i, d_out):
            return FeedForward(cfg.dim, rng.child(i), dtype, 1, cfg.activation, d_out, scheme)

        self.binary = head(0, 1)
        self.fg_image = head(1, 2)
        self.fg_text = head(2, 2)
        self.box = head(3, 4)
        self.conf = head(4, 1)
        self.token = head(5, 1)

    def forward(self, dec: dict[str, torch.Tensor], token_valid=None, levels=None) -> Predictions:
        img, txt, pair = dec["img_out"], dec["text_out"], dec["pair_out"]
        fg = torch.cat([self.fg_image(img[..., 0, :]), self.fg_text(txt[..., 0, :])], dim=-1)
        return Predictions(
            binary_logit=self.binary(pair[..., 0, :]).squeeze(-1),
            fg_logits=fg,
            boxes=torch.sigmoid(self.box(img[..., 1:, :])),
            box_conf_logit=self.conf(img[..., 1:, :]).squeeze(-1),
            token_logits=self.token(txt[..., 1:, :]).squeeze(-1),
            token_valid=token_valid,
            levels=levels or [],
        )


def heads_forward(decoder_out: dict[str, torch.Tensor], params: Heads) -> Predictions:
    return params(decoder_out)


def total_loss(preds: Predictions, gt: GroundTruth, weights: dict[str, float] | None = None,
               cfg: ModelConfig | None = None, backend: str | None = None
               ) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Weighted sum of the five terms and the unweighted per-term breakdown."""
    cfg = cfg or ModelConfig()
    weights = {**{k: 1.0 for k in LOSS_TERMS}, **(weights if weights is not None else cfg.loss_weights)}
    terms: dict[str, torch.Tensor] = {}
    terms["bi_cls"] = bce(preds.binary_logit, gt.pair_fake).mean()
    terms["fg_cls"] = multilabel_bce(preds.fg_logits, gt.fg_labels).mean()
    terms["bbox"] = batched_set_loss(preds.box_conf_logit, preds.boxes, gt.face_boxes,
                                     cfg.match_weights, backend)[0].mean()
    valid = preds.token_valid if preds.token_valid is not None else torch.ones_like(gt.token_fake, dtype=torch.bool)
    terms["token"] = batched_focal_loss(preds.token_logits, gt.token_fake, valid, cfg.focal_gamma, cfg.focal_alpha)
    if preds.levels:
        terms["aux"] = pyramid_aux_loss(preds.levels, gt.face_boxes, cfg.match_weights, backend)
    else:
        terms["aux"] = preds.binary_logit.sum() * 0
    for name, value in terms.items():
        if not torch.isfinite(value):
            raise NonFiniteError(f"non-finite loss term {name}")
    total = sum(weights[k] * terms[k] for k in LOSS_TERMS)
    return total, terms


def batched_focal_loss(logits, targets, valid, gamma=2.0, alpha=0.25) -> torch.Tensor:
    """Per-sample masked-mean focal loss, averaged over samples that have valid tokens."""
    terms = focal_terms(logits, targets, gamma, alpha) * valid
    n = valid.sum(-1)
    has = n > 0
    if not has.any():
        return logits.sum() * 0
    return (terms.sum(-1)[has] / n[has]).mean()
