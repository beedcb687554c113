"""Box geometry, classification losses and set-matched box supervision."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import torch

from .matching import hungarian_match


class InputError(ValueError):
    pass


def cxcywh_to_xyxy(b: torch.Tensor) -> torch.Tensor:
    cx, cy, w, h = b.unbind(-1)
    return torch.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], dim=-1)


def xyxy_to_cxcywh(b: torch.Tensor) -> torch.Tensor:
    x0, y0, x1, y1 = b.unbind(-1)
    return torch.stack([(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0], dim=-1)


def _area(b):
    return (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])


def pairwise_iou_giou(a: torch.Tensor, b: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """IoU and GIoU between corner boxes ``a [n,4]`` and ``b [m,4]``; both ``[n, m]``."""
    area_a, area_b = _area(a), _area(b)
    lt = torch.maximum(a[:, None, :2], b[None, :, :2])
    rb = torch.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = (rb - lt).clamp(min=0)
    inter = wh[..., 0] * wh[..., 1]
    union = area_a[:, None] + area_b[None, :] - inter
    iou = inter / union
    lt_c = torch.minimum(a[:, None, :2], b[None, :, :2])
    rb_c = torch.maximum(a[:, None, 2:], b[None, :, 2:])
    wh_c = rb_c - lt_c
    hull = wh_c[..., 0] * wh_c[..., 1]
    return iou, iou - (hull - union) / hull


def _check_extent(xyxy: torch.Tensor) -> None:
    if (xyxy[..., 2] <= xyxy[..., 0]).any() or (xyxy[..., 3] <= xyxy[..., 1]).any():
        raise InputError("box with non-positive width or height")


def giou_xyxy(a, b) -> torch.Tensor:
    a, b = torch.as_tensor(a, dtype=torch.float64), torch.as_tensor(b, dtype=torch.float64)
    _check_extent(a)
    _check_extent(b)
    return pairwise_iou_giou(a.reshape(1, 4), b.reshape(1, 4))[1][0, 0]


def giou(a, b) -> torch.Tensor:
    """GIoU of two ``cxcywh`` boxes."""
    a = torch.as_tensor(a)
    b = torch.as_tensor(b, dtype=a.dtype)
    xa, xb = cxcywh_to_xyxy(a.reshape(1, 4)), cxcywh_to_xyxy(b.reshape(1, 4))
    _check_extent(xa)
    _check_extent(xb)
    return pairwise_iou_giou(xa, xb)[1][0, 0]


def bce(logit: torch.Tensor, target) -> torch.Tensor:
    """Elementwise logit-space binary cross entropy."""
    logit = torch.as_tensor(logit)
    target = torch.as_tensor(target, dtype=logit.dtype)
    return logit.clamp(min=0) - logit * target + torch.log1p(torch.exp(-logit.abs()))


def multilabel_bce(logits: torch.Tensor, targets) -> torch.Tensor:
    """Mean BCE over the class axis (last)."""
    return bce(logits, targets).mean(-1)


def focal_terms(logits, targets, gamma: float = 2.0, alpha: float = 0.25) -> torch.Tensor:
    targets = torch.as_tensor(targets, dtype=logits.dtype)
    p = torch.sigmoid(logits)
    p_t = p * targets + (1 - p) * (1 - targets)
    alpha_t = alpha * targets + (1 - alpha) * (1 - targets)
    return alpha_t * (1 - p_t) ** gamma * bce(logits, targets)


def focal_loss(logits, targets, gamma: float = 2.0, alpha: float = 0.25, valid_mask=None) -> torch.Tensor:
    """Mean focal loss over valid (non-PAD) positions of one sequence."""
    logits = torch.as_tensor(logits)
    valid = torch.ones_like(logits, dtype=torch.bool) if valid_mask is None else torch.as_tensor(valid_mask, dtype=torch.bool)
    if not valid.any():
        raise InputError("focal loss over an empty valid mask")
    terms = focal_terms(logits, targets, gamma, alpha)
    return terms[valid].mean()


def match_cost(score_logits: torch.Tensor, boxes: torch.Tensor, gt: torch.Tensor,
               weights: Sequence[float] = (2.0, 5.0, 2.0)) -> torch.Tensor:
    """``[n, m]`` matching cost: w_cls(1 - score) + w_l1 * L1 + w_giou(1 - GIoU)."""
    w_cls, w_l1, w_giou = weights
    prob = torch.sigmoid(score_logits)
    l1 = (boxes[:, None, :] - gt[None, :, :]).abs().sum(-1)
    _, g = pairwise_iou_giou(cxcywh_to_xyxy(boxes), cxcywh_to_xyxy(gt))
    return w_cls * (1 - prob)[:, None] + w_l1 * l1 + w_giou * (1 - g)


@dataclass
class SetLoss:
    total: torch.Tensor
    cls: torch.Tensor
    l1: torch.Tensor
    giou: torch.Tensor
    pairs: list[tuple[int, int]] = field(default_factory=list)


def batched_match(score_logits: torch.Tensor, boxes: torch.Tensor, gt_boxes: Sequence,
                  weights: Sequence[float] = (2.0, 5.0, 2.0), backend: str | None = None
                  ) -> list[list[tuple[int, int]]]:
    """Per-sample Hungarian assignment of ``n`` predictions to the sample's ground truth."""
    B, n = score_logits.shape
    out: list[list[tuple[int, int]]] = [[] for _ in range(B)]
    with torch.no_grad():
        for b in range(B):
            gt = torch.as_tensor(gt_boxes[b], dtype=boxes.dtype).reshape(-1, 4)
            if gt.shape[0] and n:
                out[b] = hungarian_match(match_cost(score_logits[b], boxes[b], gt, weights), backend).pairs
    return out


def batched_set_loss(score_logits: torch.Tensor, boxes: torch.Tensor, gt_boxes: Sequence,
                     weights: Sequence[float] = (2.0, 5.0, 2.0), backend: str | None = None,
                     pairs: list[list[tuple[int, int]]] | None = None
                     ) -> tuple[torch.Tensor, list[list[tuple[int, int]]]]:
    """Per-sample set losses for ``score_logits [B, n]``, ``boxes [B, n, 4]``.

    Each sample is Hungarian-matched on its own (or ``pairs`` is replayed); the
    loss arithmetic is then done for the whole batch at once. Returns ``[B]``
    losses and the pairs.
    """
    B = score_logits.shape[0]
    gts = [torch.as_tensor(g, dtype=boxes.dtype).reshape(-1, 4) for g in gt_boxes]
    if pairs is None:
        pairs = batched_match(score_logits, boxes, gts, weights, backend)
    flat_b = [b for b in range(B) for _ in pairs[b]]
    flat_p = [p for b in range(B) for p, _ in pairs[b]]
    flat_g = [g for b in range(B) for _, g in pairs[b]]
    target = torch.zeros_like(score_logits)
    if flat_b:
        target = target.index_put((torch.tensor(flat_b), torch.tensor(flat_p)),
                                  torch.ones(len(flat_b), dtype=target.dtype))
    loss = bce(score_logits, target).mean(-1)
    if flat_b:
        bi = torch.tensor(flat_b)
        mb = boxes[bi, torch.tensor(flat_p)]
        mg = torch.stack([gts[b][g] for b, g in zip(flat_b, flat_g)])
        l1 = (mb - mg).abs().sum(-1)
        g = pairwise_giou_diag(mb, mg)
        per_pair = l1 + (1 - g)
        counts = torch.bincount(bi, minlength=B).to(per_pair.dtype)
        sums = torch.zeros(B, dtype=per_pair.dtype).index_add(0, bi, per_pair)
        loss = loss + sums / counts.clamp(min=1)
    return loss, pairs


def pairwise_giou_diag(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """GIoU of row-aligned ``cxcywh`` box pairs ``a[i]``, ``b[i]``."""
    a, b = cxcywh_to_xyxy(a), cxcywh_to_xyxy(b)
    lt = torch.maximum(a[:, :2], b[:, :2])
    rb = torch.minimum(a[:, 2:], b[:, 2:])
    wh = (rb - lt).clamp(min=0)
    inter = wh[:, 0] * wh[:, 1]
    union = _area(a) + _area(b) - inter
    wh_c = torch.maximum(a[:, 2:], b[:, 2:]) - torch.minimum(a[:, :2], b[:, :2])
    hull = wh_c[:, 0] * wh_c[:, 1]
    return inter / union - (hull - union) / hull


def set_loss(score_logits: torch.Tensor, boxes: torch.Tensor, gt: torch.Tensor,
             weights: Sequence[float] = (2.0, 5.0, 2.0), backend: str | None = None) -> SetLoss:
    """Hungarian-matched supervision of ``n`` scored boxes against ``m`` ground-truth boxes.

    Score BCE is averaged over all ``n`` predictions (matched -> 1, others -> 0);
    L1 and ``1 - GIoU`` are averaged over matched pairs.
    """
    gt = torch.as_tensor(gt, dtype=boxes.dtype).reshape(-1, 4)
    total, pairs = batched_set_loss(score_logits[None], boxes[None], [gt], weights, backend)
    pairs = pairs[0]
    target = torch.zeros_like(score_logits)
    zero = score_logits.sum() * 0
    l1 = g_loss = zero
    if pairs:
        pi = torch.tensor([p for p, _ in pairs])
        gi = torch.tensor([g for _, g in pairs])
        target = target.index_fill(0, pi, 1.0)
        l1 = (boxes[pi] - gt[gi]).abs().sum(-1).mean()
        g_loss = (1 - pairwise_giou_diag(boxes[pi], gt[gi])).mean()
    return SetLoss(total[0], bce(score_logits, target).mean(), l1, g_loss, pairs)


def box_set_loss(conf_logits, boxes, gt_boxes, weights=(2.0, 5.0, 2.0), backend=None) -> torch.Tensor:
    """Set loss of the ``K`` grounding predictions of one sample."""
    return set_loss(conf_logits, boxes, gt_boxes, weights, backend).total

