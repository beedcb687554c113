import itertools
import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from ufaformer.losses import (InputError, bce, box_set_loss, cxcywh_to_xyxy, focal_loss, giou, giou_xyxy,
                              multilabel_bce, pairwise_iou_giou, set_loss, xyxy_to_cxcywh)
from ufaformer.numerics import grad_check

F64 = torch.float64
LN2 = math.log(2.0)


def t(*v):
    return torch.tensor(v, dtype=F64)


def test_bce_closed_forms():
    assert abs(bce(t(0.0), t(1.0)).item() - LN2) <= 1e-10
    assert bce(t(50.0), t(1.0)).item() < 1e-20
    assert bce(t(-800.0), t(0.0)).item() == 0.0
    assert math.isfinite(bce(t(800.0), t(0.0)).item())
    assert abs(multilabel_bce(torch.zeros(4, dtype=F64), torch.zeros(4, dtype=F64)).item() - LN2) <= 1e-10


def test_focal_closed_forms():
    assert abs(focal_loss(t(0.0), t(1.0)).item() - 0.25 * 0.25 * LN2) <= 1e-10
    assert abs(focal_loss(t(0.0), t(1.0)).item() - 0.04332) < 1e-5
    assert focal_loss(t(40.0), t(1.0)).item() < 1e-15
    g = torch.Generator().manual_seed(0)
    logits = torch.randn(12, dtype=F64, generator=g) * 3
    targets = (torch.rand(12, generator=g) > 0.5).to(F64)
    valid = torch.rand(12, generator=g) > 0.3
    ref = 0.5 * bce(logits, targets)[valid].mean()
    assert abs(focal_loss(logits, targets, 0.0, 0.5, valid) - ref) <= 1e-10
    with pytest.raises(InputError):
        focal_loss(logits, targets, valid_mask=torch.zeros(12, dtype=torch.bool))


def xyxy(*v):
    return xyxy_to_cxcywh(t(*v))


def test_giou_closed_forms():
    a = t(0.3, 0.4, 0.2, 0.1)
    assert abs(giou(a, a).item() - 1.0) <= 1e-10
    assert abs(giou(xyxy(0, 0, 1, 1), xyxy(1, 0, 2, 1)).item()) <= 1e-10
    assert abs(giou(xyxy(0, 0, 1, 1), xyxy(2, 0, 3, 1)).item() + 1 / 3) <= 1e-10
    assert abs(giou_xyxy(t(0, 0, 1, 1), t(2, 0, 3, 1)).item() + 1 / 3) <= 1e-10
    with pytest.raises(InputError):
        giou(t(0.5, 0.5, 0.0, 0.1), a)


box = st.tuples(st.floats(0.1, 0.9), st.floats(0.1, 0.9), st.floats(0.01, 0.5), st.floats(0.01, 0.5))


@settings(max_examples=80, deadline=None)
@given(box, box)
def test_giou_properties(a, b):
    a, b = t(*a), t(*b)
    g = giou(a, b).item()
    assert abs(g - giou(b, a).item()) <= 1e-12
    iou, _ = pairwise_iou_giou(cxcywh_to_xyxy(a)[None], cxcywh_to_xyxy(b)[None])
    assert -1 < g <= iou.item() + 1e-12


def test_giou_equals_iou_when_hull_is_union():
    a, b = xyxy(0, 0, 2, 1), xyxy(1, 0, 3, 1)
    iou, _ = pairwise_iou_giou(cxcywh_to_xyxy(a)[None], cxcywh_to_xyxy(b)[None])
    assert abs(giou(a, b).item() - iou.item()) <= 1e-12 and abs(iou.item() - 1 / 3) < 1e-12


def test_box_set_loss_examples():
    gt = t(0.5, 0.5, 0.2, 0.2)[None]
    boxes = torch.stack([t(0.5, 0.5, 0.2, 0.2), t(0.2, 0.2, 0.1, 0.1)])
    assert box_set_loss(t(40.0, -40.0), boxes, gt).item() < 1e-12
    assert box_set_loss(t(-40.0, -40.0), boxes, torch.zeros(0, 4, dtype=F64)).item() < 1e-12


def test_box_set_loss_hand_computed():
    gt = t(0.6, 0.5, 0.2, 0.2)[None]
    boxes = torch.stack([t(0.5, 0.5, 0.2, 0.2), t(0.2, 0.2, 0.1, 0.1)])
    conf = t(0.3, -0.2)
    costs = []
    for p in range(2):
        l1 = (boxes[p] - gt[0]).abs().sum().item()
        g = giou(boxes[p], gt[0]).item()
        costs.append(2 * (1 - torch.sigmoid(conf[p]).item()) + 5 * l1 + 2 * (1 - g))
    best = min(range(2), key=lambda p: costs[p])
    assert best == 0
    l1 = 0.1
    g = (0.1 * 0.2) / (0.04 + 0.04 - 0.02) - (0.3 * 0.2 - 0.06) / (0.3 * 0.2)
    cls = (bce(conf[0], t(1.0)) + bce(conf[1], t(0.0))).item() / 2
    out = set_loss(conf, boxes, gt)
    assert out.pairs == [(0, 0)]
    assert abs(out.total.item() - (cls + l1 + 1 - g)) <= 1e-12
    assert abs(out.total.item() - (out.cls + out.l1 + out.giou).item()) <= 1e-12


def test_box_set_loss_permutation_invariant():
    g = torch.Generator().manual_seed(3)
    boxes = torch.rand(5, 4, generator=g, dtype=F64) * 0.4 + 0.1
    conf = torch.randn(5, generator=g, dtype=F64)
    gt = torch.rand(2, 4, generator=g, dtype=F64) * 0.4 + 0.1
    ref = box_set_loss(conf, boxes, gt)
    for perm in itertools.islice(itertools.permutations(range(5)), 0, 120, 17):
        p = torch.tensor(perm)
        assert abs(box_set_loss(conf[p], boxes[p], gt) - ref) <= 1e-12


def test_loss_grad_checks():
    g = torch.Generator().manual_seed(1)
    logits = torch.randn(6, dtype=F64, generator=g, requires_grad=True)
    targets = (torch.rand(6, generator=g) > 0.5).to(F64)
    valid = torch.tensor([True, True, True, True, False, False])
    assert grad_check(lambda: bce(logits, targets).mean(), [logits]) < 1e-4
    assert grad_check(lambda: multilabel_bce(logits[:4], targets[:4]), [logits]) < 1e-4
    assert grad_check(lambda: focal_loss(logits, targets, valid_mask=valid), [logits]) < 1e-4
    boxes = (torch.rand(4, 4, generator=g, dtype=F64) * 0.3 + 0.2).requires_grad_(True)
    gt = torch.rand(2, 4, generator=g, dtype=F64) * 0.3 + 0.2
    assert grad_check(lambda: box_set_loss(logits[:4], boxes, gt), [logits, boxes]) < 1e-4
