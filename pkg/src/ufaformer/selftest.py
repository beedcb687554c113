"""Built-in oracle and invariant checks, runnable without a test framework."""
from __future__ import annotations

import itertools
import math
import time
from typing import Callable

import numpy as np
import torch

from . import matching
from .config import ModelConfig
from .decoder import UnifiedDecoder
from .famm import FAMM, PyramidLevel, pyramid_aux_loss, pyramid_matches
from .frequency import FrequencyEncoder, inter_band_attention, inter_band_mask, intra_band_attention, intra_band_mask
from .heads import LOSS_TERMS, GroundTruth, Predictions, total_loss
from .losses import bce, focal_loss, giou, xyxy_to_cxcywh
from .metrics import auc_score, average_precision, prf
from .numerics import AttentionParams, FeedForward, LayerNorm, Rng, grad_check, multi_head_attention
from .wavelet import haar_dwt2d, haar_idwt2d

F64 = torch.float64


def _gen(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(seed)


def check_dwt() -> str:
    g = _gen(0)
    worst32 = worst64 = energy = 0.0
    for _ in range(100):
        x = torch.rand(64, 64, generator=g, dtype=F64)
        b64 = haar_dwt2d(x)
        worst64 = max(worst64, float((haar_idwt2d(b64) - x).abs().max()))
        x32 = x.float()
        worst32 = max(worst32, float((haar_idwt2d(haar_dwt2d(x32)) - x32).abs().max()))
        e = float((x ** 2).sum())
        energy = max(energy, abs(float(b64.energy()) - e) / e)
    assert worst32 <= 1e-6 and worst64 <= 1e-12 and energy <= 1e-6, (worst32, worst64, energy)
    return f"round trip f32 {worst32:.1e}, f64 {worst64:.1e}; energy {energy:.1e}"


def _masked_reference(x, p, mask):
    """Full attention over the flattened sequence with ``-inf`` outside ``mask``, one head at a time."""
    d, h = p.dim, p.heads
    dh = d // h
    q, k, v = p.q(x), p.k(x), p.v(x)
    out = []
    for i in range(h):
        s = slice(i * dh, (i + 1) * dh)
        logits = (q[:, s] @ k[:, s].T) / math.sqrt(dh)
        logits = logits.masked_fill(~mask, float("-inf"))
        out.append(torch.softmax(logits, -1) @ v[:, s])
    return p.out(torch.cat(out, -1))


def check_mask_equivalence() -> str:
    g = _gen(1)
    worst = 0.0
    for seed in range(50):
        heads = int(torch.randint(1, 4, (1,), generator=g))
        dim = heads * int(torch.randint(2, 5, (1,), generator=g))
        slots = int(torch.randint(1, 7, (1,), generator=g))
        p = AttentionParams(dim, heads, Rng(seed), F64)
        with torch.no_grad():
            for lin in (p.q, p.k, p.v):
                lin.weight.mul_(20)
        x = torch.randn(4, slots, dim, generator=g, dtype=F64)
        flat = x.reshape(-1, dim)
        a = intra_band_attention(x, p).reshape(-1, dim) - _masked_reference(flat, p, intra_band_mask(slots))
        b = inter_band_attention(x, p).reshape(-1, dim) - _masked_reference(flat, p, inter_band_mask(slots))
        worst = max(worst, float(a.detach().abs().max()), float(b.detach().abs().max()))
    assert worst <= 1e-6, worst
    return f"50 configs, max deviation {worst:.1e}"


def _brute_force(cost: np.ndarray) -> float:
    m, n = cost.shape
    if m > n:
        return _brute_force(cost.T)
    return min(math.fsum(cost[i, c[i]] for i in range(m)) for c in itertools.permutations(range(n), m))


def check_hungarian() -> str:
    rng = np.random.default_rng(2)
    backends = ["python"] + (["compiled"] if matching.BACKEND == "compiled" else [])
    for _ in range(200):
        m, n = (int(v) for v in rng.integers(1, 8, 2))
        cost = rng.random((m, n))
        want = _brute_force(cost)
        for b in backends:
            got = matching.hungarian_match(cost, b).total_cost
            assert got == want, (b, got, want)
    return f"200 matrices up to 7x7, backends {'+'.join(backends)}"


def _grad_cases() -> dict[str, Callable[[], float]]:
    cfg = ModelConfig()
    g = _gen(3)

    def blocks():
        p = AttentionParams(cfg.dim, cfg.heads, Rng(0), F64)
        f = FeedForward(cfg.dim, Rng(1), F64)
        ln = LayerNorm(cfg.dim, F64)
        x = torch.randn(5, cfg.dim, generator=g, dtype=F64)
        w = torch.randn(5, cfg.dim, generator=g, dtype=F64)
        with torch.no_grad():
            ln.gamma.normal_(1.0, 0.3, generator=g)
        params = [*p.parameters(), *f.parameters(), *ln.parameters()]
        return grad_check(lambda: (w * f(ln(multi_head_attention(x, x, x, p)))).sum(), params, samples_per_param=4)

    def frequency():
        enc = FrequencyEncoder(cfg, Rng(2), F64)
        bands = enc.bands_from_image(torch.rand(3, 32, 32, generator=g, dtype=F64))
        w = torch.randn(4, cfg.dim, generator=g, dtype=F64)
        return grad_check(lambda: (w * enc(bands)).sum(), list(enc.parameters()), samples_per_param=3)

    def famm():
        m = FAMM(cfg, Rng(3), F64)
        patches = torch.randn(1, cfg.num_patches, cfg.dim, generator=g, dtype=F64)
        freq = torch.randn(1, 4, cfg.dim, generator=g, dtype=F64)
        gts = [torch.tensor([[0.4, 0.5, 0.3, 0.3]], dtype=F64)]
        w = torch.randn(4 + 105, cfg.dim, generator=g, dtype=F64)
        # selection and matching are piecewise constant, so difference with both held fixed
        _, levels, chosen = m(patches, freq)
        matches = pyramid_matches(levels, gts)

        def loss():
            visual, levels, _ = m(patches, freq, chosen)
            return (w * visual[0]).sum() + pyramid_aux_loss(levels, gts, matches=matches)

        return grad_check(loss, list(m.parameters()), samples_per_param=3)

    def decoder():
        dec = UnifiedDecoder(cfg, Rng(4), F64)
        visual = torch.randn(9, cfg.dim, generator=g, dtype=F64)
        text = torch.randn(cfg.max_text_len, cfg.dim, generator=g, dtype=F64)
        cls = torch.randn(1, cfg.dim, generator=g, dtype=F64)
        valid = torch.arange(cfg.text_len) < 6
        w = torch.randn(1, cfg.dim, generator=g, dtype=F64)
        w_img = torch.randn(1 + cfg.num_grounding, cfg.dim, generator=g, dtype=F64)

        def loss():
            out = dec(visual, text, cls, valid)
            return (w * out["pair_out"]).sum() + (w_img * out["img_out"]).sum() + out["text_out"][:7].pow(2).sum()

        return grad_check(loss, list(dec.parameters()), samples_per_param=3)

    def losses():
        preds = Predictions(
            binary_logit=torch.randn(2, generator=g, dtype=F64),
            fg_logits=torch.randn(2, 4, generator=g, dtype=F64),
            boxes=torch.rand(2, 3, 4, generator=g, dtype=F64) * 0.4 + 0.1,
            box_conf_logit=torch.randn(2, 3, generator=g, dtype=F64),
            token_logits=torch.randn(2, 5, generator=g, dtype=F64),
            token_valid=torch.tensor([[True] * 5, [True, True, False, False, False]]),
            levels=[PyramidLevel(1.0, torch.zeros(2, 4, 1), torch.randn(2, 4, generator=g, dtype=F64),
                                 torch.rand(2, 4, 4, generator=g, dtype=F64) * 0.4 + 0.1)],
        )
        gt = GroundTruth(torch.tensor([1.0, 0.0], dtype=F64), torch.tensor([[1.0, 0, 0, 1], [0, 0, 0, 0]], dtype=F64),
                         [torch.tensor([[0.3, 0.3, 0.2, 0.2]], dtype=F64), torch.zeros(0, 4, dtype=F64)],
                         torch.tensor([[0.0, 1, 0, 0, 1], [0, 0, 0, 0, 0]], dtype=F64))
        tensors = [preds.binary_logit, preds.fg_logits, preds.boxes, preds.box_conf_logit, preds.token_logits,
                   preds.levels[0].score_logits, preds.levels[0].boxes]
        for t in tensors:
            t.requires_grad_(True)
        return max(grad_check(lambda name=name: total_loss(preds, gt)[1][name], tensors, samples_per_param=4)
                   for name in LOSS_TERMS)

    return {"numerics blocks": blocks, "frequency encoder": frequency, "famm": famm, "decoder": decoder,
            "loss terms": losses}


def check_grad() -> str:
    parts = []
    for name, fn in _grad_cases().items():
        err = fn()
        assert err < 1e-4, (name, err)
        parts.append(f"{name} {err:.1e}")
    return "; ".join(parts)


def check_grad_detector() -> str:
    x = torch.tensor([1.0, -2.0, 0.5], dtype=F64, requires_grad=True)
    err = grad_check(lambda: (x ** 3).sum(), [x], analytic=[-3 * x.detach() ** 2])
    assert err > 1e-2, err
    return f"sign-flipped gradient flagged (error {err:.2f})"


def check_closed_forms() -> str:
    t = lambda *v: torch.tensor(v, dtype=F64)  # noqa: E731
    assert abs(float(bce(t(0.0), t(1.0))) - math.log(2)) <= 1e-10
    assert abs(float(focal_loss(t(0.0), t(1.0))) - 0.0625 * math.log(2)) <= 1e-10
    a, b, c = xyxy_to_cxcywh(t(0, 0, 1, 1)), xyxy_to_cxcywh(t(1, 0, 2, 1)), xyxy_to_cxcywh(t(2, 0, 3, 1))
    assert abs(float(giou(a, a)) - 1) <= 1e-10
    assert abs(float(giou(a, b))) <= 1e-10
    assert abs(float(giou(a, c)) + 1 / 3) <= 1e-10
    return "BCE ln2, focal 0.04332, GIoU {1, 0, -1/3}"


def check_metric_oracles() -> str:
    rng = np.random.default_rng(4)
    for _ in range(100):
        n = int(rng.integers(2, 30))
        s = rng.integers(0, 6, n) / 5
        y = rng.random(n) < 0.5
        y[0], y[1] = True, False
        pos, neg = s[y], s[~y]
        twice = sum(2 * (p > q) + (p == q) for p in pos for q in neg)
        assert auc_score(s, y) == 100.0 * twice / (2 * len(pos) * len(neg))
        prec = [np.sum(y & (s >= s[i])) / np.sum(s >= s[i]) for i in range(n) if y[i]]
        assert average_precision(s, y) == 100.0 * math.fsum(prec) / len(prec)
        tp, fp, fn = (int(v) for v in rng.integers(0, 10, 3))
        pr, re, f1 = prf(tp, fp, fn)
        assert f1 == (2 * pr * re / (pr + re) if pr + re else 0.0)
    return "AUC and AP equal the enumeration oracles on 100 instances; F1 identity holds"


CHECKS: dict[str, Callable[[], str]] = {
    "dwt": check_dwt,
    "mask-equivalence": check_mask_equivalence,
    "hungarian": check_hungarian,
    "grad-check": check_grad,
    "grad-detector": check_grad_detector,
    "closed-forms": check_closed_forms,
    "metric-oracles": check_metric_oracles,
}


def run(printer: Callable[[str], None] = print) -> bool:
    ok = True
    for name, fn in CHECKS.items():
        t0 = time.perf_counter()
        try:
            detail = fn()
            status = "PASS"
        except Exception as exc:  # report every failure, keep going
            detail = f"{type(exc).__name__}: {exc}"
            status = "FAIL"
            ok = False
        printer(f"{status} {name:<18} {time.perf_counter() - t0:6.2f}s  {detail}")
    printer("selftest: " + ("all checks passed" if ok else "FAILED"))
    return ok
