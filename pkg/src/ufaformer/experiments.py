"""Desk-scale experiment drivers: the overfit sanity run, saliency scoring and ablations."""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

import torch

from .backbones import tokenize
from .config import RunConfig
from .data import preprocess
from .metrics import EvalReport
from .model import UFAFormer
from .training import Corpus, build_model, evaluate, saliency, train

ABLATIONS: dict[str, dict] = {
    "full": {},
    "no_frequency": {"use_frequency": False},
    "no_selection": {"use_selection": False},
}


def overfit_config(**overrides) -> RunConfig:
    """Toy profile for memorizing the 64-sample fixture.

    Full-batch steps keep the loss curve free of minibatch noise; a short warmup
    and gradient clipping avoid the early spike AdamW produces at lr 1e-3.
    """
    base = dict(steps=500, base_lr=1e-3, batch_size=64, augment=False, grad_clip=1.0, warmup_steps=50)
    base.update(overrides)
    return RunConfig(**base)


def window_means(values: list[float], width: int = 20) -> list[float]:
    """Means of consecutive non-overlapping windows; a trailing partial window is dropped."""
    return [sum(values[i:i + width]) / width for i in range(0, len(values) - width + 1, width)]


def is_monotone_decreasing(values: list[float]) -> bool:
    return all(b <= a for a, b in zip(values, values[1:]))


def box_mask(box, size: int) -> torch.Tensor:
    """Pixels whose centres fall inside a cxcywh box on a ``size x size`` grid."""
    cx, cy, w, h = (float(v) for v in box)
    c = (torch.arange(size, dtype=torch.float64) + 0.5) / size
    xs, ys = c[None, :], c[:, None]
    return (xs >= cx - w / 2) & (xs <= cx + w / 2) & (ys >= cy - h / 2) & (ys <= cy + h / 2)


@dataclass
class SaliencyScore:
    hits: int
    total: int
    ratios: list[float]

    @property
    def rate(self) -> float:
        return self.hits / self.total if self.total else float("nan")


def saliency_score(model: UFAFormer, corpus: Corpus, run: RunConfig) -> SaliencyScore:
    """Counts fake-face samples whose mean saliency inside the gt box beats the mean outside."""
    cfg = run.model
    hits, ratios = 0, []
    for rec, img in zip(corpus.records, corpus.images):
        if not rec.face_boxes:
            continue
        x, _ = preprocess(img, cfg.image_size)
        ids = torch.tensor(tokenize(rec.text, corpus.vocab, cfg.max_text_len).ids)
        sal = saliency(model, x, ids)
        inside = box_mask(rec.face_boxes[0], cfg.image_size)
        if inside.all() or not inside.any():
            continue
        a, b = float(sal[inside].mean()), float(sal[~inside].mean())
        hits += a > b
        ratios.append(a / b if b > 0 else float("inf"))
    return SaliencyScore(hits, len(ratios), ratios)


@dataclass
class RunResult:
    name: str
    report: EvalReport
    history: list[dict]
    seconds: float
    model: UFAFormer

    @property
    def final_loss(self) -> float:
        tail = self.history[-20:]
        return sum(h["total"] for h in tail) / len(tail)


def fit_and_evaluate(corpus: Corpus, run: RunConfig, name: str = "full") -> RunResult:
    t0 = time.perf_counter()
    model = build_model(run)
    history = train(model, corpus, run)
    report, _ = evaluate(model, corpus, run)
    return RunResult(name, report, history, time.perf_counter() - t0, model)


def ablate(corpus: Corpus, run: RunConfig, variants: dict[str, dict] | None = None) -> list[RunResult]:
    """Train and evaluate one model per variant, each overriding ``run.model`` flags."""
    out = []
    for name, flags in (variants or ABLATIONS).items():
        model_cfg = dataclasses.replace(run.model, **flags)
        out.append(fit_and_evaluate(corpus, dataclasses.replace(run, model=model_cfg), name))
    return out


def ablation_table(results: list[RunResult]) -> str:
    cols = ["auc", "acc", "map", "iou_m", "token_f1"]
    lines = [f"{'variant':<14}" + "".join(f"{c:>10}" for c in cols) + f"{'loss':>10}{'time_s':>9}"]
    for r in results:
        cells = "".join(f"{getattr(r.report, c):10.2f}" for c in cols)
        lines.append(f"{r.name:<14}{cells}{r.final_loss:10.4f}{r.seconds:9.1f}")
    return "\n".join(lines)


def ablation_csv(results: list[RunResult]) -> str:
    cols = EvalReport.columns()
    rows = [",".join(["variant", *cols, "final_loss"])]
    for r in results:
        rows.append(",".join([r.name, *(f"{v:.6f}" for v in r.report.values()), f"{r.final_loss:.6f}"]))
    return "\n".join(rows) + "\n"
