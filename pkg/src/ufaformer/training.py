"""Corpus loading, batching, the training loop, evaluation and saliency maps."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import torch

from .backbones import Vocab, tokenize
from .config import RunConfig
from .data import ManifestRecord, load_image, load_manifest, preprocess, token_targets
from .heads import GroundTruth, Predictions, total_loss
from .metrics import EvalReport, build_report
from .model import UFAFormer
from .numerics import NonFiniteError, Rng, dtype_for

log = logging.getLogger(__name__)


class Corpus:
    """Records, decoded images and the vocabulary of one manifest directory."""

    def __init__(self, records: list[ManifestRecord], images: list[torch.Tensor], vocab: Vocab):
        if not records:
            raise ValueError("empty manifest")
        self.records, self.images, self.vocab = records, images, vocab

    def __len__(self) -> int:
        return len(self.records)

    @classmethod
    def load(cls, root: str | Path, manifest: str | Path | None = None, vocab: str | Path | None = None,
             max_text_len: int | None = None) -> "Corpus":
        root = Path(root)
        mpath = Path(manifest) if manifest else root / "manifest.jsonl"
        records = load_manifest(mpath, max_text_len)
        base = mpath.parent
        images = [load_image(base / r.image_path) for r in records]
        return cls(records, images, Vocab.load(vocab or base / "vocab.txt"))


@dataclass
class Batch:
    images: torch.Tensor
    ids: torch.Tensor
    gt: GroundTruth
    indices: list[int]


def make_batch(corpus: Corpus, indices: list[int], run: RunConfig, augment: bool = False,
               rng: Rng | None = None) -> Batch:
    cfg = run.model
    dtype = dtype_for(run.precision)
    imgs, ids, boxes, tokens = [], [], [], []
    for i in indices:
        rec = corpus.records[i]
        sample_rng = rng.child(i) if rng is not None else None
        img, bx = preprocess(corpus.images[i], cfg.image_size, augment, sample_rng,
                             torch.tensor(rec.face_boxes, dtype=torch.float64).reshape(-1, 4))
        imgs.append(img.to(dtype))
        boxes.append(bx.to(dtype))
        ids.append(tokenize(rec.text, corpus.vocab, cfg.max_text_len).ids)
        tokens.append(token_targets(rec, cfg.text_len))
    recs = [corpus.records[i] for i in indices]
    gt = GroundTruth(
        pair_fake=torch.tensor([r.pair_fake for r in recs], dtype=dtype),
        fg_labels=torch.tensor([[float(v) for v in r.fg_labels] for r in recs], dtype=dtype),
        face_boxes=boxes,
        token_fake=torch.tensor(tokens, dtype=torch.bool),
    )
    return Batch(torch.stack(imgs), torch.tensor(ids, dtype=torch.long), gt, list(indices))


def build_model(run: RunConfig) -> UFAFormer:
    return UFAFormer(run.model, seed=run.seed, dtype=dtype_for(run.precision))


def make_optimizer(model: torch.nn.Module, run: RunConfig) -> torch.optim.Optimizer:
    return torch.optim.AdamW(model.parameters(), lr=run.base_lr, betas=(0.9, 0.999), eps=1e-8,
                             weight_decay=run.weight_decay)


def cosine_lr(base_lr: float, step: int, total: int, warmup: int = 0) -> float:
    """Cosine decay from ``base_lr`` to 0 over ``total`` steps, after an optional linear warmup."""
    if step < warmup:
        return base_lr * (step + 1) / warmup
    span = total - warmup
    if span <= 1:
        return base_lr
    return 0.5 * base_lr * (1 + math.cos(math.pi * min(step - warmup, span) / span))


def total_steps(run: RunConfig, n: int) -> int:
    return run.steps if run.steps is not None else run.epochs * math.ceil(n / run.batch_size)


def train_step(model: UFAFormer, batch: Batch, opt: torch.optim.Optimizer, run: RunConfig,
               lr: float | None = None) -> dict[str, float]:
    """One AdamW update on ``batch``; returns the loss breakdown."""
    model.train()
    if lr is not None:
        for group in opt.param_groups:
            group["lr"] = lr
    preds = model(batch.images, batch.ids)
    loss, terms = total_loss(preds, batch.gt, cfg=run.model)
    if not torch.isfinite(loss):
        bad = [k for k, v in terms.items() if not torch.isfinite(v)]
        raise NonFiniteError(f"non-finite total loss (terms: {bad or 'weighted sum'})")
    opt.zero_grad(set_to_none=True)
    loss.backward()
    if run.grad_clip:
        torch.nn.utils.clip_grad_norm_(model.parameters(), run.grad_clip)
    opt.step()
    out = {k: float(v.detach()) for k, v in terms.items()}
    out["total"] = float(loss.detach())
    return out


def batch_order(n: int, batch_size: int, rng: Rng) -> list[list[int]]:
    perm = [int(i) for i in rng.gen.permutation(n)]
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def train(model: UFAFormer, corpus: Corpus, run: RunConfig,
          callback: Callable[[int, dict[str, float]], None] | None = None) -> list[dict[str, float]]:
    """Train for ``total_steps`` updates under a cosine schedule; returns per-step losses."""
    opt = make_optimizer(model, run)
    steps = total_steps(run, len(corpus))
    root = Rng(run.seed).child(7)
    history: list[dict[str, float]] = []
    epoch, queue = 0, []
    for step in range(steps):
        if not queue:
            queue = batch_order(len(corpus), run.batch_size, root.child(0, epoch))
            epoch += 1
        idx = queue.pop(0)
        batch = make_batch(corpus, idx, run, run.augment, root.child(1, step))
        lr = cosine_lr(run.base_lr, step, steps, run.warmup_steps) if run.schedule == "cosine" else run.base_lr
        terms = train_step(model, batch, opt, run, lr)
        terms["lr"] = lr
        history.append(terms)
        if callback:
            callback(step, terms)
        if step % 50 == 0 or step == steps - 1:
            log.info("step %d/%d loss %.4f", step + 1, steps, terms["total"])
    return history


@torch.no_grad()
def predict(model: UFAFormer, corpus: Corpus, run: RunConfig, batch_size: int = 64) -> list[dict]:
    """Deterministic per-sample predictions (probabilities, best box)."""
    model.eval()
    rows = []
    for start in range(0, len(corpus), batch_size):
        idx = list(range(start, min(start + batch_size, len(corpus))))
        batch = make_batch(corpus, idx, run)
        p: Predictions = model(batch.images, batch.ids)
        best = p.best_boxes()
        conf = p.box_conf.max(-1).values
        for j, i in enumerate(idx):
            rows.append({
                "id": corpus.records[i].id,
                "binary_score": float(torch.sigmoid(p.binary_logit[j])),
                "fg_scores": torch.sigmoid(p.fg_logits[j]).tolist(),
                "box": best[j].tolist(),
                "box_conf": float(conf[j]),
                "token_scores": torch.sigmoid(p.token_logits[j]).tolist(),
                "token_valid": p.token_valid[j].tolist(),
            })
    return rows


def evaluate(model: UFAFormer, corpus: Corpus, run: RunConfig) -> tuple[EvalReport, list[dict]]:
    rows = predict(model, corpus, run)
    L = run.model.text_len
    recs = corpus.records
    report = build_report(
        binary_scores=[r["binary_score"] for r in rows],
        binary_labels=[rec.pair_fake for rec in recs],
        fg_scores=[r["fg_scores"] for r in rows],
        fg_labels=[rec.fg_labels for rec in recs],
        pred_boxes=[r["box"] for r in rows],
        gt_boxes=[rec.face_boxes for rec in recs],
        token_pred=[[s >= 0.5 for s in r["token_scores"]] for r in rows],
        token_gt=[token_targets(rec, L) for rec in recs],
        token_valid=[r["token_valid"] for r in rows],
    )
    return report, rows


def write_eval(report: EvalReport, rows: list[dict], out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report.to_csv())
    (out / "report.txt").write_text(report.table() + "\n")
    with open(out / "predictions.jsonl", "w") as fh:
        for r in rows:
            valid = r["token_valid"]
            n = sum(valid)
            fh.write(json.dumps({
                "id": r["id"], "binary_score": r["binary_score"], "fg_scores": r["fg_scores"],
                "box": r["box"], "box_conf": r["box_conf"], "token_scores": r["token_scores"][:n],
            }) + "\n")


def saliency(model: UFAFormer, image: torch.Tensor, ids: torch.Tensor) -> torch.Tensor:
    """Per-pixel L2 norm (over channels) of d(binary logit)/d(pixel), min-max scaled to [0, 255].

    ``image`` is ``[3, S, S]`` and ``ids`` ``[T]``. A constant map scales to all zeros.
    """
    model.eval()
    x = image.detach().to(model.dtype).unsqueeze(0).requires_grad_(True)
    logit = model(x, ids.unsqueeze(0)).binary_logit.sum()
    (grad,) = torch.autograd.grad(logit, x)
    norm = grad[0].pow(2).sum(0).sqrt()
    lo, hi = norm.min(), norm.max()
    if hi - lo <= 0:
        return torch.zeros_like(norm)
    return (norm - lo) / (hi - lo) * 255.0
