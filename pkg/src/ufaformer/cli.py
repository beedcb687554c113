"""Command-line entry point.

Every failure prints one JSON line ``{"error": ..., "message": ...}`` to stderr
and exits nonzero.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import torch

from . import selftest
from .backbones import Vocab, tokenize
from .checkpoint import load_model, save_model
from .config import RunConfig
from .data import SyntheticConfig, encode_pnm, gen_synthetic, load_image, preprocess
from .experiments import ablate, ablation_csv, ablation_table
from .training import Corpus, build_model, evaluate, saliency, train, write_eval

EXIT_ERROR = 1
EXIT_USAGE = 2


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        _fail("UsageError", message, EXIT_USAGE)


def _fail(kind: str, message: str, code: int = EXIT_ERROR):
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    sys.exit(code)


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed {v} outside u64 range")
    return v


def _run_config(args) -> RunConfig:
    run = RunConfig.load(args.config)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.precision is not None:
        over["precision"] = args.precision
    if getattr(args, "steps", None) is not None:
        over["steps"] = args.steps
    return dataclasses.replace(run, **over) if over else run


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_checkpoint(path: str, precision: str | None):
    """Rebuild the model and vocabulary stored in a checkpoint's meta."""
    from .checkpoint import load_tensors

    _, meta = load_tensors(path)
    if "run" not in meta:
        raise CliError(f"{path}: checkpoint carries no run config")
    run = RunConfig.from_dict(meta["run"])
    if precision:
        run = dataclasses.replace(run, precision=precision)
    model = build_model(run)
    load_model(model, path)
    vocab = Vocab(meta["vocab"]) if meta.get("vocab") else None
    return model, run, vocab


def cmd_gen_fixtures(args) -> None:
    out = _out_dir(args, "fixtures")
    cfg = SyntheticConfig(n_samples=args.n, image_size=args.image_size,
                          fake_ratio=args.fake_ratio, seed=args.seed or 0)
    records = gen_synthetic(cfg, out)
    print(json.dumps({"out": str(out), "samples": len(records)}))


def cmd_train(args) -> None:
    run = _run_config(args)
    corpus = Corpus.load(args.data, max_text_len=run.model.max_text_len)
    out = _out_dir(args, "run")
    model = build_model(run)
    with open(out / "loss.csv", "w", newline="") as fh:
        writer = None

        def log_step(step: int, terms: dict) -> None:
            nonlocal writer
            if writer is None:
                writer = csv.DictWriter(fh, ["step", *terms], lineterminator="\n")
                writer.writeheader()
            writer.writerow({"step": step, **{k: f"{v:.8g}" for k, v in terms.items()}})

        history = train(model, corpus, run, log_step)
    run.save(out / "config.json")
    save_model(model, out / "model.ckpt", {"run": run.to_dict(), "vocab": corpus.vocab.tokens})
    print(json.dumps({"out": str(out), "steps": len(history), "final_loss": history[-1]["total"]}))


def cmd_eval(args) -> None:
    model, run, vocab = _load_checkpoint(args.checkpoint, args.precision)
    corpus = Corpus.load(args.data, max_text_len=run.model.max_text_len)
    if vocab is not None:
        corpus.vocab = vocab
    report, rows = evaluate(model, corpus, run)
    out = _out_dir(args, "eval")
    write_eval(report, rows, out)
    print(report.table())


def _sample(args, run: RunConfig, vocab: Vocab | None):
    if vocab is None:
        raise CliError("checkpoint carries no vocabulary")
    image, _ = preprocess(load_image(args.image), run.model.image_size)
    ids = torch.tensor(tokenize(args.text, vocab, run.model.max_text_len).ids)
    return image, ids


def cmd_infer(args) -> None:
    model, run, vocab = _load_checkpoint(args.checkpoint, args.precision)
    image, ids = _sample(args, run, vocab)
    model.eval()
    with torch.no_grad():
        p = model(image[None], ids[None])
    n = int(p.token_valid[0].sum())
    print(json.dumps({
        "binary_score": float(torch.sigmoid(p.binary_logit[0])),
        "fg_scores": torch.sigmoid(p.fg_logits[0]).tolist(),
        "box": p.best_boxes()[0].tolist(),
        "box_conf": float(p.box_conf[0].max()),
        "token_scores": torch.sigmoid(p.token_logits[0, :n]).tolist(),
    }))


def cmd_saliency(args) -> None:
    model, run, vocab = _load_checkpoint(args.checkpoint, args.precision)
    image, ids = _sample(args, run, vocab)
    sal = saliency(model, image, ids)
    out = Path(args.out or "saliency.pgm")
    if out.suffix.lower() != ".pgm":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "saliency.pgm"
    out.write_bytes(encode_pnm(sal / 255.0))
    print(json.dumps({"out": str(out), "shape": list(sal.shape)}))


def cmd_selftest(args) -> None:
    if not selftest.run():
        sys.exit(EXIT_ERROR)


def cmd_ablate(args) -> None:
    run = _run_config(args)
    corpus = Corpus.load(args.data, max_text_len=run.model.max_text_len)
    out = _out_dir(args, "ablation")
    results = ablate(corpus, run)
    table = ablation_table(results)
    (out / "ablation.txt").write_text(table + "\n")
    (out / "ablation.csv").write_text(ablation_csv(results))
    print(table)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (an empty file gives the toy profile)")
    common.add_argument("--seed", type=_u64)
    common.add_argument("--precision", choices=["f32", "f64"])
    common.add_argument("--out", help="output directory (a .pgm path for saliency)")

    p = _Parser(prog="ufaformer", description="Detect and ground image-text manipulation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-fixtures", parents=[common], help="write a synthetic corpus")
    g.add_argument("--n", type=int, default=64)
    g.add_argument("--image-size", type=int, default=32)
    g.add_argument("--fake-ratio", type=float, default=0.5)
    g.set_defaults(func=cmd_gen_fixtures)

    t = sub.add_parser("train", parents=[common], help="train and write model.ckpt")
    t.add_argument("--data", required=True, help="directory holding manifest.jsonl and vocab.txt")
    t.add_argument("--steps", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a manifest")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.set_defaults(func=cmd_eval)

    for name, func, text in (("infer", cmd_infer, "predict one image-text pair"),
                             ("saliency", cmd_saliency, "write a gradient-norm map as PGM")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--checkpoint", required=True)
        s.add_argument("--image", required=True)
        s.add_argument("--text", required=True)
        s.set_defaults(func=func)

    st = sub.add_parser("selftest", parents=[common], help="run the built-in oracle checks")
    st.set_defaults(func=cmd_selftest)

    a = sub.add_parser("ablate", parents=[common], help="train full / no-frequency / no-selection variants")
    a.add_argument("--data", required=True)
    a.add_argument("--steps", type=int)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    torch.set_num_threads(1)
    try:
        args.func(args)
    except SystemExit:
        raise
    except Exception as exc:  # every error becomes one JSON line
        _fail(type(exc).__name__, str(exc).replace("\n", " "))
    return 0


if __name__ == "__main__":
    sys.exit(main())
