"""Manifests, PPM/PGM image I/O, preprocessing and the synthetic corpus."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import torch
import torch.nn.functional as F

from .backbones import Vocab, split_words
from .numerics import Rng


class ManifestError(ValueError):
    pass


class ImageFormatError(ValueError):
    pass


@dataclass
class ManifestRecord:
    id: str
    image_path: str
    text: str
    pair_fake: int
    fg_labels: list[bool]
    face_boxes: list[list[float]] = field(default_factory=list)
    fake_token_indices: list[int] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))


def _fail(lineno: int, name: str, why: str):
    raise ManifestError(f"line {lineno}: field '{name}': {why}")


def validate_record(obj: dict, lineno: int = 0, max_text_len: int | None = None) -> ManifestRecord:
    fields = ("id", "image_path", "text", "pair_fake", "fg_labels", "face_boxes", "fake_token_indices")
    for name in fields:
        if name not in obj:
            _fail(lineno, name, "missing")
    for name in ("id", "image_path", "text"):
        if not isinstance(obj[name], str):
            _fail(lineno, name, "must be a string")
    if obj["pair_fake"] not in (0, 1) or isinstance(obj["pair_fake"], float):
        _fail(lineno, "pair_fake", "must be 0 or 1")
    fg = obj["fg_labels"]
    if not (isinstance(fg, list) and len(fg) == 4 and all(isinstance(v, bool) for v in fg)):
        _fail(lineno, "fg_labels", "must be 4 booleans (FS, FA, TS, TA)")
    if any(fg) and obj["pair_fake"] != 1:
        _fail(lineno, "fg_labels", "manipulation type set on a pristine pair")
    boxes = obj["face_boxes"]
    if not isinstance(boxes, list):
        _fail(lineno, "face_boxes", "must be a list")
    for box in boxes:
        if not (isinstance(box, list) and len(box) == 4 and all(isinstance(v, (int, float)) for v in box)):
            _fail(lineno, "face_boxes", "each box must be 4 numbers (cx, cy, w, h)")
        cx, cy, w, h = box
        eps = 1e-9
        if w <= 0 or h <= 0 or cx - w / 2 < -eps or cy - h / 2 < -eps or cx + w / 2 > 1 + eps or cy + h / 2 > 1 + eps:
            _fail(lineno, "face_boxes", f"box {box} not inside the unit square")
    idx = obj["fake_token_indices"]
    if not (isinstance(idx, list) and all(isinstance(i, int) and not isinstance(i, bool) and i >= 0 for i in idx)):
        _fail(lineno, "fake_token_indices", "must be non-negative integers")
    if max_text_len is not None and any(i >= max_text_len - 1 for i in idx):
        _fail(lineno, "fake_token_indices", f"index beyond the {max_text_len - 1} content positions")
    return ManifestRecord(**{k: obj[k] for k in fields})


def load_manifest(path: str | Path, max_text_len: int | None = None) -> list[ManifestRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: invalid JSON: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise ManifestError(f"line {lineno}: expected a JSON object")
            records.append(validate_record(obj, lineno, max_text_len))
    return records


def save_manifest(records: Iterable[ManifestRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


# ---------------------------------------------------------------- PPM / PGM

_MAGIC = {b"P2": (1, False), b"P3": (3, False), b"P5": (1, True), b"P6": (3, True)}


def _header_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, i, n = [], 0, len(buf)
    while len(tokens) < count:
        while i < n and buf[i:i + 1].isspace():
            i += 1
        if i < n and buf[i:i + 1] == b"#":
            while i < n and buf[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not buf[i:i + 1].isspace() and buf[i:i + 1] != b"#":
            i += 1
        if start == i:
            raise ImageFormatError("truncated header")
        tokens.append(buf[start:i])
    return tokens, i


def decode_pnm(buf: bytes) -> torch.Tensor:
    """Decode P2/P3/P5/P6 bytes into a ``[3, H, W]`` float tensor in [0, 1]."""
    magic = buf[:2]
    if magic not in _MAGIC:
        raise ImageFormatError(f"unsupported magic number {magic!r}")
    channels, binary = _MAGIC[magic]
    tokens, pos = _header_tokens(buf[2:], 3)
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError:
        raise ImageFormatError("non-numeric header field") from None
    if maxval != 255:
        raise ImageFormatError(f"maxval {maxval} unsupported (need 255)")
    if w <= 0 or h <= 0:
        raise ImageFormatError("non-positive image extent")
    need = w * h * channels
    body = buf[2 + pos:]
    if binary:
        body = body[1:]  # single whitespace byte after maxval
        if len(body) < need:
            raise ImageFormatError(f"truncated payload: {len(body)} of {need} bytes")
        data = np.frombuffer(body[:need], dtype=np.uint8)
    else:
        try:
            data = np.array(body.split()[:need], dtype=np.int64)
        except ValueError:
            raise ImageFormatError("non-numeric sample in ASCII payload") from None
        if data.size < need:
            raise ImageFormatError(f"truncated payload: {data.size} of {need} samples")
        if (data < 0).any() or (data > 255).any():
            raise ImageFormatError("sample outside [0, maxval]")
    arr = data.reshape(h, w, channels).astype(np.float64) / 255.0
    img = torch.tensor(arr).permute(2, 0, 1)
    return img.expand(3, h, w).clone() if channels == 1 else img.contiguous()


def load_image(path: str | Path) -> torch.Tensor:
    return decode_pnm(Path(path).read_bytes())


def encode_pnm(image, ascii: bool = False) -> bytes:
    """Encode ``[3, H, W]`` (PPM) or ``[H, W]`` (PGM) values in [0, 1]."""
    arr = np.asarray(image.detach().cpu() if hasattr(image, "detach") else image, dtype=np.float64)
    q = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    if q.ndim == 3:
        h, w = q.shape[1:]
        q = q.transpose(1, 2, 0)
        magic = b"P3" if ascii else b"P6"
    else:
        h, w = q.shape
        magic = b"P2" if ascii else b"P5"
    header = magic + f"\n{w} {h}\n255\n".encode()
    if ascii:
        return header + " ".join(str(int(v)) for v in q.reshape(-1)).encode() + b"\n"
    return header + q.tobytes()


def save_image(image, path: str | Path, ascii: bool = False) -> None:
    Path(path).write_bytes(encode_pnm(image, ascii))


# ---------------------------------------------------------------- preprocessing

def resize_bilinear(image: torch.Tensor, size: int) -> torch.Tensor:
    """Half-pixel-centred bilinear resize of ``[C, H, W]`` to ``size x size``."""
    if image.shape[-2:] == (size, size):
        return image
    return F.interpolate(image[None], size=(size, size), mode="bilinear", align_corners=False)[0]


def flip_boxes(boxes: torch.Tensor) -> torch.Tensor:
    out = boxes.clone()
    out[..., 0] = 1.0 - out[..., 0]
    return out


def preprocess(image: torch.Tensor, size: int, augment: bool = False, rng: Rng | None = None,
               boxes: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Resize, then optionally flip (p=0.5, mirroring boxes) and scale brightness in [0.8, 1.2]."""
    image = resize_bilinear(image, size)
    boxes = torch.zeros(0, 4, dtype=image.dtype) if boxes is None else torch.as_tensor(boxes, dtype=image.dtype).reshape(-1, 4)
    if augment:
        rng = rng or Rng(0)
        if rng.random() < 0.5:
            image = image.flip(-1)
            boxes = flip_boxes(boxes)
        image = (image * rng.uniform(0.8, 1.2)).clamp(0.0, 1.0)
    return image, boxes


# ---------------------------------------------------------------- synthetic corpus

COMMON_WORDS = (
    "the a an man woman people leader crowd city minister speaks at on in with after before "
    "meeting today report visit president team players match wins loses new old government "
    "says during event press official local news election police market school health "
    "weather road bridge station"
).split()
SWAP_WORDS = ["zeph", "quor", "vantis", "mirel", "oskar"]
ATTRIBUTE_WORDS = ["furious", "ecstatic", "terrified", "gleeful", "livid"]


@dataclass
class SyntheticConfig:
    n_samples: int = 64
    image_size: int = 32
    vocab_size: int = 128
    fake_ratio: float = 0.5
    seed: int = 0
    min_words: int = 4
    max_words: int = 10


def synthetic_vocab() -> Vocab:
    return Vocab(["[PAD]", "[CLS]", "[UNK]"] + COMMON_WORDS + SWAP_WORDS + ATTRIBUTE_WORDS)


def _background(rng: Rng, s: int) -> np.ndarray:
    base = rng.uniform(0.30, 0.34)
    tint = rng.uniform(-0.015, 0.015, size=3)
    yy, xx = np.meshgrid((np.arange(s) + 0.5) / s - 0.5, (np.arange(s) + 0.5) / s - 0.5, indexing="ij")
    gx, gy = rng.uniform(-0.06, 0.06, size=2)
    phase = rng.uniform(0, 2 * math.pi)
    wave = 0.02 * np.sin(2 * math.pi * (xx + yy) + phase)
    field_ = base + gx * xx + gy * yy + wave
    return np.clip(field_[None] + tint[:, None, None], 0, 1)


def _paste_face(img: np.ndarray, rng: Rng, kind: str) -> list[float]:
    s = img.shape[-1]
    lo, hi = max(2, round(s * 10 / 32)), max(3, round(s * 16 / 32))
    w, h = (int(v) for v in rng.integers(lo, hi + 1, size=2))
    x0 = int(rng.integers(0, s - w + 1))
    y0 = int(rng.integers(0, s - h + 1))
    if kind == "FS":
        patch = np.full((h, w), 0.95)
    else:
        yy, xx = np.mgrid[0:h, 0:w]
        patch = np.where((yy + xx) % 2 == 0, 1.0, 0.7)
    img[:, y0:y0 + h, x0:x0 + w] = patch[None]
    return [(x0 + w / 2) / s, (y0 + h / 2) / s, w / s, h / s]


def synthesize_sample(cfg: SyntheticConfig, index: int) -> tuple[ManifestRecord, np.ndarray]:
    """One record plus its ``[3, S, S]`` image, from a per-index random stream."""
    rng = Rng(cfg.seed).child(index)
    fake = rng.random() < cfg.fake_ratio
    image_fake = text_fake = False
    if fake:
        kind = int(rng.integers(0, 3))
        image_fake, text_fake = kind in (0, 2), kind in (1, 2)
    img = _background(rng, cfg.image_size)
    fg = [False, False, False, False]
    boxes = []
    if image_fake:
        face = "FS" if rng.random() < 0.5 else "FA"
        fg[0 if face == "FS" else 1] = True
        boxes.append(_paste_face(img, rng, face))
    n_words = int(rng.integers(cfg.min_words, cfg.max_words + 1))
    words = [str(w) for w in rng.choice(COMMON_WORDS, size=n_words)]
    fake_idx: list[int] = []
    if text_fake:
        ttype = "TS" if rng.random() < 0.5 else "TA"
        fg[2 if ttype == "TS" else 3] = True
        pool = SWAP_WORDS if ttype == "TS" else ATTRIBUTE_WORDS
        n_fake = int(rng.integers(1, 3))
        fake_idx = sorted(int(i) for i in rng.choice(n_words, size=n_fake, replace=False))
        for i in fake_idx:
            words[i] = str(rng.choice(pool))
    rec = ManifestRecord(
        id=f"syn{index:05d}", image_path=f"images/syn{index:05d}.ppm", text=" ".join(words),
        pair_fake=int(image_fake or text_fake), fg_labels=fg, face_boxes=boxes, fake_token_indices=fake_idx,
    )
    return rec, img


def gen_synthetic(cfg: SyntheticConfig, out_dir: str | Path) -> list[ManifestRecord]:
    """Write ``manifest.jsonl``, ``vocab.txt`` and ``images/*.ppm`` under ``out_dir``."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    vocab = synthetic_vocab()
    if len(vocab) > cfg.vocab_size:
        raise ValueError(f"synthetic vocabulary needs {len(vocab)} ids, vocab_size is {cfg.vocab_size}")
    records = []
    for i in range(cfg.n_samples):
        rec, img = synthesize_sample(cfg, i)
        save_image(img, out / rec.image_path)
        records.append(rec)
    save_manifest(records, out / "manifest.jsonl")
    vocab.save(out / "vocab.txt")
    return records


def token_targets(rec: ManifestRecord, content_len: int) -> list[bool]:
    """Fake flags per content position (indices past the truncation point are dropped)."""
    flags = [False] * content_len
    n_words = min(len(split_words(rec.text)), content_len)
    for i in rec.fake_token_indices:
        if i < n_words:
            flags[i] = True
    return flags
