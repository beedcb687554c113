"""Flat checkpoint container.

Layout (all integers little-endian)::

    b"UFACKPT1" | u64 header length | UTF-8 JSON header | payload

The header maps each tensor name to ``{"shape", "dtype", "offset", "nbytes"}``
with offsets relative to the payload start, plus a free-form ``meta`` object.
Tensor bytes are stored little-endian, row-major.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"UFACKPT1"
_DTYPES = {"f32": "<f4", "f64": "<f8", "i64": "<i8", "bool": "|b1"}
_TORCH = {torch.float32: "f32", torch.float64: "f64", torch.int64: "i64", torch.bool: "bool"}


class CheckpointError(ValueError):
    pass


def save_tensors(tensors: dict[str, torch.Tensor], path: str | Path, meta: dict | None = None) -> None:
    entries, chunks, offset = {}, [], 0
    for name in sorted(tensors):
        t = tensors[name].detach().cpu()
        if t.dtype not in _TORCH:
            raise CheckpointError(f"unsupported dtype {t.dtype} for {name}")
        code = _TORCH[t.dtype]
        raw = np.ascontiguousarray(t.numpy().astype(_DTYPES[code])).tobytes()
        entries[name] = {"shape": list(t.shape), "dtype": code, "offset": offset, "nbytes": len(raw)}
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in chunks:
            fh.write(raw)


def load_tensors(path: str | Path) -> tuple[dict[str, torch.Tensor], dict]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(buf) < 16:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<Q", buf[8:16])
    try:
        header = json.loads(buf[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(f"{path}: unreadable header") from None
    payload = memoryview(buf)[16 + hlen:]
    out = {}
    for name, e in header["tensors"].items():
        end = e["offset"] + e["nbytes"]
        if end > len(payload):
            raise CheckpointError(f"{path}: tensor {name} runs past the end of the file")
        arr = np.frombuffer(payload[e["offset"]:end], dtype=_DTYPES[e["dtype"]]).reshape(e["shape"])
        out[name] = torch.from_numpy(arr.astype(arr.dtype.newbyteorder("=")))
    return out, header.get("meta", {})


def save_model(model: torch.nn.Module, path: str | Path, meta: dict | None = None) -> None:
    save_tensors(dict(model.state_dict()), path, meta)


def load_model(model: torch.nn.Module, path: str | Path) -> dict:
    """Load parameters into ``model`` (cast to its dtype); returns the stored meta."""
    tensors, meta = load_tensors(path)
    state = model.state_dict()
    missing = set(state) - set(tensors)
    extra = set(tensors) - set(state)
    if missing or extra:
        raise CheckpointError(f"parameter mismatch: missing {sorted(missing)[:3]}, unexpected {sorted(extra)[:3]}")
    for name, t in tensors.items():
        if tuple(t.shape) != tuple(state[name].shape):
            raise CheckpointError(f"shape mismatch for {name}: {tuple(t.shape)} vs {tuple(state[name].shape)}")
    model.load_state_dict({k: v.to(state[k].dtype) for k, v in tensors.items()})
    return meta
