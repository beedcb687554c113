"""Tensor primitives, attention/FFN blocks, seeded init and a gradient checker.

Tensors are ``torch.Tensor``; autograd supplies the analytic gradients and
:func:`grad_check` compares them against central differences.
"""
from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
import torch
from torch import nn

DTYPES = {"f32": torch.float32, "f64": torch.float64}


class DimensionError(ValueError):
    pass


class DegenerateMaskError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def dtype_for(precision: str) -> torch.dtype:
    try:
        return DTYPES[precision]
    except KeyError:
        raise ValueError(f"precision must be one of {sorted(DTYPES)}, got {precision!r}") from None


class Rng:
    """Counter-based (Philox) random stream.

    ``child(key)`` derives an independent stream from the seed and an integer
    key, so per-sample streams do not depend on iteration order.
    """

    def __init__(self, seed: int, key: Sequence[int] = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.key = tuple(int(k) for k in key)
        ss = np.random.SeedSequence([self.seed, *self.key])
        self.gen = np.random.Generator(np.random.Philox(ss))

    def child(self, *key: int) -> "Rng":
        return Rng(self.seed, self.key + tuple(key))

    def normal(self, size, std: float = 1.0) -> np.ndarray:
        return self.gen.normal(0.0, std, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def random(self) -> float:
        return float(self.gen.random())

    def choice(self, seq, size=None, replace=True):
        return self.gen.choice(seq, size=size, replace=replace)


def truncated_normal(rng: Rng, shape, std: float = 0.02, bound: float = 2.0) -> np.ndarray:
    """Normal draws resampled until they fall within ``bound`` standard deviations."""
    out = rng.normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out * std


def init_params(rng: Rng, shape, scheme: str = "trunc_normal", dtype=torch.float32) -> torch.Tensor:
    shape = tuple(int(s) for s in shape)
    if scheme == "trunc_normal":
        data = truncated_normal(rng, shape)
    elif scheme == "zeros":
        data = np.zeros(shape)
    elif scheme == "ones":
        data = np.ones(shape)
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return torch.tensor(data, dtype=dtype)


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {tuple(a.shape)} x {tuple(b.shape)}")
    return a @ b


def softmax(x: torch.Tensor, axis: int = -1) -> torch.Tensor:
    shifted = x - x.amax(dim=axis, keepdim=True)
    e = shifted.exp()
    return e / e.sum(dim=axis, keepdim=True)


def layer_norm(x: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    if x.shape[-1] != gamma.shape[-1]:
        raise DimensionError(f"layer_norm width {x.shape[-1]} != {gamma.shape[-1]}")
    mu = x.mean(dim=-1, keepdim=True)
    var = ((x - mu) ** 2).mean(dim=-1, keepdim=True)
    return (x - mu) / torch.sqrt(var + eps) * gamma + beta


def gelu(x: torch.Tensor) -> torch.Tensor:
    return 0.5 * x * (1.0 + torch.erf(x / math.sqrt(2.0)))


ACTIVATIONS: dict[str, Callable[[torch.Tensor], torch.Tensor]] = {
    "gelu": gelu,
    "relu": torch.relu,
}


class Linear(nn.Module):
    def __init__(self, d_in: int, d_out: int, rng: Rng, dtype=torch.float32, scheme: str = "trunc_normal"):
        super().__init__()
        self.weight = nn.Parameter(init_params(rng, (d_in, d_out), scheme, dtype))
        self.bias = nn.Parameter(init_params(rng, (d_out,), "zeros", dtype))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return matmul(x, self.weight) + self.bias


class LayerNorm(nn.Module):
    def __init__(self, dim: int, dtype=torch.float32, eps: float = 1e-5):
        super().__init__()
        self.gamma = nn.Parameter(torch.ones(dim, dtype=dtype))
        self.beta = nn.Parameter(torch.zeros(dim, dtype=dtype))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)


class AttentionParams(nn.Module):
    """Query/key/value/output projections of one multi-head attention.

    Head ``i`` uses columns ``i*d_head:(i+1)*d_head`` of each projection.
    """

    def __init__(self, dim: int, heads: int, rng: Rng, dtype=torch.float32):
        super().__init__()
        if dim % heads:
            raise DimensionError(f"dim {dim} not divisible by {heads} heads")
        self.dim, self.heads = dim, heads
        self.q = Linear(dim, dim, rng.child(0), dtype)
        self.k = Linear(dim, dim, rng.child(1), dtype)
        self.v = Linear(dim, dim, rng.child(2), dtype)
        self.out = Linear(dim, dim, rng.child(3), dtype)

    def forward(self, q, k, v, mask=None):
        return multi_head_attention(q, k, v, self, mask)


def attention_logits(q, k, params: AttentionParams) -> torch.Tensor:
    """Per-head scaled logits, shape ``[..., h, nq, nk]``."""
    h, dh = params.heads, params.dim // params.heads
    qh = params.q(q).unflatten(-1, (h, dh)).transpose(-3, -2)
    kh = params.k(k).unflatten(-1, (h, dh)).transpose(-3, -2)
    return qh @ kh.transpose(-2, -1) / math.sqrt(dh)


def attention_weights(q, k, params: AttentionParams, mask=None) -> torch.Tensor:
    logits = attention_logits(q, k, params)
    if mask is not None:
        mask = torch.as_tensor(mask, dtype=torch.bool)
        if not mask.any(dim=-1).all():
            raise DegenerateMaskError("attention mask forbids every key for some query")
        logits = logits.masked_fill(~mask.unsqueeze(-3), float("-inf"))
    return softmax(logits, -1)


def multi_head_attention(q, k, v, params: AttentionParams, mask=None) -> torch.Tensor:
    """Scaled dot-product attention over leading batch dims.

    ``mask`` is boolean, True where a key may be attended, broadcastable to
    ``[..., nq, nk]``.
    """
    for name, t in (("Q", q), ("K", k), ("V", v)):
        if t.shape[-1] != params.dim:
            raise DimensionError(f"{name} width {t.shape[-1]} != {params.dim}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError("K and V row counts differ")
    h, dh = params.heads, params.dim // params.heads
    w = attention_weights(q, k, params, mask)
    vh = params.v(v).unflatten(-1, (h, dh)).transpose(-3, -2)
    out = (w @ vh).transpose(-3, -2).flatten(-2)
    return params.out(out)


class FeedForward(nn.Module):
    def __init__(self, dim: int, rng: Rng, dtype=torch.float32, ratio: int = 4, activation: str = "gelu",
                 d_out: int | None = None, scheme: str = "trunc_normal"):
        super().__init__()
        self.fc1 = Linear(dim, ratio * dim, rng.child(0), dtype, scheme)
        self.fc2 = Linear(ratio * dim, d_out or dim, rng.child(1), dtype, scheme)
        self.act = ACTIVATIONS[activation]

    def forward(self, x):
        return ffn(x, self)


def ffn(x: torch.Tensor, params: FeedForward) -> torch.Tensor:
    return params.fc2(params.act(params.fc1(x)))


def check_finite(t: torch.Tensor, what: str = "tensor") -> torch.Tensor:
    if not torch.isfinite(t).all():
        raise NonFiniteError(f"non-finite values in {what}")
    return t


def grad_check(loss_fn: Callable[[], torch.Tensor], params: Iterable[torch.Tensor], eps: float = 1e-5,
               samples_per_param: int = 8, rng: Rng | None = None,
               analytic: Sequence[torch.Tensor] | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    Error per coordinate is ``|analytic - numeric| / max(1, |numeric|)``,
    evaluated on up to ``samples_per_param`` random coordinates of each
    parameter. ``analytic`` overrides autograd (used to test the checker).
    """
    params = [p for p in params]
    rng = rng or Rng(0)
    loss = loss_fn()
    check_finite(loss.detach(), "loss")
    if analytic is None:
        analytic = torch.autograd.grad(loss, params, allow_unused=True)
        analytic = [torch.zeros_like(p) if g is None else g for p, g in zip(params, analytic)]
    worst = 0.0
    with torch.no_grad():
        for i, (p, g) in enumerate(zip(params, analytic)):
            flat, gflat = p.view(-1), g.reshape(-1)
            n = flat.numel()
            idx = range(n) if n <= samples_per_param else rng.child(i).choice(n, samples_per_param, replace=False)
            for j in idx:
                j = int(j)
                orig = flat[j].item()
                flat[j] = orig + eps
                up = loss_fn().item()
                flat[j] = orig - eps
                down = loss_fn().item()
                flat[j] = orig
                if not (math.isfinite(up) and math.isfinite(down)):
                    raise NonFiniteError("loss became non-finite during finite differencing")
                num = (up - down) / (2 * eps)
                err = abs(gflat[j].item() - num) / max(1.0, abs(num))
                worst = max(worst, err)
    return worst
