"""Single-level orthonormal 2-D Haar transform.

For each 2x2 block ``[a b; c d]``::

    LL = ( a + b + c + d) / 2
    HL = (-a + b - c + d) / 2    horizontal detail
    LH = (-a - b + c + d) / 2    vertical detail
    HH = ( a - b - c + d) / 2

The first letter names the filter along the horizontal axis. Every op works
on torch tensors and is differentiable; leading batch dims are allowed.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .numerics import DimensionError

LUMA = (0.299, 0.587, 0.114)


@dataclass
class SubBands:
    ll: torch.Tensor
    lh: torch.Tensor
    hl: torch.Tensor
    hh: torch.Tensor

    @property
    def source_height(self) -> int:
        return 2 * self.ll.shape[-2]

    @property
    def source_width(self) -> int:
        return 2 * self.ll.shape[-1]

    def stack(self) -> torch.Tensor:
        """Bands stacked on a new axis in (LL, LH, HL, HH) order: ``[..., 4, H/2, W/2]``."""
        return torch.stack([self.ll, self.lh, self.hl, self.hh], dim=-3)

    def energy(self) -> torch.Tensor:
        return sum((b ** 2).sum() for b in (self.ll, self.lh, self.hl, self.hh))


def haar_dwt2d(image: torch.Tensor) -> SubBands:
    h, w = image.shape[-2:]
    if h % 2 or w % 2:
        raise DimensionError(f"Haar DWT needs even extents, got {h}x{w}")
    a = image[..., 0::2, 0::2]
    b = image[..., 0::2, 1::2]
    c = image[..., 1::2, 0::2]
    d = image[..., 1::2, 1::2]
    return SubBands(
        ll=(a + b + c + d) / 2,
        lh=(-a - b + c + d) / 2,
        hl=(-a + b - c + d) / 2,
        hh=(a - b - c + d) / 2,
    )


def haar_idwt2d(bands: SubBands) -> torch.Tensor:
    shape = bands.ll.shape
    if any(t.shape != shape for t in (bands.lh, bands.hl, bands.hh)):
        raise DimensionError("sub-band shapes differ")
    ll, lh, hl, hh = bands.ll, bands.lh, bands.hl, bands.hh
    a = (ll - lh - hl + hh) / 2
    b = (ll - lh + hl - hh) / 2
    c = (ll + lh - hl - hh) / 2
    d = (ll + lh + hl + hh) / 2
    out = ll.new_empty(*shape[:-2], 2 * shape[-2], 2 * shape[-1])
    out[..., 0::2, 0::2] = a
    out[..., 0::2, 1::2] = b
    out[..., 1::2, 0::2] = c
    out[..., 1::2, 1::2] = d
    return out


def rgb_to_luma(image: torch.Tensor) -> torch.Tensor:
    if image.shape[-3] != 3:
        raise DimensionError(f"expected 3 channels, got {image.shape[-3]}")
    r, g, b = image[..., 0, :, :], image[..., 1, :, :], image[..., 2, :, :]
    return LUMA[0] * r + LUMA[1] * g + LUMA[2] * b
