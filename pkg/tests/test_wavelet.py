import numpy as np
import pytest
import torch

from ufaformer.numerics import DimensionError
from ufaformer.wavelet import SubBands, haar_dwt2d, haar_idwt2d, rgb_to_luma

F64 = torch.float64
R2 = np.sqrt(2.0)


def separable_haar(x: np.ndarray):
    """Rows then columns with the 1-D orthonormal pair lo=(x0+x1)/sqrt2, hi=(x1-x0)/sqrt2."""
    lo_h = (x[:, 0::2] + x[:, 1::2]) / R2
    hi_h = (x[:, 1::2] - x[:, 0::2]) / R2

    def cols(y):
        return (y[0::2] + y[1::2]) / R2, (y[1::2] - y[0::2]) / R2

    ll, lh = cols(lo_h)
    hl, hh = cols(hi_h)
    return ll, lh, hl, hh


def test_constant_image():
    b = haar_dwt2d(torch.full((4, 6), 0.7, dtype=F64))
    assert torch.allclose(b.ll, torch.full((2, 3), 1.4, dtype=F64))
    for t in (b.lh, b.hl, b.hh):
        assert torch.equal(t, torch.zeros(2, 3, dtype=F64))


def test_single_block():
    b = haar_dwt2d(torch.tensor([[1.0, 2.0], [3.0, 4.0]], dtype=F64))
    assert (b.ll.item(), b.hl.item(), b.lh.item(), b.hh.item()) == (5.0, 1.0, 2.0, 0.0)
    oracle = separable_haar(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert np.allclose([o.item() for o in oracle], [5.0, 2.0, 1.0, 0.0])


def test_checkerboard():
    i, j = torch.meshgrid(torch.arange(8), torch.arange(8), indexing="ij")
    x = torch.where((i + j) % 2 == 0, 1.0, -1.0).to(F64)
    b = haar_dwt2d(x)
    assert torch.equal(b.ll, torch.zeros(4, 4, dtype=F64))
    assert torch.equal(b.lh, b.ll) and torch.equal(b.hl, b.ll)
    assert torch.equal(b.hh.abs(), torch.full((4, 4), 2.0, dtype=F64))


@pytest.mark.parametrize("seed", range(100))
def test_separable_oracle(seed):
    x = np.random.default_rng(seed).random((8, 8))
    b = haar_dwt2d(torch.tensor(x))
    for got, want in zip((b.ll, b.lh, b.hl, b.hh), separable_haar(x)):
        assert np.abs(got.numpy() - want).max() <= 1e-10


def test_odd_extent_raises():
    with pytest.raises(DimensionError):
        haar_dwt2d(torch.zeros(5, 4))
    with pytest.raises(DimensionError):
        haar_dwt2d(torch.zeros(4, 3))


def test_round_trip_and_energy():
    g = torch.Generator().manual_seed(0)
    for dtype, tol in ((torch.float32, 1e-6), (F64, 1e-12)):
        x = torch.rand(10, 64, 64, generator=g, dtype=dtype)
        b = haar_dwt2d(x)
        assert (haar_idwt2d(b) - x).abs().max() <= tol
        e = (x ** 2).sum()
        assert abs(b.energy() - e) / e <= 1e-6


def test_linearity():
    g = torch.Generator().manual_seed(1)
    x, y = torch.rand(16, 16, generator=g, dtype=F64), torch.rand(16, 16, generator=g, dtype=F64)
    lhs = haar_dwt2d(2.5 * x - 0.75 * y).stack()
    rhs = 2.5 * haar_dwt2d(x).stack() - 0.75 * haar_dwt2d(y).stack()
    assert (lhs - rhs).abs().max() <= 1e-6


def test_inverse_edge_cases():
    z = torch.zeros(3, 3, dtype=F64)
    assert torch.equal(haar_idwt2d(SubBands(z, z, z, z)), torch.zeros(6, 6, dtype=F64))
    ll = torch.tensor([[2.0, 4.0]], dtype=F64)
    z = torch.zeros(1, 2, dtype=F64)
    out = haar_idwt2d(SubBands(ll, z, z, z))
    assert torch.equal(out, torch.tensor([[1.0, 1, 2, 2], [1, 1, 2, 2]], dtype=F64))
    with pytest.raises(DimensionError):
        haar_idwt2d(SubBands(ll, z, z, torch.zeros(2, 2, dtype=F64)))


def test_stack_order_and_shapes():
    b = haar_dwt2d(torch.rand(2, 3, 8, 12))
    assert b.source_height == 8 and b.source_width == 12
    s = b.stack()
    assert s.shape == (2, 3, 4, 4, 6)
    assert torch.equal(s[..., 1, :, :], b.lh) and torch.equal(s[..., 2, :, :], b.hl)


def test_luma():
    assert abs(rgb_to_luma(torch.ones(3, 2, 2))[0, 0].item() - 1.0) < 1e-6
    green = torch.zeros(3, 1, 1)
    green[1] = 1
    assert abs(rgb_to_luma(green).item() - 0.587) < 1e-7
    gray = torch.full((3, 2, 2), 0.42, dtype=F64)
    assert torch.allclose(rgb_to_luma(gray), torch.full((2, 2), 0.42, dtype=F64))
    with pytest.raises(DimensionError):
        rgb_to_luma(torch.zeros(4, 2, 2))


def test_dwt_is_differentiable():
    x = torch.rand(4, 4, dtype=F64, requires_grad=True)
    haar_dwt2d(x).hh.sum().backward()
    assert x.grad is not None and torch.allclose(x.grad.abs(), torch.full((4, 4), 0.5, dtype=F64))
