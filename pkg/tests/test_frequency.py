import pytest
import torch

from conftest import naive_attention
from ufaformer.config import ModelConfig
from ufaformer.frequency import (FrequencyEncoder, FrequencyLayer, inter_band_attention, inter_band_mask,
                                 intra_band_attention, intra_band_mask, standard_attention)
from ufaformer.numerics import AttentionParams, Rng, grad_check, multi_head_attention
from ufaformer.wavelet import SubBands, haar_dwt2d

F64 = torch.float64


def rand_params(dim, heads, seed):
    p = AttentionParams(dim, heads, Rng(seed), F64)
    with torch.no_grad():
        for lin in (p.q, p.k, p.v, p.out):
            lin.weight.mul_(20)
    return p


@pytest.mark.parametrize("seed", range(50))
def test_mask_equivalence(seed):
    g = torch.Generator().manual_seed(seed)
    heads = int(torch.randint(1, 4, (1,), generator=g))
    dim = heads * int(torch.randint(2, 5, (1,), generator=g))
    slots = int(torch.randint(1, 7, (1,), generator=g))
    p = rand_params(dim, heads, seed)
    x = torch.randn(4, slots, dim, generator=g, dtype=F64)
    flat = x.reshape(4 * slots, dim)

    intra = intra_band_attention(x, p).reshape(4 * slots, dim)
    assert (intra - naive_attention(flat, flat, flat, p, intra_band_mask(slots))).abs().max() <= 1e-6
    inter = inter_band_attention(x, p).reshape(4 * slots, dim)
    assert (inter - naive_attention(flat, flat, flat, p, inter_band_mask(slots))).abs().max() <= 1e-6


def test_masks_are_complementary_structures():
    a, b = intra_band_mask(3), inter_band_mask(3)
    assert a.sum() == 4 * 9 and b.sum() == 12 * 4
    assert (a & b).equal(torch.eye(12, dtype=torch.bool))


def test_degenerate_single_slot():
    p = rand_params(8, 2, 0)
    x = torch.randn(4, 1, 8, dtype=F64)
    assert torch.allclose(intra_band_attention(x, p), p.out(p.v(x)), atol=1e-12)


def test_identical_bands_give_identical_outputs():
    p = rand_params(8, 2, 1)
    band = torch.randn(1, 5, 8, dtype=F64)
    out = intra_band_attention(band.expand(4, 5, 8), p)
    for i in range(1, 4):
        assert torch.equal(out[i], out[0])


def test_inter_locality_and_symmetry():
    p = rand_params(8, 2, 2)
    x = torch.randn(4, 5, 8, dtype=F64)
    y = x.clone()
    y[2, 3] += 1.0
    a, b = inter_band_attention(x, p), inter_band_attention(y, p)
    keep = [s for s in range(5) if s != 3]
    assert torch.equal(a[:, keep], b[:, keep])
    assert not torch.equal(a[:, 3], b[:, 3])
    same = torch.randn(1, 5, 8, dtype=F64).expand(4, 5, 8)
    out = inter_band_attention(same, p)
    assert torch.allclose(out[torch.tensor([2, 0, 3, 1])], out, atol=1e-14)


def test_standard_attention_is_unmasked():
    p = rand_params(8, 2, 3)
    x = torch.randn(4, 3, 8, dtype=F64)
    flat = x.reshape(12, 8)
    assert torch.allclose(standard_attention(x, p).reshape(12, 8), multi_head_attention(flat, flat, flat, p))


def test_query_shapes_and_zero_bands():
    cfg = ModelConfig()
    enc = FrequencyEncoder(cfg, Rng(0), F64)
    bands = enc.bands_from_image(torch.rand(3, 32, 32, dtype=F64))
    assert bands.ll.shape == (16, 16)
    q = enc.init_queries(bands)
    assert q.content.shape == (4, 5, 32) and q.position.shape == (5, 32)
    assert torch.equal(q.content[:, 0], enc.band_embeddings)
    z = torch.zeros(16, 16, dtype=F64)
    qz = enc.init_queries(SubBands(z, z, z, z))
    assert torch.equal(qz.content[:, 1:], enc.proj.bias.expand(4, 4, 32))
    assert torch.equal(qz.merged[0, 1:], qz.merged[3, 1:])


def test_full_scale_patch_count():
    cfg = ModelConfig(dim=8, heads=2, image_size=256, patch_size=16, freq_depth=1)
    assert cfg.num_freq_patches == 64
    enc = FrequencyEncoder(cfg, Rng(0))
    q = enc.init_queries(haar_dwt2d(torch.rand(256, 256)))
    assert q.content.shape == (4, 65, 8)


def test_encoder_output_and_depth0():
    cfg = ModelConfig()
    enc = FrequencyEncoder(cfg, Rng(0), F64)
    bands = enc.bands_from_image(torch.rand(2, 3, 32, 32, dtype=F64))
    assert enc(bands).shape == (2, 4, 32)
    enc0 = FrequencyEncoder(ModelConfig(freq_depth=0), Rng(0), F64)
    assert torch.equal(enc0(bands), (enc0.band_embeddings + enc0.pos[0]).expand(2, 4, 32))


def test_intra_only_depth1_keeps_other_bands_isolated():
    cfg = ModelConfig(freq_depth=1, freq_attention="intra")
    enc = FrequencyEncoder(cfg, Rng(5), F64)
    bands = haar_dwt2d(torch.rand(32, 32, dtype=F64))
    base = enc(bands)
    hl = bands.hl.clone()
    hl[:8, :8] += 1.0
    moved = enc(SubBands(bands.ll, bands.lh, hl, bands.hh))
    assert not torch.allclose(moved[2], base[2])
    for i in (0, 1, 3):
        assert torch.equal(moved[i], base[i])
    full = FrequencyEncoder(ModelConfig(freq_depth=1), Rng(5), F64)
    assert not torch.allclose(full(SubBands(bands.ll, bands.lh, hl, bands.hh))[0], full(bands)[0])


def test_reachability_single_inter_stage():
    cfg = ModelConfig(freq_depth=1, freq_attention="inter")
    layer = FrequencyLayer(cfg, Rng(0), F64)
    x = torch.randn(4, 5, 32, dtype=F64, requires_grad=True)
    w = torch.randn(32, dtype=F64, generator=torch.Generator().manual_seed(0))
    (layer(x)[0, 1] * w).sum().backward()  # a plain sum of a LayerNorm output is constant
    reach = x.grad.abs().sum(-1) > 0
    assert reach[:, 1].all() and reach.sum() == 4


@pytest.mark.parametrize("mode", ["intra_inter", "intra", "inter", "standard"])
def test_frequency_grad_check(mode):
    cfg = ModelConfig(freq_depth=1, freq_attention=mode)
    enc = FrequencyEncoder(cfg, Rng(1), F64)
    bands = enc.bands_from_image(torch.rand(3, 32, 32, dtype=F64, generator=torch.Generator().manual_seed(0)))
    w = torch.randn(4, 32, dtype=F64, generator=torch.Generator().manual_seed(1))
    assert grad_check(lambda: (w * enc(bands)).sum(), list(enc.parameters()), samples_per_param=4) < 1e-4
