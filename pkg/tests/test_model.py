import numpy as np
import pytest
import torch
from torch.utils.flop_counter import FlopCounterMode

from roijscc import geometry
from roijscc.errors import ConfigError, DomainError
from roijscc.geometry import GridSpec
from roijscc.model import ConvJSCC, ModelConfig, ROIBlock, ROIJSCC, build_model, parameter_count, stage_context
from roijscc.model.blocks import zero_output_projections
from roijscc.model.flops import block_macs, codec_macs, stage_routing

GRID = GridSpec(4, 4)


def ctx_for(gamma, h=32, w=32, window=4, split=True, dtype=torch.float32):
    return stage_context(np.array([gamma]), GRID, h, w, window, split, 3, dtype=dtype)


def heavy_features(gamma, h=32, w=32):
    labels = geometry.classify_regions(gamma, 4, 4).labels[None]
    return geometry.upsample_nearest(geometry.heavy_patches(labels, 3), GRID, h, w)[0]


def test_zero_projections_give_exact_identity():
    torch.manual_seed(0)
    blk = ROIBlock(16, 2, 4)
    zero_output_projections(blk)
    x = torch.randn(2, 32, 32, 16)
    for split in (True, False):
        y = blk(x, stage_context(np.array([[2, 2], [1, 4]]), GRID, 32, 32, 4, split, 3))
        assert (y - x).abs().max().item() == 0.0


def test_zero_mask_projection_adds_nothing():
    blk = ROIBlock(8, 2, 4)
    zero_output_projections(blk)
    assert torch.equal(blk.importance_feature(torch.zeros(1, 8, 8, 1)), torch.zeros(1, 8, 8, 8))


def test_importance_feature_block_constant():
    torch.manual_seed(0)
    blk = ROIBlock(8, 2, 4)
    torch.nn.init.normal_(blk.mask_proj.weight)
    feat = blk.importance_feature(ctx_for((2, 3)).mask)[0]
    blocks = feat.reshape(4, 8, 4, 8, 8)
    assert torch.equal(blocks, blocks[:, :1, :, :1].expand_as(blocks))


def test_importance_feature_rejects_bad_mask():
    with pytest.raises(DomainError):
        ROIBlock(8, 2, 4).importance_feature(torch.zeros(1, 8, 8, 2))


def test_block_preserves_shape_and_rejects_mismatched_mask():
    blk = ROIBlock(16, 2, 4)
    x = torch.randn(1, 32, 32, 16)
    assert blk(x, ctx_for((2, 2))).shape == x.shape
    with pytest.raises(DomainError):
        blk(x, ctx_for((2, 2), 16, 16))


@pytest.mark.parametrize("gamma", [(2, 2), (1, 1), (3, 4)])
def test_routing_locality_without_joint_tail(gamma):
    torch.manual_seed(1)
    blk = ROIBlock(16, 2, 4, joint_tail=False)
    torch.nn.init.normal_(blk.mask_proj.weight)
    ctx = ctx_for(gamma)
    heavy = torch.from_numpy(heavy_features(gamma))
    assert heavy.any() and (~heavy).any()
    x = torch.randn(1, 32, 32, 16)
    y = blk(x, ctx)
    for region in (heavy, ~heavy):
        bumped = x + 5.0 * torch.randn_like(x) * region[None, :, :, None]
        y2 = blk(bumped, ctx)
        # only positions on the perturbed path may move
        assert (y2 - y)[0][~region].abs().max().item() == 0.0
        assert (y2 - y)[0][region].abs().max().item() > 0.0


def test_block_gradient_finite_difference():
    torch.manual_seed(0)
    blk = ROIBlock(4, 1, 2, ffn_expansion=1.0).double()
    torch.nn.init.normal_(blk.mask_proj.weight)
    ctx = ctx_for((2, 2), 8, 8, window=2, dtype=torch.float64)
    x = torch.randn(1, 8, 8, 4, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda t: blk(t, ctx), (x,), eps=1e-6, atol=1e-7, rtol=1e-4)


def test_block_deterministic():
    torch.manual_seed(0)
    blk = ROIBlock(16, 2, 4)
    x = torch.randn(1, 32, 32, 16)
    assert torch.equal(blk(x, ctx_for((2, 3))), blk(x, ctx_for((2, 3))))


@pytest.mark.parametrize("size,channels,B", [(64, (16, 32), 256), (256, (8, 8, 16, 16), 256)])
def test_encode_shapes(size, channels, B):
    cfg = ModelConfig(channels=channels, blocks=(1,) * len(channels), c_m=8)
    model = ROIJSCC(cfg)
    with torch.no_grad():
        z = model.encode(torch.rand(1, 3, size, size), (2, 2))
        assert z.shape == (1, B, 8) and z.is_complex()
        assert model.decode(z, (2, 2)).shape == (1, 3, size, size)


def test_encode_rejects_bad_inputs():
    model = ROIJSCC(ModelConfig(channels=(8, 16), c_m=8))
    with pytest.raises(DomainError):
        model.encode(torch.rand(1, 3, 60, 64), (2, 2))
    with pytest.raises(DomainError):
        model.encode(torch.rand(1, 1, 64, 64), (2, 2))
    with pytest.raises(DomainError):
        model.encode(torch.rand(2, 3, 64, 64), np.array([[1, 1], [2, 2], [3, 3]]))
    with pytest.raises(DomainError):
        model.encode(torch.rand(1, 3, 64, 64), (5, 1))


def test_gamma_changes_code_when_mask_projection_is_nonzero():
    torch.manual_seed(0)
    model = ROIJSCC(ModelConfig(channels=(8, 16), c_m=8))
    for m in model.modules():
        if isinstance(m, ROIBlock):
            torch.nn.init.normal_(m.mask_proj.weight)
    x = torch.rand(1, 3, 64, 64)
    with torch.no_grad():
        assert not torch.allclose(model.encode(x, (2, 2)), model.encode(x, (3, 3)))


def test_decode_zero_features_is_valid_image():
    model = ROIJSCC(ModelConfig(channels=(8, 16), c_m=8))
    with torch.no_grad():
        out = model.decode(torch.zeros(2, 256, 8, dtype=torch.complex64), np.array([[2, 2], [1, 1]]))
    assert out.shape == (2, 3, 64, 64)
    assert torch.isfinite(out).all() and out.min() >= 0 and out.max() <= 1


def test_decode_row_mismatch():
    model = ROIJSCC(ModelConfig(channels=(8, 16), c_m=8))
    with pytest.raises(DomainError):
        model.decode(torch.zeros(1, 255, 8, dtype=torch.complex64), (2, 2))
    with pytest.raises(DomainError):
        model.decode(torch.zeros(1, 256, 8, dtype=torch.complex64), (2, 2), size=(128, 64))
    with pytest.raises(DomainError):
        model.decode(torch.zeros(1, 256, 4, dtype=torch.complex64), (2, 2))


def test_model_determinism():
    torch.manual_seed(3)
    model = ROIJSCC(ModelConfig(channels=(8, 16), c_m=8)).eval()
    x = torch.rand(2, 3, 64, 64)
    with torch.no_grad():
        assert torch.equal(model(x, (2, 3)), model(x, (2, 3)))


def test_conv_baseline_contract():
    cfg = ModelConfig(arch="conv", channels=(8, 16), c_m=8)
    model = build_model(cfg)
    assert isinstance(model, ConvJSCC)
    with torch.no_grad():
        z = model.encode(torch.rand(2, 3, 64, 64))
        assert z.shape == (2, 256, 8)
        assert model.decode(z, None, (64, 64)).shape == (2, 3, 64, 64)
    with pytest.raises(ConfigError):
        ROIJSCC(cfg)


def test_ablation_flags_keep_architecture_size():
    full = parameter_count(ROIJSCC(ModelConfig(channels=(8, 16))))
    no_mask = parameter_count(ROIJSCC(ModelConfig(channels=(8, 16), mask_injection=False)))
    no_split = parameter_count(ROIJSCC(ModelConfig(channels=(8, 16), split_processing=False)))
    assert no_mask < full and no_split < full


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(arch="mlp")
    with pytest.raises(ConfigError):
        ModelConfig(channels=(8, 16), blocks=(1,))


@pytest.mark.parametrize("split", [True, False])
@pytest.mark.parametrize("gamma", [(2, 2), (1, 1), (1, 3)])
def test_mac_counter_matches_traced_ops(gamma, split):
    blk = ROIBlock(16, 2, 4)
    with FlopCounterMode(display=False) as fc:
        blk(torch.randn(1, 32, 32, 16), ctx_for(gamma, split=split))
    traced = {str(k): v // 2 for k, v in fc.get_flop_counts()["Global"].items()}
    heavy = heavy_features(gamma)[::8, ::8] if split else None
    macs = block_macs(32, 32, 16, 4, GRID, heavy, mask_injection=True, ffn_expansion=2.0)
    assert macs["matmul"] == traced["aten.addmm"] + traced["aten.bmm"]
    assert macs["conv"] == traced["aten.convolution"]


@pytest.mark.parametrize("gamma", GRID.positions())
def test_routed_block_cheaper_than_all_heavy(gamma):
    cfg = ModelConfig(channels=(16, 32))
    routed = sum(codec_macs(cfg, 64, 64, gamma).values())
    dense = sum(codec_macs(ModelConfig(channels=(16, 32), split_processing=False), 64, 64, gamma).values())
    assert stage_routing(cfg, gamma) is not None and (~stage_routing(cfg, gamma)).any()
    assert routed < dense
