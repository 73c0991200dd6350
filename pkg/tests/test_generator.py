import pytest
import torch
import torch.nn as nn
import torch.nn.functional as F

from conftest import directional_gradient_check
from models.GeneratorNet import (
    RRDB, GeneratorNet, RRDBConfig, UpsampleX2, build_upsampler, clamp_for_export,
    count_parameters, rrdb_block, tiled_forward,
)
from utils.exceptions import ConfigurationError, UnsupportedScaleError

TINY = RRDBConfig(num_features=8, growth=4, num_blocks=1)


def _zerar(module: nn.Module) -> None:
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()


def _dense_manual(db, x: torch.Tensor) -> torch.Tensor:
    act = lambda t: F.leaky_relu(t, 0.2)
    x1 = act(F.conv2d(x, db.conv1.weight, db.conv1.bias, padding=1))
    x2 = act(F.conv2d(torch.cat((x, x1), 1), db.conv2.weight, db.conv2.bias, padding=1))
    x3 = act(F.conv2d(torch.cat((x, x1, x2), 1), db.conv3.weight, db.conv3.bias, padding=1))
    x4 = act(F.conv2d(torch.cat((x, x1, x2, x3), 1), db.conv4.weight, db.conv4.bias, padding=1))
    x5 = F.conv2d(torch.cat((x, x1, x2, x3, x4), 1), db.conv5.weight, db.conv5.bias, padding=1)
    return x + 0.2 * x5


def _walker(net: nn.Module) -> int:
    total = 0
    for m in net.modules():
        if isinstance(m, nn.Conv2d):
            kh, kw = m.kernel_size
            total += kh * kw * m.in_channels * m.out_channels + (m.out_channels if m.bias is not None else 0)
    return total


class TestForward:
    @pytest.mark.parametrize("h,w", [(1, 1), (7, 5), (24, 24), (48, 48)])
    def test_shape_contract(self, h, w):
        torch.manual_seed(0)
        net = GeneratorNet(TINY, scale=4, in_channels=3)
        out = net(torch.rand(1, 3, h, w))
        assert tuple(out.shape) == (1, 3, 4 * h, 4 * w)

    def test_single_channel_images(self):
        net = GeneratorNet(TINY, scale=2, in_channels=1)
        assert tuple(net(torch.rand(2, 1, 5, 6)).shape) == (2, 1, 10, 12)

    def test_feature_input_when_shallow_is_external(self):
        net = GeneratorNet(TINY, scale=4, in_channels=3, with_shallow=False)
        assert net.shallow is None
        assert tuple(net(torch.rand(1, 8, 6, 6)).shape) == (1, 3, 24, 24)

    def test_channel_mismatch(self):
        net = GeneratorNet(TINY, scale=4, in_channels=3)
        with pytest.raises(ConfigurationError):
            net(torch.rand(1, 4, 6, 6))
        externo = GeneratorNet(TINY, scale=4, in_channels=3, with_shallow=False)
        with pytest.raises(ConfigurationError):
            externo(torch.rand(1, 3, 6, 6))

    def test_repeated_forward_is_bit_identical(self):
        torch.manual_seed(1)
        net = GeneratorNet(TINY, scale=4)
        x = torch.rand(2, 3, 6, 6)
        assert torch.equal(net(x), net(x))

    def test_same_seed_builds_same_weights(self):
        torch.manual_seed(3)
        a = GeneratorNet(TINY, scale=4)
        torch.manual_seed(3)
        b = GeneratorNet(TINY, scale=4)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_zero_trunk_leaves_global_residual(self):
        torch.manual_seed(2)
        net = GeneratorNet(TINY, scale=4)
        _zerar(net.trunk)
        _zerar(net.trunk_conv)
        x = torch.rand(1, 3, 5, 5)
        esperado = net.head(net.upsampler(net.shallow(x)))
        assert torch.equal(net(x), esperado)

    def test_export_clamp(self):
        sr = torch.tensor([-0.5, 0.3, 1.7])
        assert torch.equal(clamp_for_export(sr), torch.tensor([0.0, 0.3, 1.0]))

    def test_gradients_match_finite_differences(self):
        def caso(sorteio):
            torch.manual_seed(100 + sorteio)
            net = GeneratorNet(TINY, scale=4).double()
            x = torch.rand(1, 3, 4, 4, dtype=torch.float64)
            alvo = torch.rand(1, 3, 16, 16, dtype=torch.float64)
            return list(net.parameters()), lambda: ((net(x) - alvo) ** 2).mean()

        directional_gradient_check(caso, draws=20)


class TestRRDB:
    def test_zero_inner_convs_is_identity(self):
        block = RRDB(RRDBConfig(num_features=16, growth=8))
        _zerar(block)
        x = torch.randn(1, 16, 4, 4)
        assert torch.equal(block(x), x)

    def test_zero_residual_scale_is_identity(self):
        torch.manual_seed(0)
        block = RRDB(RRDBConfig(num_features=16, growth=8))
        block.residual_scale = 0.0
        x = torch.randn(1, 16, 4, 4)
        assert torch.equal(block(x), x)

    def test_matches_hand_composition(self):
        torch.manual_seed(5)
        block = RRDB(RRDBConfig())
        for m in block.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.normal_(m.weight, std=0.02)
                nn.init.normal_(m.bias, std=0.02)
        x = torch.randn(1, 64, 4, 4)
        cadeia = _dense_manual(block.db3, _dense_manual(block.db2, _dense_manual(block.db1, x)))
        esperado = x + 0.2 * (cadeia - x)
        torch.testing.assert_close(block(x), esperado, rtol=1e-5, atol=1e-6)

    def test_shape_preserved_and_channels_checked(self):
        block = RRDB(TINY)
        assert tuple(rrdb_block(torch.rand(2, 8, 3, 5), block).shape) == (2, 8, 3, 5)
        with pytest.raises(ConfigurationError):
            rrdb_block(torch.rand(1, 4, 3, 3), block)


class TestUpsample:
    def test_constant_map_stays_constant_before_conv(self):
        x = torch.full((1, 4, 3, 3), 0.7)
        assert torch.equal(UpsampleX2.enlarge(x), torch.full((1, 4, 6, 6), 0.7))

    def test_shape_law(self):
        stage = UpsampleX2(8)
        assert tuple(stage(torch.rand(1, 8, 5, 7)).shape) == (1, 8, 10, 14)

    def test_impulse_becomes_two_by_two_block(self):
        x = torch.zeros(1, 1, 5, 7)
        x[0, 0, 2, 3] = 1.0
        out = UpsampleX2.enlarge(x)[0, 0]
        esperado = torch.zeros(10, 14)
        esperado[4:6, 6:8] = 1.0
        assert torch.equal(out, esperado)

    def test_scale_four_is_two_stages(self):
        assert len(build_upsampler(4, 8)) == 2
        assert len(build_upsampler(8, 8)) == 3

    @pytest.mark.parametrize("scale", [1, 3, 6])
    def test_non_power_of_two_is_rejected(self, scale):
        with pytest.raises(UnsupportedScaleError):
            build_upsampler(scale, 8)
        with pytest.raises(UnsupportedScaleError):
            GeneratorNet(TINY, scale=scale)


class TestCountParameters:
    def test_single_conv_closed_form(self):
        assert count_parameters(nn.Conv2d(3, 64, 3, 1, 1)) == 1792

    def test_empty_trunk_is_additive(self):
        net = GeneratorNet(RRDBConfig.model_construct(num_features=8, growth=4, num_blocks=0,
                                                      residual_scale=0.2), scale=4)
        partes = (net.shallow, net.trunk_conv, net.upsampler, net.head)
        assert count_parameters(net) == sum(count_parameters(m) for m in partes)

    def test_default_net_matches_layer_walk(self):
        net = GeneratorNet(RRDBConfig(), scale=4)
        assert count_parameters(net) == _walker(net) == 16_697_987

    def test_shared_parameters_counted_once(self):
        conv = nn.Conv2d(3, 8, 3)
        assert count_parameters([conv, nn.Sequential(conv)]) == count_parameters(conv)

    def test_frozen_parameters_are_excluded(self):
        conv = nn.Conv2d(3, 8, 3)
        conv.bias.requires_grad_(False)
        assert count_parameters(conv) == 3 * 8 * 9


class TestTiledForward:
    def test_tiled_matches_untiled_within_one_level(self):
        torch.manual_seed(0)
        net = GeneratorNet(TINY, scale=4).eval()
        lr = torch.rand(1, 3, 64, 64)
        with torch.no_grad():
            inteiro = clamp_for_export(net(lr))
        blocos = clamp_for_export(tiled_forward(net, lr, scale=4, tile=32, overlap=16))
        assert blocos.shape == inteiro.shape
        assert float((blocos - inteiro).abs().max()) <= 1.0 / 255.0

    def test_small_input_skips_tiling(self):
        torch.manual_seed(0)
        net = GeneratorNet(TINY, scale=4).eval()
        lr = torch.rand(1, 3, 10, 10)
        with torch.no_grad():
            assert torch.equal(tiled_forward(net, lr, 4, tile=32), net(lr))

    def test_rectangular_input_covers_every_pixel(self):
        net = nn.Upsample(scale_factor=2, mode="nearest")
        lr = torch.rand(1, 3, 40, 23)
        out = tiled_forward(net, lr, scale=2, tile=16, overlap=8)
        torch.testing.assert_close(out, net(lr))

    def test_overlap_must_be_smaller_than_tile(self):
        net = nn.Upsample(scale_factor=2)
        with pytest.raises(ConfigurationError):
            tiled_forward(net, torch.rand(1, 3, 40, 40), scale=2, tile=16, overlap=16)
