import numpy as np
import pytest
import torch
import torch.nn.functional as F

from segsr.attention import PamConfig
from segsr.features import ExtractorConfig
from segsr.reconstruction import (
    BicubicBaseline,
    FuseViews,
    ReconstructionConfig,
    Refine,
    SEGSRNet,
    SubPixelUpsampler,
    pixel_shuffle,
    pixel_unshuffle,
    super_resolve,
)
from segsr.resize import upscale
from segsr.training import gradient_check, init_weights

TINY = ExtractorConfig(8, n_rdb=2, rdb_layers=2, rdb_growth=4, ca_reduction=4, aspp_rates=[1, 2])


def tiny_net(scale=2, seed=0):
    return init_weights(SEGSRNet(TINY, PamConfig(), ReconstructionConfig(scale=scale)), seed).double()


class TestFuseViews:
    def test_identity_on_own(self, rng):
        fuse = FuseViews(3).double()
        with torch.no_grad():
            w = torch.cat([torch.eye(3), torch.zeros(3, 3)], dim=1)
            fuse.conv.weight.copy_(w.view(3, 6, 1, 1))
            fuse.conv.bias.zero_()
        own = torch.from_numpy(rng.standard_normal((1, 3, 4, 5)))
        assert torch.equal(fuse(own, torch.randn_like(own)), own)

    def test_zero_weights_give_bias(self, rng):
        fuse = FuseViews(2).double()
        with torch.no_grad():
            fuse.conv.weight.zero_()
            fuse.conv.bias.copy_(torch.tensor([0.5, -1.0]))
        out = fuse(*(torch.from_numpy(rng.standard_normal((1, 2, 3, 3))) for _ in range(2)))
        assert torch.all(out[0, 0] == 0.5) and torch.all(out[0, 1] == -1.0)

    def test_matches_matrix_oracle(self, rng):
        fuse = init_weights(FuseViews(4).double(), 1)
        with torch.no_grad():
            fuse.conv.bias.normal_()
        own = rng.standard_normal((1, 4, 3, 5))
        cross = rng.standard_normal((1, 4, 3, 5))
        w = fuse.conv.weight.detach().numpy()[:, :, 0, 0]
        b = fuse.conv.bias.detach().numpy()
        expected = np.einsum("oc,bchw->bohw", w, np.concatenate([own, cross], 1)) + b[None, :, None, None]
        got = fuse(torch.from_numpy(own), torch.from_numpy(cross)).detach().numpy()
        np.testing.assert_allclose(got, expected, atol=1e-12)


class TestRefine:
    def test_zero_weights_give_zero(self):
        refine = Refine(8, n_rdb=2, growth=4, n_layers=2, reduction=4)
        with torch.no_grad():
            for p in refine.parameters():
                p.zero_()
        assert torch.count_nonzero(refine(torch.randn(1, 8, 5, 6))) == 0

    def test_shape(self):
        refine = Refine(16, n_rdb=3, growth=8, n_layers=2, reduction=4)
        assert refine(torch.randn(2, 16, 5, 7)).shape == (2, 16, 5, 7)

    def test_gradient(self):
        refine = init_weights(Refine(8, 2, 4, 2, 4).double(), 0)
        assert gradient_check(refine, (1, 8, 8, 12)).max_rel_error <= 1e-3


class TestPixelShuffle:
    def test_hand_case(self):
        x = torch.tensor([1.0, 2.0, 3.0, 4.0]).view(1, 4, 1, 1)
        assert pixel_shuffle(x, 2)[0, 0].tolist() == [[1.0, 2.0], [3.0, 4.0]]

    @pytest.mark.parametrize("scale", [2, 4])
    def test_matches_torch(self, scale):
        x = torch.randn(2, 3 * scale * scale, 4, 5)
        assert torch.equal(pixel_shuffle(x, scale), F.pixel_shuffle(x, scale))

    @pytest.mark.parametrize("scale", [2, 4])
    def test_round_trip(self, scale):
        g = torch.Generator().manual_seed(scale)
        for _ in range(20):
            x = torch.randn(1, 3 * scale * scale, 3, 4, generator=g)
            assert torch.equal(pixel_unshuffle(pixel_shuffle(x, scale), scale), x)

    def test_shape_and_errors(self):
        assert pixel_shuffle(torch.zeros(1, 48, 4, 6), 4).shape == (1, 3, 16, 24)
        with pytest.raises(ValueError):
            pixel_shuffle(torch.zeros(1, 5, 2, 2), 2)
        with pytest.raises(ValueError):
            pixel_unshuffle(torch.zeros(1, 3, 3, 4), 2)

    def test_upsampler_rejects_scale(self):
        with pytest.raises(ValueError):
            SubPixelUpsampler(8, 3)


class TestSEGSRNet:
    @pytest.mark.parametrize("scale", [2, 4])
    def test_super_resolve_shapes(self, scale):
        net = init_weights(SEGSRNet(recon=ReconstructionConfig(scale=scale)), 0)
        lr = torch.rand(3, 16, 24)
        sr_l, sr_r = super_resolve(lr, lr.clone(), net)
        assert sr_l.shape == sr_r.shape == (3, 16 * scale, 24 * scale)
        assert sr_l.min() >= 0 and sr_l.max() <= 1

    def test_zero_upsampler_reduces_to_bicubic(self, rng):
        net = tiny_net()
        with torch.no_grad():
            net.upsample.conv.weight.zero_()
            net.upsample.conv.bias.zero_()
        lr = torch.from_numpy(rng.random((1, 3, 6, 8)))
        sr_l, _ = net.eval()(lr, lr)
        torch.testing.assert_close(sr_l, upscale(lr, 2), atol=1e-12, rtol=0)

    def test_swap_equivariance(self, rng):
        net = tiny_net()
        for _ in range(3):
            a = torch.from_numpy(rng.random((3, 6, 8)))
            b = torch.from_numpy(rng.random((3, 6, 8)))
            sa_l, sa_r = super_resolve(a, b, net)
            sb_l, sb_r = super_resolve(b, a, net)
            assert torch.equal(sa_l, sb_r) and torch.equal(sa_r, sb_l)

    def test_training_mode_restored(self):
        net = tiny_net().train()
        super_resolve(torch.rand(3, 4, 4), torch.rand(3, 4, 4), net)
        assert net.training

    def test_view_mismatch(self):
        with pytest.raises(ValueError):
            tiny_net()(torch.zeros(1, 3, 4, 4, dtype=torch.float64), torch.zeros(1, 3, 4, 6, dtype=torch.float64))

    def test_bicubic_baseline(self, rng):
        lr = torch.from_numpy(rng.random((3, 4, 6)))
        up, _ = super_resolve(lr, lr, BicubicBaseline(4).double())
        torch.testing.assert_close(up, upscale(lr, 4).clamp(0, 1))

    def test_end_to_end_gradient(self):
        net = tiny_net().eval()
        right = torch.rand(1, 3, 8, 8, dtype=torch.float64)
        res = gradient_check(lambda x: net(x, right)[0], torch.rand(1, 3, 8, 8, dtype=torch.float64))
        assert res.passed
