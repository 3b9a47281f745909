import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from segsr.attention import (
    CrossViewAttention,
    PamConfig,
    PamInputs,
    compute_attention,
    mean_subtract,
    occlusion_fill,
    valid_mask,
    warp,
)
from segsr.features import FeatureHierarchy
from segsr.training import gradient_check, init_weights


def hier(f):
    return FeatureHierarchy([f], f)


def shift_map(w, d):
    """Row-stochastic map reading source column j - d (clamped) for target column j."""
    m = torch.zeros(w, w, dtype=torch.float64)
    for i in range(w):
        m[i, max(i - d, 0)] = 1.0
    return m


class TestMeanSubtract:
    def test_constant_row_vanishes(self):
        assert torch.count_nonzero(mean_subtract(torch.full((1, 2, 3, 5), 4.0))) == 0

    def test_hand_row(self):
        f = torch.tensor([1.0, 2.0, 6.0]).view(1, 1, 1, 3)
        assert mean_subtract(f).flatten().tolist() == pytest.approx([-2.0, -1.0, 3.0])

    def test_row_offset_invariance(self, rng):
        f = torch.from_numpy(rng.standard_normal((1, 3, 4, 6)))
        offset = torch.from_numpy(rng.standard_normal((1, 3, 4, 1)))
        torch.testing.assert_close(mean_subtract(f + offset), mean_subtract(f), atol=1e-12, rtol=0)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), w=st.integers(1, 9))
    def test_idempotent_and_zero_mean(self, seed, w):
        g = torch.Generator().manual_seed(seed)
        f = torch.randn(1, 2, 3, w, generator=g, dtype=torch.float64)
        once = mean_subtract(f)
        assert once.mean(dim=-1).abs().max() <= 1e-12
        torch.testing.assert_close(mean_subtract(once), once, atol=1e-12, rtol=0)


class TestPamInputs:
    def test_shapes_and_zero_row_mean(self):
        inputs = init_weights(PamInputs(9), 0).double()
        f_l = torch.randn(2, 9, 4, 6, dtype=torch.float64)
        f_u, f_v = inputs(f_l, torch.randn_like(f_l))
        assert f_u.shape == f_v.shape == (2, 9, 4, 6)
        assert f_u.mean(dim=-1).abs().max() <= 1e-12


class TestComputeAttention:
    def test_single_column_is_one(self):
        f = torch.randn(1, 4, 3, 1)
        maps = compute_attention(f, torch.randn_like(f))
        assert torch.all(maps.m_r_to_l == 1.0) and torch.all(maps.m_l_to_r == 1.0)

    def test_rows_are_stochastic(self, rng):
        f_u = torch.from_numpy(rng.standard_normal((2, 5, 3, 7)))
        f_v = torch.from_numpy(rng.standard_normal((2, 5, 3, 7)))
        maps = compute_attention(f_u, f_v)
        for m in (maps.m_r_to_l, maps.m_l_to_r):
            assert m.shape == (2, 3, 7, 7)
            assert torch.all(m >= 0)
            torch.testing.assert_close(m.sum(-1), torch.ones(2, 3, 7, dtype=torch.float64))

    def test_hand_two_columns(self):
        f_u = torch.tensor([1.0, -1.0], dtype=torch.float64).view(1, 1, 1, 2)
        f_v = torch.tensor([2.0, -2.0], dtype=torch.float64).view(1, 1, 1, 2)
        # scores u_i v_j: [[2, -2], [-2, 2]]
        p, q = 1 / (1 + math.exp(-4)), 1 / (1 + math.exp(4))
        expected = torch.tensor([[p, q], [q, p]], dtype=torch.float64)
        maps = compute_attention(f_u, f_v)
        torch.testing.assert_close(maps.m_r_to_l[0, 0], expected, atol=1e-12, rtol=0)
        torch.testing.assert_close(maps.m_l_to_r[0, 0], expected, atol=1e-12, rtol=0)

    def test_temperature_flattens(self):
        f_u = torch.tensor([1.0, -1.0]).view(1, 1, 1, 2)
        f_v = torch.tensor([2.0, -2.0]).view(1, 1, 1, 2)
        sharp = compute_attention(f_u, f_v, PamConfig(softmax_temperature=1.0)).m_r_to_l
        soft = compute_attention(f_u, f_v, PamConfig(softmax_temperature=100.0)).m_r_to_l
        assert soft[0, 0, 0, 0] < sharp[0, 0, 0, 0]

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            compute_attention(torch.zeros(1, 2, 3, 4), torch.zeros(1, 2, 3, 5))

    @pytest.mark.parametrize("kw", [dict(softmax_temperature=0), dict(valid_threshold=0), dict(valid_threshold=1)])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            PamConfig(**kw)


class TestWarp:
    def test_identity(self, rng):
        f = torch.from_numpy(rng.standard_normal((1, 3, 2, 5)))
        m = torch.eye(5, dtype=torch.float64).expand(1, 2, 5, 5)
        assert torch.equal(warp(m, f), f)

    def test_shift(self, rng):
        f = torch.from_numpy(rng.standard_normal((1, 3, 2, 6)))
        m = shift_map(6, 2).expand(1, 2, 6, 6)
        out = warp(m, f)
        assert torch.equal(out[..., 2:], f[..., :4])

    def test_uniform_map_gives_row_mean(self, rng):
        f = torch.from_numpy(rng.standard_normal((1, 3, 2, 4)))
        m = torch.full((1, 2, 4, 4), 0.25, dtype=torch.float64)
        torch.testing.assert_close(warp(m, f), f.mean(-1, keepdim=True).expand_as(f))


class TestValidMask:
    def test_identity_map_fully_valid(self):
        m = torch.eye(5).expand(1, 3, 5, 5)
        assert torch.all(valid_mask(m) == 1.0)

    def test_unreferenced_columns_are_invalid(self):
        # every target reads column 0, so columns 1.. receive nothing
        m = torch.zeros(1, 1, 4, 4)
        m[..., 0] = 1.0
        v = valid_mask(m)[0, 0]
        assert v.tolist() == [1.0, 0.0, 0.0, 0.0]

    def test_ramp(self):
        m = torch.full((1, 1, 1, 4), 0.25)
        # each column receives 0.25 of one row; 0.25 / 0.5 = 0.5
        assert valid_mask(m, threshold=0.5).flatten().tolist() == [0.5] * 4

    def test_range(self, rng):
        m = torch.softmax(torch.from_numpy(rng.standard_normal((2, 3, 6, 6))), dim=-1)
        v = valid_mask(m)
        assert v.min() >= 0 and v.max() <= 1


class TestOcclusionFill:
    def test_endpoints_and_midpoint(self, rng):
        fw = torch.from_numpy(rng.standard_normal((1, 2, 3, 4)))
        ft = torch.from_numpy(rng.standard_normal((1, 2, 3, 4)))
        ones = torch.ones(1, 3, 4, dtype=torch.float64)
        assert torch.equal(occlusion_fill(fw, ft, ones), fw)
        assert torch.equal(occlusion_fill(fw, ft, 0 * ones), ft)
        torch.testing.assert_close(occlusion_fill(fw, ft, 0.5 * ones), (fw + ft) / 2)


class TestCrossViewAttention:
    def _module(self, channels=8):
        return init_weights(CrossViewAttention(channels), 0).double().eval()

    def test_swap_equivariance(self, rng):
        pam = self._module()
        f_l = torch.from_numpy(rng.standard_normal((1, 8, 4, 6)))
        f_r = torch.from_numpy(rng.standard_normal((1, 8, 4, 6)))
        out_l, out_r, maps, masks = pam(hier(f_l), hier(f_r), return_maps=True)
        s_l, s_r, s_maps, s_masks = pam(hier(f_r), hier(f_l), return_maps=True)
        assert torch.equal(s_l, out_r) and torch.equal(s_r, out_l)
        assert torch.equal(s_maps.m_r_to_l, maps.m_l_to_r)
        assert torch.equal(s_masks.v_l, masks.v_r)

    def test_identical_views(self, rng):
        pam = self._module()
        f = torch.from_numpy(rng.standard_normal((1, 8, 4, 6)))
        out_l, out_r, maps, _ = pam(hier(f), hier(f.clone()), return_maps=True)
        assert torch.equal(maps.m_r_to_l, maps.m_l_to_r)
        assert torch.equal(out_l, out_r)

    def test_output_shapes(self):
        pam = self._module(16)
        f = torch.randn(2, 16, 5, 7, dtype=torch.float64)
        out_l, out_r = pam(hier(f), hier(torch.randn_like(f)))
        assert out_l.shape == out_r.shape == f.shape

    def test_gradient(self):
        pam = self._module()
        f_r = torch.randn(1, 8, 4, 6, dtype=torch.float64)
        res = gradient_check(lambda x: pam(hier(x), hier(f_r))[0], (1, 8, 4, 6))
        assert res.max_rel_error <= 1e-3
