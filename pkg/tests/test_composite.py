import collections

import numpy as np
import pytest
import torch

from blindtta import composite
from blindtta.composite import (BlockTrace, CompositeScaleTransform, ScaleTransformParams,
                                apply_relative_scale, composite_transform, ordered_factor_pairs,
                                sample_augmentation, sample_block_grid, scale_and_restore)
from blindtta.rng import RngState


def rand_image(h=48, w=48, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(3, h, w, generator=g)


class TestParams:
    def test_json_round_trip(self):
        p = ScaleTransformParams(0.9, 1.7, 1.0, 6)
        assert ScaleTransformParams.from_json(p.to_json()) == p
        assert set(p.to_dict()) == {"p_r", "r", "p_aug", "m"}

    @pytest.mark.parametrize("kwargs", [
        {"p_r": -0.1}, {"p_r": 1.1}, {"r": 1.0}, {"r": 0.5},
        {"p_aug": 2.0}, {"m": 0},
    ])
    def test_invalid_rejected(self, kwargs):
        with pytest.raises(ValueError):
            ScaleTransformParams(**kwargs)


class TestRelativeScale:
    def test_downscale_pad_zero_count(self):
        # all-ones 224x224 at r'=0.5: content shrinks to 112x112, the rest is pad
        x = torch.ones(3, 224, 224)
        out = apply_relative_scale(x, 0.5, RngState(4))
        nonzero = int((out[0] > 0).sum())
        assert nonzero == 112 * 112
        assert int((out != 0).sum()) == 3 * 112 * 112

    def test_upscale_matches_some_subwindow(self):
        # exhaustive offset search on a structured image finds the cropped window
        h = w = 64
        x = torch.arange(h * w, dtype=torch.float32).reshape(1, h, w).expand(3, h, w) / (h * w)
        out = apply_relative_scale(x, 2.0, RngState(11))
        inner = 32
        matches = []
        for top in range(h - inner + 1):
            for left in range(w - inner + 1):
                patch = x[:, top:top + inner, left:left + inner]
                candidate = torch.nn.functional.interpolate(
                    patch.unsqueeze(0), size=(h, w), mode="bilinear",
                    align_corners=False).squeeze(0)
                if torch.allclose(candidate, out, atol=1e-7):
                    matches.append((top, left))
        assert len(matches) == 1

    def test_unit_scale_identity(self):
        x = rand_image()
        assert torch.equal(apply_relative_scale(x, 1.0, RngState(0)), x)

    def test_nonpositive_scale_rejected(self):
        with pytest.raises(ValueError):
            apply_relative_scale(rand_image(), 0.0, RngState(0))


class TestScaleAndRestore:
    def test_gate_off_is_identity(self):
        x = rand_image()
        assert torch.equal(scale_and_restore(x, 1.7, 0.0, RngState(5)), x)

    def test_dimensions_always_preserved(self):
        x = rand_image(40, 56)
        for seed in range(25):
            out = scale_and_restore(x, 1.7, 1.0, RngState(seed))
            assert out.shape == x.shape

    def test_r_not_above_one_rejected(self):
        with pytest.raises(ValueError):
            scale_and_restore(rand_image(), 1.0, 0.5, RngState(0))


class TestAugmentationPool:
    def test_disabled_is_identity(self):
        x = rand_image()
        assert torch.equal(sample_augmentation(x, 0.0, RngState(2)), x)

    def test_pool_frequencies(self):
        # 10k forced draws: each of the 5 members near 1/5
        counts = collections.Counter()
        x = rand_image(16, 16)
        for i in range(10_000):
            trace = BlockTrace()
            sample_augmentation(x, 1.0, RngState(0, (i,)), trace)
            choice = trace.aug_choice.split(":")[0]
            counts[choice] += 1
        for member in composite.AUG_POOL:
            assert counts[member] / 10_000 == pytest.approx(0.2, abs=0.02)

    def test_output_in_range(self):
        x = rand_image()
        for i in range(50):
            out = sample_augmentation(x, 1.0, RngState(1, (i,)))
            assert out.min() >= 0.0 and out.max() <= 1.0
            assert out.shape == x.shape


class TestBlockGrid:
    def test_m1_single_pair(self):
        assert sample_block_grid(1, RngState(0)) == (1, 1)

    def test_prime_m_two_pairs(self):
        assert ordered_factor_pairs(7) == [(1, 7), (7, 1)]
        seen = {sample_block_grid(7, RngState(0, (i,))) for i in range(200)}
        assert seen == {(1, 7), (7, 1)}

    def test_m6_uniform_over_ordered_pairs(self):
        pairs = ordered_factor_pairs(6)
        assert pairs == [(1, 6), (2, 3), (3, 2), (6, 1)]
        counts = collections.Counter(
            sample_block_grid(6, RngState(3, (i,))) for i in range(10_000))
        for pair in pairs:
            assert counts[pair] / 10_000 == pytest.approx(0.25, abs=0.03)

    def test_invalid_m(self):
        with pytest.raises(ValueError):
            sample_block_grid(0, RngState(0))


class TestCompositeTransform:
    def test_degenerate_params_identity(self):
        x = rand_image()
        params = ScaleTransformParams(p_r=0.0, r=1.7, p_aug=0.0, m=1)
        assert torch.equal(composite_transform(x, params, RngState(8)), x)

    def test_default_params_preserve_shape_and_range(self):
        x = rand_image(48, 48, seed=3)
        params = ScaleTransformParams(0.9, 1.7, 1.0, 6)
        for i in range(1000):
            out = composite_transform(x, params, RngState(0, (i,)))
            assert out.shape == x.shape
            assert out.min() >= 0.0 and out.max() <= 1.0

    def test_reproducible(self):
        x = rand_image()
        params = ScaleTransformParams(0.9, 1.7, 1.0, 6)
        a = composite_transform(x, params, RngState(123))
        b = composite_transform(x, params, RngState(123))
        assert torch.equal(a, b)

    def test_per_block_pad_accounting(self):
        # all-ones input, no aug: zero pixels come only from per-block padding
        x = torch.ones(3, 64, 64)
        params = ScaleTransformParams(p_r=1.0, r=1.7, p_aug=0.0, m=4)
        for i in range(20):
            trace = BlockTrace()
            out = composite_transform(x, params, RngState(2, (i,)), trace=trace)
            rows, cols = trace.row_cuts, trace.col_cuts
            expected_zeros = 0
            block_idx = 0
            for bi in range(trace.grid[0]):
                for bj in range(trace.grid[1]):
                    bh = rows[bi + 1] - rows[bi]
                    bw = cols[bj + 1] - cols[bj]
                    applied, r_prime, ih, iw = trace.blocks[block_idx]
                    if applied and r_prime < 1.0:
                        expected_zeros += bh * bw - ih * iw
                    block_idx += 1
            assert int((out[0] == 0).sum()) == expected_zeros

    def test_block_independence_without_aug(self):
        x = rand_image(48, 48, seed=13)
        params = ScaleTransformParams(p_r=1.0, r=1.7, p_aug=0.0, m=6)
        rng = RngState(77)
        trace = BlockTrace()
        out_a = composite_transform(x, params, rng, trace=trace)
        # perturb one pixel inside the first block
        rows, cols = trace.row_cuts, trace.col_cuts
        x2 = x.clone()
        x2[:, rows[0], cols[0]] = 1.0 - x2[:, rows[0], cols[0]]
        out_b = composite_transform(x2, params, rng)
        diff = (out_a != out_b).any(dim=0)
        outside = diff.clone()
        outside[rows[0]:rows[1], cols[0]:cols[1]] = False
        assert not outside.any()

    def test_too_many_blocks_rejected(self):
        x = rand_image(8, 8)
        params = ScaleTransformParams(0.9, 1.7, 0.0, 25)
        with pytest.raises(ValueError):
            # 5x5 grid needs blocks >= 2 px; keep drawing until (5, 5) comes up
            for i in range(200):
                composite_transform(x, params, RngState(0, (i,)))

    def test_batch_shared_draws_match_single(self):
        xs = torch.stack([rand_image(seed=1), rand_image(seed=2)])
        params = ScaleTransformParams(0.9, 1.7, 1.0, 3)
        tr = CompositeScaleTransform(params)
        out = tr(xs, RngState(5))
        # the same draw path applied to the stacked batch equals the batch op
        assert torch.equal(out, composite_transform(xs, params, RngState(5)))

    def test_per_image_draws_differ(self):
        xs = rand_image(seed=4).expand(2, 3, 48, 48).contiguous()
        tr = CompositeScaleTransform(ScaleTransformParams(1.0, 1.7, 0.0, 1),
                                     per_image=True)
        out = tr(xs, RngState(6))
        assert not torch.equal(out[0], out[1])

    def test_get_params(self):
        tr = CompositeScaleTransform(ScaleTransformParams(), per_image=True)
        params = tr.get_params()
        assert params["per_image"] is True
        assert params["m"] == 6
