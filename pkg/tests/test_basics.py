import json
import math

import numpy as np
import pytest
import torch

from blindtta import basics
from blindtta.rng import RngState


def rand_image(h=32, w=32, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(3, h, w, generator=g)


class TestIntensityGrid:
    def test_hundred_points_equally_spaced(self):
        grid = basics.intensity_grid(100)
        values = np.array(list(grid))
        assert values[0] == 0.0 and values[-1] == 1.0
        steps = np.diff(values)
        assert np.allclose(steps, 1.0 / 99.0, atol=1e-12)

    def test_two_points(self):
        assert list(basics.intensity_grid(2)) == [0.0, 1.0]

    def test_single_point(self):
        assert list(basics.intensity_grid(1)) == [0.0]

    def test_zero_count_rejected(self):
        with pytest.raises(ValueError):
            basics.intensity_grid(0)


class TestTwoAxisGrid:
    def test_points_in_unit_square(self):
        pts = basics.two_axis_grid(100, RngState(3))
        assert len(pts) == 100
        arr = np.array(pts)
        assert arr.min() >= 0.0 and arr.max() <= 1.0

    def test_deterministic_per_seed(self):
        a = basics.two_axis_grid(50, RngState(3))
        b = basics.two_axis_grid(50, RngState(3))
        c = basics.two_axis_grid(50, RngState(4))
        assert a == b
        assert a != c


class TestEnumerateVariants:
    def test_scaling_full_intensity_sizes(self):
        variants = basics.enumerate_variants("scaling", 1.0)
        factors = sorted(v.params["factor"] for v in variants)
        assert factors == pytest.approx([0.4, 2.5])
        x = rand_image(100, 100)
        sizes = sorted(tuple(basics.apply_variant(v, x).shape[-2:]) for v in variants)
        assert sizes == [(40, 40), (250, 250)]

    def test_rotation_half_intensity(self):
        variants = basics.enumerate_variants("rotation", 0.5)
        assert sorted(v.params["angle"] for v in variants) == [-90.0, 90.0]

    def test_brightness_zero_intensity_is_unit_factor(self):
        variants = basics.enumerate_variants("brightness", 0.0)
        assert [v.params["factor"] for v in variants] == [1.0, 1.0]

    @pytest.mark.parametrize("kind", basics.TWO_AXIS_KINDS)
    def test_two_axis_requires_pair(self, kind):
        with pytest.raises(ValueError):
            basics.enumerate_variants(kind, 0.5)

    @pytest.mark.parametrize("kind", basics.KINDS)
    def test_variant_counts_across_grid(self, kind):
        for s in basics.intensity_grid(11):
            pair = (0.2, 0.7) if kind in basics.TWO_AXIS_KINDS else None
            variants = basics.enumerate_variants(kind, s, grid_pair=pair)
            assert len(variants) == basics.VARIANT_COUNTS[kind]
            assert [v.direction for v in variants] == list(range(len(variants)))

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            basics.enumerate_variants("warp9", 0.5)

    def test_out_of_range_intensity_rejected(self):
        with pytest.raises(ValueError):
            basics.enumerate_variants("rotation", 1.5)


class TestApplyVariant:
    @pytest.mark.parametrize("kind", ["rotation", "shear", "perspective", "translate", "hue"])
    def test_zero_intensity_pixel_exact_identity(self, kind):
        x = rand_image()
        pair = (0.0, 0.0) if kind in basics.TWO_AXIS_KINDS else None
        for variant in basics.enumerate_variants(kind, 0.0, grid_pair=pair):
            assert torch.equal(basics.apply_variant(variant, x), x)

    @pytest.mark.parametrize("kind", ["brightness", "contrast", "saturation"])
    def test_zero_intensity_unit_factor_identity(self, kind):
        x = rand_image()
        for variant in basics.enumerate_variants(kind, 0.0):
            assert torch.equal(basics.apply_variant(variant, x), x)

    def test_crop_zero_intensity_full_frame(self):
        x = rand_image(32, 32)
        (variant,) = basics.enumerate_variants("crop", 0.0)
        assert torch.equal(basics.apply_variant(variant, x), x)

    def test_flip_is_involution(self):
        x = rand_image()
        for variant in basics.enumerate_variants("flip", 0.3):
            twice = basics.apply_variant(variant, basics.apply_variant(variant, x))
            assert torch.equal(twice, x)

    def test_solarize_full_intensity_constant_image(self):
        # hand rule: every pixel >= 0 inverts, 0.3 -> 0.7
        x = torch.full((3, 4, 4), 0.3)
        (variant,) = basics.enumerate_variants("solarize", 1.0)
        out = basics.apply_variant(variant, x)
        assert torch.allclose(out, torch.full((3, 4, 4), 0.7), atol=1e-7)

    def test_scaling_sizes_follow_rounding_rule(self):
        x = rand_image(37, 53)
        for s in (0.1, 0.33, 0.8):
            enlarge, reduce = basics.enumerate_variants("scaling", s)
            f = 1.0 + 1.5 * s
            assert basics.apply_variant(enlarge, x).shape[-2:] == \
                (int(round(f * 37)), int(round(f * 53)))
            assert basics.apply_variant(reduce, x).shape[-2:] == \
                (int(round(37 / f)), int(round(53 / f)))

    def test_scaling_variant_factors_are_inverses(self):
        for s in basics.intensity_grid(7):
            enlarge, reduce = basics.enumerate_variants("scaling", s)
            assert enlarge.params["factor"] * reduce.params["factor"] == pytest.approx(1.0)

    def test_crop_side_matches_area_formula(self):
        for s in (0.0, 0.25, 0.5, 1.0):
            (variant,) = basics.enumerate_variants("crop", s)
            out = basics.apply_variant(variant, rand_image(40, 40))
            side = out.shape[-1]
            assert out.shape[-2] == side
            assert side == min(40, max(1, round(math.sqrt((1 - 0.95 * s) * 40 * 40))))

    @pytest.mark.parametrize("kind", basics.KINDS)
    def test_output_stays_in_range(self, kind):
        x = rand_image(24, 24, seed=5)
        for s in (0.0, 0.4, 1.0):
            pair = (0.6, 0.3) if kind in basics.TWO_AXIS_KINDS else None
            for variant in basics.enumerate_variants(kind, s, grid_pair=pair):
                out = basics.apply_variant(variant, x)
                assert out.min() >= -1e-6 and out.max() <= 1.0 + 1e-6

    @pytest.mark.parametrize("kind", basics.KINDS)
    def test_deterministic(self, kind):
        x = rand_image(24, 24, seed=9)
        pair = (0.5, 0.2) if kind in basics.TWO_AXIS_KINDS else None
        for variant in basics.enumerate_variants(kind, 0.6, grid_pair=pair):
            assert torch.equal(basics.apply_variant(variant, x),
                               basics.apply_variant(variant, x))

    def test_batched_matches_single(self):
        xs = torch.stack([rand_image(seed=1), rand_image(seed=2)])
        for variant in basics.enumerate_variants("rotation", 0.25):
            batched = basics.apply_variant(variant, xs)
            singles = torch.stack([basics.apply_variant(variant, xs[0]),
                                   basics.apply_variant(variant, xs[1])])
            assert torch.allclose(batched, singles, atol=1e-6)

    def test_color_ops_preserve_shape(self):
        x = rand_image(20, 28)
        for kind in basics.COLOR_KINDS:
            for variant in basics.enumerate_variants(kind, 0.7):
                assert basics.apply_variant(variant, x).shape == x.shape


class TestVariantSerialization:
    def test_json_round_trip(self):
        variant = basics.enumerate_variants("shear", 0.4, grid_pair=(0.1, 0.9))[2]
        text = variant.to_json()
        parsed = json.loads(text)
        assert set(parsed) == {"kind", "s", "direction", "params"}
        assert basics.TransformVariant.from_json(text) == variant


class TestWarpBack:
    def test_flip_inverts_exactly(self):
        heat = torch.rand(1, 16, 16)
        for variant in basics.enumerate_variants("flip", 0.5):
            moved = basics.apply_variant(variant, heat.expand(3, 16, 16))[:1]
            assert torch.equal(basics.warp_back(variant, moved, (16, 16)), heat)

    def test_translate_round_trip_recovers_interior(self):
        heat = torch.zeros(1, 21, 21)
        heat[0, 8:13, 8:13] = 1.0
        variant = basics.TransformVariant("translate", 0.2, 0,
                                          {"frac_x": 4 / 21, "frac_y": 0.0})
        moved = basics.apply_variant(variant, heat)
        back = basics.warp_back(variant, moved, (21, 21))
        assert torch.allclose(back[0, 8:13, 8:13], torch.ones(5, 5), atol=1e-4)

    def test_scaling_returns_original_frame(self):
        heat = torch.rand(1, 16, 16)
        variant = basics.enumerate_variants("scaling", 0.5)[0]
        moved = basics.apply_variant(variant, heat.expand(3, 16, 16))[:1]
        assert basics.warp_back(variant, moved, (16, 16)).shape[-2:] == (16, 16)
