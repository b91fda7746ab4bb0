"""Fusion block and pyramid construction checks.

The zero-weight configuration has a closed form (every attention map is
the sigmoid of zero, so 0.5 everywhere) which is derived step by step
here and compared against the implementation. The attention bypass must
reduce to plain sums and means exactly.
"""
import numpy as np
import pytest

from posekit.fpn import (
    PYRAMID_STRIDES,
    Pyramid,
    TSFMWeights,
    make_tsfm_weights,
    make_tsfpn_weights,
    ts_fm_fuse,
    ts_fpn_forward,
)
from posekit.tensor import ConvParams


def _zero_weight_fusion_by_hand(f_h, f_l):
    """Walk the zero-weight block with every attention pinned at 0.5."""
    fh = f_h + 0.5 * f_l
    fl = f_l + 0.5 * f_h
    # Each rotated branch multiplies by 0.5 and rotates straight back, so
    # both branches contribute (0.5 fh, 0.5 fl).
    t1, t2 = 0.5 * fh, 0.5 * fl
    t3, t4 = 0.5 * fh, 0.5 * fl
    return ((t1 + t2) + (t3 + t4)) * 0.25


class TestFusionBlock:
    def test_zero_weights_match_hand_derivation(self):
        rng = np.random.default_rng(401)
        f_h = rng.standard_normal((2, 4, 4))
        f_l = rng.standard_normal((2, 4, 4))
        got = ts_fm_fuse(f_h, f_l, make_tsfm_weights())
        np.testing.assert_allclose(got, _zero_weight_fusion_by_hand(f_h, f_l), atol=1e-9)

    def test_zero_weights_collapse_to_scaled_sum(self):
        rng = np.random.default_rng(402)
        f_h = rng.standard_normal((2, 4, 4))
        f_l = rng.standard_normal((2, 4, 4))
        got = ts_fm_fuse(f_h, f_l, make_tsfm_weights())
        np.testing.assert_allclose(got, 0.375 * (f_h + f_l), atol=1e-9)

    def test_unit_attention_bypass_is_exact(self):
        rng = np.random.default_rng(403)
        f_h = rng.standard_normal((3, 5, 6))
        f_l = rng.standard_normal((3, 5, 6))
        got = ts_fm_fuse(f_h, f_l, make_tsfm_weights(), attention_override=1.0)
        stage_one = f_h + f_l
        np.testing.assert_array_equal(got, stage_one)
        enhanced_mean = ((f_h + f_l) + (f_l + f_h)) * 0.5
        np.testing.assert_array_equal(got, enhanced_mean)

    def test_zero_attention_bypass_blanks_output(self):
        rng = np.random.default_rng(404)
        f_h = rng.standard_normal((2, 4, 4))
        f_l = rng.standard_normal((2, 4, 4))
        got = ts_fm_fuse(f_h, f_l, make_tsfm_weights(), attention_override=0.0)
        np.testing.assert_array_equal(got, np.zeros_like(got))

    def test_random_weights_break_the_linear_form(self):
        rng = np.random.default_rng(405)
        f_h = rng.standard_normal((2, 8, 8))
        f_l = rng.standard_normal((2, 8, 8))
        got = ts_fm_fuse(f_h, f_l, make_tsfm_weights(rng))
        assert np.abs(got - 0.375 * (f_h + f_l)).max() > 1e-6

    def test_preserves_shape(self):
        rng = np.random.default_rng(406)
        for shape in ((1, 7, 9), (4, 12, 5), (3, 8, 8)):
            f_h = rng.standard_normal(shape)
            f_l = rng.standard_normal(shape)
            assert ts_fm_fuse(f_h, f_l, make_tsfm_weights(rng)).shape == shape

    def test_mismatched_inputs_raise(self):
        w = make_tsfm_weights()
        with pytest.raises(ValueError, match="must match"):
            ts_fm_fuse(np.zeros((2, 4, 4)), np.zeros((2, 4, 5)), w)

    def test_weight_validation(self):
        good = lambda: ConvParams(np.zeros((1, 2, 7, 7)), np.zeros(1), padding=3)
        with pytest.raises(ValueError, match="7x7"):
            TSFMWeights(
                ConvParams(np.zeros((1, 2, 5, 5)), np.zeros(1), padding=2),
                good(),
                good(),
            )
        with pytest.raises(ValueError, match="1 channel"):
            TSFMWeights(
                good(),
                ConvParams(np.zeros((2, 2, 7, 7)), np.zeros(2), padding=3),
                good(),
            )
        with pytest.raises(ValueError, match="pooled"):
            TSFMWeights(
                good(),
                good(),
                ConvParams(np.zeros((1, 4, 7, 7)), np.zeros(1), padding=3),
            )
        with pytest.raises(ValueError, match="shape preserving"):
            TSFMWeights(
                ConvParams(np.zeros((1, 2, 7, 7)), np.zeros(1), padding=0),
                good(),
                good(),
            )


class TestPyramid:
    def _backbone(self, rng, h, w, channels=(8, 16, 32)):
        return (
            rng.standard_normal((channels[0], h // 8, w // 8)),
            rng.standard_normal((channels[1], h // 16, w // 16)),
            rng.standard_normal((channels[2], h // 32, w // 32)),
        )

    def test_vga_levels_have_frozen_shapes(self):
        rng = np.random.default_rng(407)
        c3, c4, c5 = self._backbone(rng, 480, 640)
        w = make_tsfpn_weights(backbone_channels=(8, 16, 32), channels=16)
        pyr = ts_fpn_forward(c3, c4, c5, w)
        shapes = [m.shape for m in pyr.maps]
        assert shapes == [
            (16, 60, 80),
            (16, 30, 40),
            (16, 15, 20),
            (16, 8, 10),
            (16, 4, 5),
        ]
        assert pyr.strides == PYRAMID_STRIDES == (8, 16, 32, 64, 128)

    def test_repeat_forward_is_bit_identical(self):
        rng = np.random.default_rng(408)
        c3, c4, c5 = self._backbone(rng, 64, 96)
        w = make_tsfpn_weights(
            backbone_channels=(8, 16, 32), channels=8, rng=np.random.default_rng(9)
        )
        first = ts_fpn_forward(c3, c4, c5, w)
        second = ts_fpn_forward(c3, c4, c5, w)
        for a, b in zip(first.maps, second.maps):
            assert np.array_equal(a, b)

    def test_top_levels_derive_from_p5(self):
        """With zero down-convs the strided levels are exactly zero while
        the merged levels still carry signal."""
        rng = np.random.default_rng(409)
        c3, c4, c5 = self._backbone(rng, 64, 64)
        w = make_tsfpn_weights(
            backbone_channels=(8, 16, 32), channels=8, rng=np.random.default_rng(10)
        )
        w.down6.weight[:] = 0.0
        w.down7.weight[:] = 0.0
        pyr = ts_fpn_forward(c3, c4, c5, w)
        assert np.abs(pyr.maps[0]).max() > 0
        np.testing.assert_array_equal(pyr.maps[3], np.zeros_like(pyr.maps[3]))
        np.testing.assert_array_equal(pyr.maps[4], np.zeros_like(pyr.maps[4]))

    def test_non_dyadic_backbone_raises(self):
        rng = np.random.default_rng(410)
        c3 = rng.standard_normal((8, 8, 8))
        c4 = rng.standard_normal((16, 4, 4))
        c5 = rng.standard_normal((32, 3, 2))
        w = make_tsfpn_weights(backbone_channels=(8, 16, 32), channels=8)
        with pytest.raises(ValueError, match="dyadic"):
            ts_fpn_forward(c3, c4, c5, w)

    def test_weight_validation(self):
        with pytest.raises(ValueError, match="1x1"):
            w = make_tsfpn_weights(backbone_channels=(8, 16, 32), channels=8)
            TSFPNWeights_bad = type(w)
            TSFPNWeights_bad(
                lateral3=ConvParams(np.zeros((8, 8, 3, 3)), np.zeros(8), padding=1),
                lateral4=w.lateral4,
                lateral5=w.lateral5,
                fuse4=w.fuse4,
                fuse3=w.fuse3,
                down6=w.down6,
                down7=w.down7,
            )
        with pytest.raises(ValueError, match="stride-2"):
            w = make_tsfpn_weights(backbone_channels=(8, 16, 32), channels=8)
            type(w)(
                lateral3=w.lateral3,
                lateral4=w.lateral4,
                lateral5=w.lateral5,
                fuse4=w.fuse4,
                fuse3=w.fuse3,
                down6=ConvParams(np.zeros((8, 8, 3, 3)), np.zeros(8), stride=1, padding=1),
                down7=w.down7,
            )

    def test_pyramid_requires_five_maps(self):
        with pytest.raises(ValueError, match="expected 5"):
            Pyramid([np.zeros((1, 2, 2))] * 4)
