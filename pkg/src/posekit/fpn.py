"""Texture-shape feature pyramid: attention-fused top-down merging.

The fusion block mixes a fine (texture-rich) map with an upsampled coarse
(shape-rich) map in two stages. Stage one builds a single spatial
attention map from pooled channel statistics of both inputs and adds the
cross-weighted partner onto each map. Stage two repeats the idea in two
rotated views, one per spatial axis, so channel interactions are attended
along (C, H) and (C, W) planes; the four reweighted branches are rotated
back and averaged.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    ConvParams,
    channel_pool,
    concat_channels,
    conv2d,
    ensure_chw,
    rotate90,
    sigmoid,
    upsample_nearest2x,
)

PYRAMID_STRIDES = (8, 16, 32, 64, 128)


def _check_attention_conv(p, name):
    if p.kernel_h != 7 or p.kernel_w != 7:
        raise ValueError(f"{name} must use a 7x7 kernel, got {p.kernel_h}x{p.kernel_w}")
    if p.out_channels != 1:
        raise ValueError(f"{name} must output 1 channel, got {p.out_channels}")
    if p.in_channels != 2:
        raise ValueError(f"{name} must take the 2 pooled channels, got {p.in_channels}")
    if p.stride != 1 or p.padding != 3:
        raise ValueError(f"{name} must be stride 1 with padding 3 (shape preserving)")


@dataclass
class TSFMWeights:
    """Weights of one fusion block.

    spatial_conv scores the upright view; cross_conv_ch is shared by the
    two branches rotated about H (attending the (C, H) plane after the
    axes permute); cross_conv_cw likewise for the W-axis pair. All three
    map the 2 pooled channels to a single attention channel with 7x7
    kernels.
    """

    spatial_conv: ConvParams
    cross_conv_ch: ConvParams
    cross_conv_cw: ConvParams

    def __post_init__(self):
        _check_attention_conv(self.spatial_conv, "spatial_conv")
        _check_attention_conv(self.cross_conv_ch, "cross_conv_ch")
        _check_attention_conv(self.cross_conv_cw, "cross_conv_cw")


def _attention(pair, conv, override):
    if override is not None:
        return float(override)
    return sigmoid(conv2d(channel_pool(pair), conv))


def ts_fm_fuse(f_h, f_l, w, attention_override=None):
    """Fuse two equally shaped maps into one of the same shape.

    attention_override replaces every attention map with a constant, which
    is only meant for closed-form checks: 1.0 reduces stage one to plain
    addition and makes stage two return the mean of the enhanced maps.
    """
    f_h = ensure_chw(f_h, "texture map")
    f_l = ensure_chw(f_l, "shape map")
    if f_h.shape != f_l.shape:
        raise ValueError(f"fusion inputs must match, got {f_h.shape} vs {f_l.shape}")

    att = _attention(concat_channels([f_h, f_l]), w.spatial_conv, attention_override)
    fh = f_h + f_l * att
    fl = f_l + f_h * att

    def branch(axis, conv):
        rh = rotate90(fh, axis, "ccw")
        rl = rotate90(fl, axis, "ccw")
        a = _attention(concat_channels([rh, rl]), conv, attention_override)
        return (
            rotate90(rh * a, axis, "cw"),
            rotate90(rl * a, axis, "cw"),
        )

    t1, t2 = branch("h", w.cross_conv_ch)
    t3, t4 = branch("w", w.cross_conv_cw)
    # Pairwise summation keeps the attention==1 bypass exactly equal to the
    # mean of the two enhanced maps.
    return ((t1 + t2) + (t3 + t4)) * 0.25


@dataclass
class TSFPNWeights:
    """Laterals, two fusion blocks, and two downsampling convolutions."""

    lateral3: ConvParams
    lateral4: ConvParams
    lateral5: ConvParams
    fuse4: TSFMWeights
    fuse3: TSFMWeights
    down6: ConvParams
    down7: ConvParams

    def __post_init__(self):
        for name in ("lateral3", "lateral4", "lateral5"):
            p = getattr(self, name)
            if p.kernel_h != 1 or p.kernel_w != 1:
                raise ValueError(f"{name} must be a 1x1 conv")
        for name in ("down6", "down7"):
            p = getattr(self, name)
            if p.kernel_h != 3 or p.kernel_w != 3 or p.stride != 2 or p.padding != 1:
                raise ValueError(f"{name} must be a 3x3 stride-2 conv with padding 1")

    @property
    def channels(self):
        return self.lateral3.out_channels


@dataclass
class Pyramid:
    """Five maps at strides 8..128 relative to the input image."""

    maps: list
    strides: tuple = PYRAMID_STRIDES

    def __post_init__(self):
        if len(self.maps) != len(self.strides):
            raise ValueError(f"expected {len(self.strides)} maps, got {len(self.maps)}")


def ts_fpn_forward(c3, c4, c5, w):
    """Build the five-level pyramid from three backbone stages.

    The backbone stages must halve exactly level to level; the two merges
    fuse each lateral with the upsampled coarser output, and the top two
    levels come from strided convolutions.
    """
    c3 = ensure_chw(c3, "c3")
    c4 = ensure_chw(c4, "c4")
    c5 = ensure_chw(c5, "c5")
    for fine, coarse, names in ((c3, c4, "c3/c4"), (c4, c5, "c4/c5")):
        if fine.shape[1] != 2 * coarse.shape[1] or fine.shape[2] != 2 * coarse.shape[2]:
            raise ValueError(
                f"backbone stages {names} are not dyadic: "
                f"{fine.shape[1:]} vs {coarse.shape[1:]}"
            )
    p5 = conv2d(c5, w.lateral5)
    p4 = ts_fm_fuse(conv2d(c4, w.lateral4), upsample_nearest2x(p5), w.fuse4)
    p3 = ts_fm_fuse(conv2d(c3, w.lateral3), upsample_nearest2x(p4), w.fuse3)
    p6 = conv2d(p5, w.down6)
    p7 = conv2d(p6, w.down7)
    return Pyramid([p3, p4, p5, p6, p7])


def _conv_init(rng, out_c, in_c, k, stride=1, padding=0, groups=1):
    shape = (out_c, in_c // groups, k, k)
    if rng is None:
        weight = np.zeros(shape)
    else:
        fan_in = (in_c // groups) * k * k
        weight = rng.standard_normal(shape) / np.sqrt(fan_in)
    return ConvParams(weight, np.zeros(out_c), stride=stride, padding=padding, groups=groups)


def make_tsfm_weights(rng=None):
    return TSFMWeights(
        spatial_conv=_conv_init(rng, 1, 2, 7, padding=3),
        cross_conv_ch=_conv_init(rng, 1, 2, 7, padding=3),
        cross_conv_cw=_conv_init(rng, 1, 2, 7, padding=3),
    )


def make_tsfpn_weights(backbone_channels=(512, 1024, 2048), channels=256, rng=None):
    """Zero weights by default; pass a Generator for a small random init."""
    b3, b4, b5 = backbone_channels
    return TSFPNWeights(
        lateral3=_conv_init(rng, channels, b3, 1),
        lateral4=_conv_init(rng, channels, b4, 1),
        lateral5=_conv_init(rng, channels, b5, 1),
        fuse4=make_tsfm_weights(rng),
        fuse3=make_tsfm_weights(rng),
        down6=_conv_init(rng, channels, channels, 3, stride=2, padding=1),
        down7=_conv_init(rng, channels, channels, 3, stride=2, padding=1),
    )
