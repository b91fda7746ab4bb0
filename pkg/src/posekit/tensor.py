"""Dense CHW tensor kernels used by the forward passes.

Feature maps are plain numpy arrays laid out channel-major with shape
(channels, height, width). There is no batch dimension; batching is a loop
over images. The reference path computes everything in float64; inputs of
other dtypes are promoted on entry.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def ensure_chw(x, name="feature map"):
    """Promote to a float64 rank-3 array, rejecting anything else."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"{name} must be rank-3 (C, H, W), got shape {x.shape}")
    return x


@dataclass
class ConvParams:
    """Weights of one 2D convolution.

    weight has shape (out_channels, in_channels // groups, kh, kw) and bias
    has shape (out_channels,). Padding is symmetric zero padding on both
    spatial axes.
    """

    weight: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 4:
            raise ValueError(f"conv weight must be rank-4, got shape {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError(
                f"conv bias shape {self.bias.shape} does not match "
                f"{self.weight.shape[0]} output channels"
            )
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ValueError(f"padding must be >= 0, got {self.padding}")
        if self.groups < 1:
            raise ValueError(f"groups must be >= 1, got {self.groups}")
        if self.out_channels % self.groups:
            raise ValueError(
                f"{self.out_channels} output channels not divisible by {self.groups} groups"
            )

    @property
    def out_channels(self):
        return self.weight.shape[0]

    @property
    def in_channels(self):
        return self.weight.shape[1] * self.groups

    @property
    def kernel_h(self):
        return self.weight.shape[2]

    @property
    def kernel_w(self):
        return self.weight.shape[3]


def conv2d(x, p):
    """Strided 2D cross-correlation with symmetric zero padding.

    Output spatial size per axis is floor((size + 2*padding - kernel) / stride) + 1.
    """
    x = ensure_chw(x)
    c, h, w = x.shape
    if p.in_channels != c:
        raise ValueError(f"conv expects {p.in_channels} input channels, got {c}")
    if c % p.groups:
        raise ValueError(f"{c} input channels not divisible by {p.groups} groups")
    kh, kw = p.kernel_h, p.kernel_w
    hp, wp = h + 2 * p.padding, w + 2 * p.padding
    if kh > hp or kw > wp:
        raise ValueError(
            f"kernel ({kh}x{kw}) larger than padded input ({hp}x{wp})"
        )
    if p.padding:
        x = np.pad(x, ((0, 0), (p.padding, p.padding), (p.padding, p.padding)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, :: p.stride, :: p.stride]
    oh, ow = win.shape[1], win.shape[2]
    g = p.groups
    if g == 1:
        out = np.einsum("oikl,ihwkl->ohw", p.weight, win, optimize=True)
    else:
        wg = p.weight.reshape(g, p.out_channels // g, c // g, kh, kw)
        xg = win.reshape(g, c // g, oh, ow, kh, kw)
        out = np.einsum("goikl,gihwkl->gohw", wg, xg, optimize=True)
        out = out.reshape(p.out_channels, oh, ow)
    return out + p.bias[:, None, None]


def depthwise_separable_conv(x, dw, pw):
    """Per-channel spatial conv followed by a 1x1 channel-mixing conv."""
    x = ensure_chw(x)
    if dw.groups != x.shape[0] or dw.out_channels != x.shape[0]:
        raise ValueError(
            f"depthwise stage must have groups == channels == {x.shape[0]}, "
            f"got groups={dw.groups}, out={dw.out_channels}"
        )
    if pw.kernel_h != 1 or pw.kernel_w != 1:
        raise ValueError(
            f"pointwise stage must use a 1x1 kernel, got {pw.kernel_h}x{pw.kernel_w}"
        )
    return conv2d(conv2d(x, dw), pw)


@dataclass
class GroupNormParams:
    """Per-channel affine parameters for group normalization."""

    groups: int
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.groups < 1:
            raise ValueError(f"groups must be >= 1, got {self.groups}")
        if self.gamma.ndim != 1 or self.gamma.shape != self.beta.shape:
            raise ValueError("gamma and beta must be 1-D arrays of equal length")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")


def group_norm(x, p):
    """Normalize channels group-wise over (group, H, W), then apply affine."""
    x = ensure_chw(x)
    c, h, w = x.shape
    if p.gamma.shape[0] != c:
        raise ValueError(f"group norm affine has {p.gamma.shape[0]} channels, input has {c}")
    if c % p.groups:
        raise ValueError(f"{c} channels not divisible by {p.groups} groups")
    xg = x.reshape(p.groups, c // p.groups, h, w)
    mean = xg.mean(axis=(1, 2, 3), keepdims=True)
    var = xg.var(axis=(1, 2, 3), keepdims=True)
    xg = (xg - mean) / np.sqrt(var + p.eps)
    out = xg.reshape(c, h, w)
    return p.gamma[:, None, None] * out + p.beta[:, None, None]


def sigmoid(x):
    """Numerically stable logistic function, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def swish(x):
    x = np.asarray(x, dtype=np.float64)
    return x * sigmoid(x)


def add(x, y):
    """Elementwise sum; shapes must match exactly (no broadcasting)."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch in add: {x.shape} vs {y.shape}")
    return x + y


def mul(x, y):
    """Elementwise product; second operand may be a scalar."""
    x = np.asarray(x, dtype=np.float64)
    if np.ndim(y) == 0:
        return x * float(y)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch in mul: {x.shape} vs {y.shape}")
    return x * y


def channel_pool(x):
    """Collapse channels to two: per-pixel max (channel 0) and mean (channel 1)."""
    x = ensure_chw(x)
    return np.stack([x.max(axis=0), x.mean(axis=0)])


def rotate90(x, axis, direction):
    """Rotate the tensor a quarter turn about one spatial axis.

    axis "h" permutes the (C, W) plane and keeps H; axis "w" permutes the
    (C, H) plane and keeps W. direction is "ccw" or "cw"; the two are exact
    inverses and four applications of either are the identity.
    """
    x = ensure_chw(x)
    if axis == "h":
        axes = (0, 2)
    elif axis == "w":
        axes = (0, 1)
    else:
        raise ValueError(f"axis must be 'h' or 'w', got {axis!r}")
    if direction == "ccw":
        k = 1
    elif direction == "cw":
        k = -1
    else:
        raise ValueError(f"direction must be 'ccw' or 'cw', got {direction!r}")
    return np.rot90(x, k, axes=axes)


def upsample_nearest2x(x):
    """Duplicate every pixel 2x along both spatial axes."""
    x = ensure_chw(x)
    return x.repeat(2, axis=1).repeat(2, axis=2)


def concat_channels(xs):
    """Stack feature maps along the channel axis; spatial dims must agree."""
    xs = [ensure_chw(x) for x in xs]
    if not xs:
        raise ValueError("concat_channels needs at least one input")
    hw = xs[0].shape[1:]
    for x in xs[1:]:
        if x.shape[1:] != hw:
            raise ValueError(f"spatial mismatch in concat: {x.shape[1:]} vs {hw}")
    return np.concatenate(xs, axis=0)


def coord_channels(h, w):
    """Two-channel coordinate grid in [-1, 1].

    Channel 0 ramps along columns (x), channel 1 along rows (y). Both
    endpoints hit -1 and 1 exactly; a singleton axis yields zeros.
    """
    if h < 1 or w < 1:
        raise ValueError(f"coordinate grid needs positive dims, got {h}x{w}")
    xs = np.zeros(w) if w == 1 else 2.0 * np.arange(w) / (w - 1) - 1.0
    ys = np.zeros(h) if h == 1 else 2.0 * np.arange(h) / (h - 1) - 1.0
    out = np.empty((2, h, w))
    out[0] = xs[None, :]
    out[1] = ys[:, None]
    return out
